//! Parametric maps: frozen generator, encoder, perceptual feature nets and
//! the identity embedder.

mod generator;
mod image;
mod mlp;

pub use generator::{GeneratorSpec, LatentCode, RENDERED_COORDS};
pub use image::{images_to_tensor, tensor_to_images, Image};
pub use mlp::{BoundMlp, Mlp, LEAKY_SLOPE};

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Hidden widths of the encoder.
pub const ENCODER_HIDDEN: [usize; 2] = [128, 64];
/// Widths of the three feature-pyramid layers.
pub const FEATURE_DIMS: [usize; 3] = [64, 32, 16];

const NORM_EPS: f64 = 1e-10;

/// Image → latent perceptron, `size² → 128 → 64 → latent_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub mlp: Mlp,
}

impl Encoder {
    pub fn new(image_size: usize, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let dims = [
            image_size * image_size,
            ENCODER_HIDDEN[0],
            ENCODER_HIDDEN[1],
            latent_dim,
        ];
        Encoder {
            mlp: Mlp::init(&dims, false, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.mlp.dims().last().expect("non-empty")
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.dims()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        BoundEncoder(self.mlp.bind(tape, trainable))
    }

    pub fn bind_with(
        &self,
        tape: &mut Tape,
        f: impl FnMut(&mut Tape, usize, &Tensor) -> Var,
    ) -> BoundEncoder {
        BoundEncoder(self.mlp.bind_with(tape, f))
    }

    pub fn encode(&self, x: &Image) -> Result<LatentCode> {
        Ok(self.encode_batch(&[x])?.remove(0))
    }

    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<LatentCode>> {
        let mut tape = Tape::new();
        let enc = self.bind(&mut tape, false);
        let x = tape.constant(images_to_tensor(images)?);
        let w = enc.forward(&mut tape, x)?;
        let t = tape.value(w);
        Ok((0..t.rows())
            .map(|i| LatentCode(t.row(i).to_vec()))
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct BoundEncoder(pub BoundMlp);

impl BoundEncoder {
    /// `[batch, size²]` pixels → `[batch, latent_dim]` latents.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let centered = tape.add_scalar(x, -0.5);
        Ok(*self.0.forward(tape, centered)?.last().expect("layers"))
    }

    pub fn params(&self) -> &[Var] {
        self.0.params()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureRole {
    /// Fixed perceptual net H.
    Fixed,
    /// Trainable twin Ĥ.
    Trainable,
    /// Fixed identity embedder R.
    Identity,
}

/// Three-layer feature pyramid, `size² → 64 → 32 → 16`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet {
    pub role: FeatureRole,
    pub mlp: Mlp,
}

impl FeatureNet {
    pub fn new(image_size: usize, role: FeatureRole, rng: &mut impl Rng) -> Self {
        let dims = [
            image_size * image_size,
            FEATURE_DIMS[0],
            FEATURE_DIMS[1],
            FEATURE_DIMS[2],
        ];
        FeatureNet {
            role,
            mlp: Mlp::init(&dims, true, rng),
        }
    }

    /// Trainable copy with identical weights.
    pub fn twin(&self) -> FeatureNet {
        FeatureNet {
            role: FeatureRole::Trainable,
            mlp: self.mlp.clone(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundFeatureNet {
        BoundFeatureNet(self.mlp.bind(tape, trainable))
    }

    pub fn bind_with(
        &self,
        tape: &mut Tape,
        f: impl FnMut(&mut Tape, usize, &Tensor) -> Var,
    ) -> BoundFeatureNet {
        BoundFeatureNet(self.mlp.bind_with(tape, f))
    }

    /// All three layer activations for a batch of images, off-tape.
    pub fn features(&self, images: &[&Image]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let x = tape.constant(images_to_tensor(images)?);
        let feats = net.forward(&mut tape, x)?;
        Ok(feats.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

#[derive(Clone, Debug)]
pub struct BoundFeatureNet(pub BoundMlp);

impl BoundFeatureNet {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let centered = tape.add_scalar(x, -0.5);
        self.0.forward(tape, centered)
    }

    pub fn params(&self) -> &[Var] {
        self.0.params()
    }
}

/// Divides each row by its Euclidean norm (with a small floor).
pub fn unit_rows(tape: &mut Tape, a: Var) -> Result<Var> {
    let sq = tape.square(a);
    let s = tape.sum_axis(sq, 1)?;
    let s = tape.add_scalar(s, NORM_EPS);
    let n = tape.sqrt(s)?;
    tape.div(a, n)
}

/// Per-row perceptual distance between two feature stacks: for each layer,
/// unit-normalize each row, take the mean squared difference, then sum over
/// layers. Returns `[batch, 1]`.
pub fn lpips_rows(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<Var> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!(
            "feature stacks differ in depth: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&fa, &fb) in a.iter().zip(b) {
        let na = unit_rows(tape, fa)?;
        let nb = unit_rows(tape, fb)?;
        let d = tape.sub(na, nb)?;
        let d2 = tape.square(d);
        let m = tape.mean_axis(d2, 1)?;
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("non-empty"))
}

fn require_perceptual(h: &FeatureNet) -> Result<()> {
    if h.role == FeatureRole::Identity {
        return Err(Error::Invalid(
            "the identity embedder is not a perceptual feature net; use identity_embed".into(),
        ));
    }
    Ok(())
}

/// LPIPS-style distance between two images under feature net `h`.
pub fn lpips_distance(h: &FeatureNet, a: &Image, b: &Image) -> Result<f64> {
    require_perceptual(h)?;
    let mut tape = Tape::new();
    let net = h.bind(&mut tape, false);
    let xa = tape.constant(images_to_tensor(&[a])?);
    let xb = tape.constant(images_to_tensor(&[b])?);
    let fa = net.forward(&mut tape, xa)?;
    let fb = net.forward(&mut tape, xb)?;
    let d = lpips_rows(&mut tape, &fa, &fb)?;
    Ok(tape.value(d).item())
}

/// Final-layer activation of `r`, scaled to unit Euclidean norm. A zero
/// activation maps to the first basis vector.
pub fn identity_embed(r: &FeatureNet, x: &Image) -> Result<Vec<f64>> {
    if r.role != FeatureRole::Identity {
        return Err(Error::Invalid(format!(
            "identity_embed needs the identity embedder, got role {:?}",
            r.role
        )));
    }
    let feats = r.features(&[x])?;
    let last = feats.last().expect("layers").data().to_vec();
    Ok(unit_or_basis(last))
}

pub(crate) fn unit_or_basis(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

use super::image::{tensor_to_images, Image};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Latent vector consumed by the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Number of latent coordinates the renderer reads.
pub const RENDERED_COORDS: usize = 8;

/// Frozen procedural renderer: two smooth radial blobs over a background.
///
/// Coordinates 0..8 pass through a logistic sigmoid and map to blob-1
/// x, y, width, brightness; blob-2 x, y, width; background level. Extra
/// latent coordinates (when `latent_dim > 8`) are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub size: usize,
    /// Distance from the border to the extreme blob centers, in pixels.
    pub margin: f64,
    pub width: (f64, f64),
    pub brightness: (f64, f64),
    pub second_brightness: f64,
    pub background: (f64, f64),
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            latent_dim: 8,
            size: 16,
            margin: 2.0,
            width: (1.2, 3.0),
            brightness: (0.25, 0.45),
            second_brightness: 0.3,
            background: (0.05, 0.25),
        }
    }
}

impl GeneratorSpec {
    pub fn new(latent_dim: usize, size: usize) -> Result<Self> {
        if latent_dim < RENDERED_COORDS {
            return Err(Error::Invalid(format!(
                "generator needs latent_dim >= {RENDERED_COORDS}, got {latent_dim}"
            )));
        }
        if size < 4 {
            return Err(Error::Invalid(format!("image size {size} is too small")));
        }
        Ok(GeneratorSpec {
            latent_dim,
            size,
            ..GeneratorSpec::default()
        })
    }

    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    /// Renders a `[batch, latent_dim]` latent tensor into `[batch, size²]`
    /// pixels, differentiably.
    pub fn render(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        match tape.shape(w) {
            [_, d] if *d == self.latent_dim => {}
            s => {
                return Err(Error::ShapeMismatch {
                    op: "generate",
                    lhs: s.to_vec(),
                    rhs: vec![self.latent_dim],
                })
            }
        }
        let n = self.size;
        let xs = Tensor::from_fn(&[1, n * n], |k| (k % n) as f64);
        let ys = Tensor::from_fn(&[1, n * n], |k| (k / n) as f64);
        let xs = tape.constant(xs);
        let ys = tape.constant(ys);

        let s = tape.sigmoid(w);
        let span = (n - 1) as f64 - 2.0 * self.margin;
        let affine = |tape: &mut Tape, k: usize, lo: f64, len: f64| -> Result<Var> {
            let c = tape.slice_cols(s, k, 1)?;
            let scaled = tape.mul_scalar(c, len);
            Ok(tape.add_scalar(scaled, lo))
        };
        let (wlo, whi) = self.width;
        let (blo, bhi) = self.brightness;
        let (glo, ghi) = self.background;

        let cx1 = affine(tape, 0, self.margin, span)?;
        let cy1 = affine(tape, 1, self.margin, span)?;
        let wd1 = affine(tape, 2, wlo, whi - wlo)?;
        let am1 = affine(tape, 3, blo, bhi - blo)?;
        let cx2 = affine(tape, 4, self.margin, span)?;
        let cy2 = affine(tape, 5, self.margin, span)?;
        let wd2 = affine(tape, 6, wlo, whi - wlo)?;
        let bg = affine(tape, 7, glo, ghi - glo)?;

        let b1 = blob(tape, xs, ys, cx1, cy1, wd1)?;
        let b1 = tape.mul(b1, am1)?;
        let b2 = blob(tape, xs, ys, cx2, cy2, wd2)?;
        let b2 = tape.mul_scalar(b2, self.second_brightness);
        let sum = tape.add(b1, b2)?;
        let img = tape.add(sum, bg)?;
        Ok(tape.clamp(img, 0.0, 1.0))
    }

    pub fn generate(&self, w: &LatentCode) -> Result<Image> {
        Ok(self.generate_batch(std::slice::from_ref(w))?.remove(0))
    }

    pub fn generate_batch(&self, latents: &[LatentCode]) -> Result<Vec<Image>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let mut data = Vec::with_capacity(latents.len() * self.latent_dim);
        for w in latents {
            if w.dim() != self.latent_dim {
                return Err(Error::ShapeMismatch {
                    op: "generate",
                    lhs: vec![w.dim()],
                    rhs: vec![self.latent_dim],
                });
            }
            data.extend_from_slice(&w.0);
        }
        let mut tape = Tape::new();
        let wv = tape.constant(Tensor::matrix(latents.len(), self.latent_dim, data)?);
        let out = self.render(&mut tape, wv)?;
        tensor_to_images(tape.value(out), self.size)
    }
}

/// exp(−((x−cx)² + (y−cy)²) / (2·width²)) over the pixel grid.
fn blob(tape: &mut Tape, xs: Var, ys: Var, cx: Var, cy: Var, width: Var) -> Result<Var> {
    let dx = tape.sub(xs, cx)?;
    let dy = tape.sub(ys, cy)?;
    let dx2 = tape.square(dx);
    let dy2 = tape.square(dy);
    let d2 = tape.add(dx2, dy2)?;
    let w2 = tape.square(width);
    let denom = tape.mul_scalar(w2, 2.0);
    let q = tape.div(d2, denom)?;
    let nq = tape.neg(q);
    Ok(tape.exp(nq))
}

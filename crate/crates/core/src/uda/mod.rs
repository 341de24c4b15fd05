//! Source loss, the discrepancy `d_st`, the alternating min–max training
//! loop and the empirical audit of the target-risk bound.

mod audit;
mod train;

pub use audit::{audit_bound, AuditConfig, BoundAuditReport};
pub use train::{train, LogRow, TrainData, TrainLog, TrainState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{AdamState, Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fdiv::FDivergence;
use crate::nets::{
    images_to_tensor, lpips_rows, tensor_to_images, unit_rows, BoundEncoder, BoundFeatureNet,
    Encoder, FeatureNet, FeatureRole, GeneratorSpec, Image, Mlp,
};
use crate::synthdeg::mix_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Pixel reconstruction weight.
    pub lambda1: f64,
    /// Perceptual weight.
    pub lambda2: f64,
    /// Identity weight.
    pub lambda3: f64,
    /// Discrepancy weight.
    pub lambda_uda: f64,
    pub divergence: FDivergence,
    pub batch_size: usize,
    pub iterations: usize,
    /// Ascent steps on Ĥ per outer iteration.
    pub inner_steps: usize,
    pub lr_encoder: f64,
    pub lr_hhat: f64,
    /// Standard deviation of the seeded perturbation applied to Ĥ before the
    /// first iteration when it still equals H. At Ĥ = H every ℓ̂ sits at its
    /// minimum, so the ascent gradient is exactly zero and Ĥ would never move.
    pub hhat_jitter: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 0.8,
            lambda3: 1.0,
            lambda_uda: 1.0,
            divergence: FDivergence::PearsonChi2,
            batch_size: 32,
            iterations: 3000,
            inner_steps: 1,
            lr_encoder: 1e-3,
            lr_hhat: 1e-4,
            hhat_jitter: 1e-2,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda_uda", self.lambda_uda),
            ("lr_encoder", self.lr_encoder),
            ("lr_hhat", self.lr_hhat),
            ("hhat_jitter", self.hhat_jitter),
        ];
        for (k, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{k} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be > 0".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

/// Which network a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Net {
    Encoder,
    H,
    HHat,
    R,
}

impl Net {
    pub const ALL: [Net; 4] = [Net::Encoder, Net::H, Net::HHat, Net::R];

    pub fn prefix(self) -> &'static str {
        match self {
            Net::Encoder => "encoder",
            Net::H => "h",
            Net::HHat => "h_hat",
            Net::R => "r",
        }
    }
}

/// G (frozen renderer), E, H, Ĥ and R.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub generator: GeneratorSpec,
    pub encoder: Encoder,
    pub h: FeatureNet,
    pub h_hat: FeatureNet,
    pub r: FeatureNet,
}

#[derive(Clone, Debug)]
pub struct BoundNets {
    pub encoder: BoundEncoder,
    pub h: BoundFeatureNet,
    pub h_hat: BoundFeatureNet,
    pub r: BoundFeatureNet,
}

impl Networks {
    /// Seeded initialization; Ĥ starts as an exact copy of H.
    pub fn init(generator: GeneratorSpec, seed: u64) -> Self {
        let rng = |tag: u64| ChaCha8Rng::seed_from_u64(mix_seed(seed, tag));
        let size = generator.size;
        let encoder = Encoder::new(size, generator.latent_dim, &mut rng(0xE1));
        let h = FeatureNet::new(size, FeatureRole::Fixed, &mut rng(0x41));
        let r = FeatureNet::new(size, FeatureRole::Identity, &mut rng(0x52));
        Networks {
            generator,
            encoder,
            h_hat: h.twin(),
            h,
            r,
        }
    }

    pub fn mlp(&self, net: Net) -> &Mlp {
        match net {
            Net::Encoder => &self.encoder.mlp,
            Net::H => &self.h.mlp,
            Net::HHat => &self.h_hat.mlp,
            Net::R => &self.r.mlp,
        }
    }

    /// Binds every network; those listed in `trainable` become leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: &[Net]) -> BoundNets {
        self.bind_with(tape, |tape, net, _, t| {
            if trainable.contains(&net) {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    pub fn bind_with(
        &self,
        tape: &mut Tape,
        mut f: impl FnMut(&mut Tape, Net, usize, &Tensor) -> Var,
    ) -> BoundNets {
        BoundNets {
            encoder: self
                .encoder
                .bind_with(tape, |tape, i, t| f(tape, Net::Encoder, i, t)),
            h: self.h.bind_with(tape, |tape, i, t| f(tape, Net::H, i, t)),
            h_hat: self
                .h_hat
                .bind_with(tape, |tape, i, t| f(tape, Net::HHat, i, t)),
            r: self.r.bind_with(tape, |tape, i, t| f(tape, Net::R, i, t)),
        }
    }

    /// G∘E over a batch, off-tape.
    pub fn reconstruct_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let e = self.encoder.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = reconstruct(&mut tape, &self.generator, &e, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn reconstruct(&self, images: &[&Image]) -> Result<Vec<Image>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let y = self.reconstruct_tensor(&images_to_tensor(images)?)?;
        tensor_to_images(&y, self.generator.size)
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        for net in Net::ALL {
            ck.insert_group(net.prefix(), self.mlp(net).tensors());
        }
    }

    pub fn from_checkpoint(generator: GeneratorSpec, ck: &Checkpoint) -> Result<Self> {
        let load = |net: Net, activate_last: bool| -> Result<Mlp> {
            let ts = ck.group(net.prefix());
            if ts.is_empty() {
                return Err(Error::Checkpoint(format!("no '{}' tensors", net.prefix())));
            }
            Mlp::from_tensors(ts, activate_last)
        };
        let encoder = Encoder {
            mlp: load(Net::Encoder, false)?,
        };
        let pixels = generator.pixels();
        if encoder.input_dim() != pixels || encoder.latent_dim() != generator.latent_dim {
            return Err(Error::Checkpoint(format!(
                "encoder maps {} -> {}, but the configuration needs {} -> {}",
                encoder.input_dim(),
                encoder.latent_dim(),
                pixels,
                generator.latent_dim
            )));
        }
        let feature = |net: Net, role: FeatureRole| -> Result<FeatureNet> {
            let mlp = load(net, true)?;
            if mlp.dims()[0] != pixels {
                return Err(Error::Checkpoint(format!(
                    "'{}' expects {} inputs, configuration has {pixels}",
                    net.prefix(),
                    mlp.dims()[0]
                )));
            }
            Ok(FeatureNet { role, mlp })
        };
        let h = feature(Net::H, FeatureRole::Fixed)?;
        let h_hat = feature(Net::HHat, FeatureRole::Trainable)?;
        if h.mlp.shapes() != h_hat.mlp.shapes() {
            return Err(Error::Checkpoint("Ĥ and H differ in architecture".into()));
        }
        Ok(Networks {
            generator,
            encoder,
            h,
            h_hat,
            r: feature(Net::R, FeatureRole::Identity)?,
        })
    }
}

/// Adds seeded `N(0, std²)` noise to every parameter of `mlp`.
pub(crate) fn jitter(mlp: &mut Mlp, std: f64, seed: u64) {
    if std == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).expect("finite std");
    for t in mlp.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x += noise.sample(&mut rng));
    }
}

/// Renders G(E(x)) for a `[batch, pixels]` input.
pub fn reconstruct(tape: &mut Tape, g: &GeneratorSpec, e: &BoundEncoder, x: Var) -> Result<Var> {
    let w = e.forward(tape, x)?;
    g.render(tape, w)
}

/// λ1·pixel MSE + λ2·perceptual distance + λ3·identity-embedding MSE
/// between reconstructions and their references, averaged over the batch.
/// Terms with zero weight are skipped.
pub fn source_loss_var(
    tape: &mut Tape,
    b: &BoundNets,
    recon: Var,
    refs: Var,
    w: LossWeights,
) -> Result<Var> {
    let diff = tape.sub(recon, refs)?;
    let sq = tape.square(diff);
    let pix = tape.mean(sq);
    let mut total = tape.mul_scalar(pix, w.lambda1);
    if w.lambda2 != 0.0 {
        let fa = b.h.forward(tape, recon)?;
        let fb = b.h.forward(tape, refs)?;
        let rows = lpips_rows(tape, &fa, &fb)?;
        let lp = tape.mean(rows);
        let lp = tape.mul_scalar(lp, w.lambda2);
        total = tape.add(total, lp)?;
    }
    if w.lambda3 != 0.0 {
        let ea = b.r.forward(tape, recon)?;
        let eb = b.r.forward(tape, refs)?;
        let ua = unit_rows(tape, *ea.last().expect("layers"))?;
        let ub = unit_rows(tape, *eb.last().expect("layers"))?;
        let d = tape.sub(ua, ub)?;
        let d2 = tape.square(d);
        let id = tape.mean(d2);
        let id = tape.mul_scalar(id, w.lambda3);
        total = tape.add(total, id)?;
    }
    Ok(total)
}

/// Per-image ℓ̂ between the Ĥ and H feature stacks of the same images,
/// `[batch, 1]`.
pub fn discrepancy_rows(tape: &mut Tape, b: &BoundNets, images: Var) -> Result<Var> {
    let fh = b.h_hat.forward(tape, images)?;
    let f = b.h.forward(tape, images)?;
    lpips_rows(tape, &fh, &f)
}

/// `mean_src ℓ̂ − mean_trg φ*(ℓ̂)` over reconstructions stacked as
/// `[src; trg]`, split after `n_src` rows.
pub fn d_st_var(
    tape: &mut Tape,
    b: &BoundNets,
    recon: Var,
    n_src: usize,
    div: FDivergence,
) -> Result<Var> {
    let rows = tape.shape(recon)[0];
    if n_src == 0 || n_src >= rows {
        return Err(Error::Invalid(format!(
            "d_st needs nonempty source and target batches, got {n_src} of {rows} rows"
        )));
    }
    let l = discrepancy_rows(tape, b, recon)?;
    let ls = tape.slice_rows(l, 0, n_src)?;
    let lt = tape.slice_rows(l, n_src, rows - n_src)?;
    let ms = tape.mean(ls);
    let ct = div.conjugate_var(tape, lt)?;
    let mt = tape.mean(ct);
    tape.sub(ms, mt)
}

fn stacked(src: &[&Image], trg: &[&Image]) -> Result<Tensor> {
    if src.is_empty() || trg.is_empty() {
        return Err(Error::Invalid(
            "d_st needs nonempty source and target batches".into(),
        ));
    }
    let all: Vec<&Image> = src.iter().chain(trg).copied().collect();
    images_to_tensor(&all)
}

/// Source loss of the current encoder on a batch of source images.
pub fn source_loss(nets: &Networks, batch: &[&Image], w: LossWeights) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("source_loss needs a nonempty batch".into()));
    }
    let mut tape = Tape::new();
    let b = nets.bind(&mut tape, &[]);
    let x = tape.constant(images_to_tensor(batch)?);
    let recon = reconstruct(&mut tape, &nets.generator, &b.encoder, x)?;
    let l = source_loss_var(&mut tape, &b, recon, x, w)?;
    Ok(tape.value(l).item())
}

/// Signed discrepancy `d_st` of the current E, H, Ĥ on a pair of batches.
pub fn d_st(nets: &Networks, src: &[&Image], trg: &[&Image], div: FDivergence) -> Result<f64> {
    let mut tape = Tape::new();
    let b = nets.bind(&mut tape, &[]);
    let x = tape.constant(stacked(src, trg)?);
    let recon = reconstruct(&mut tape, &nets.generator, &b.encoder, x)?;
    let d = d_st_var(&mut tape, &b, recon, src.len(), div)?;
    Ok(tape.value(d).item())
}

/// One ascent step on Ĥ with E, G, H frozen, given precomputed
/// reconstructions `[src; trg]`. Returns `d_st` before the step.
pub(crate) fn ascend_h_hat(
    nets: &mut Networks,
    recon: &Tensor,
    n_src: usize,
    div: FDivergence,
    adam: &mut AdamState,
) -> Result<f64> {
    let mut tape = Tape::new();
    let b = nets.bind(&mut tape, &[Net::HHat]);
    let y = tape.constant(recon.clone());
    let d = d_st_var(&mut tape, &b, y, n_src, div)?;
    let value = tape.value(d).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("d_st in the inner step".into()));
    }
    let mut grads = tape.backward(d)?;
    let neg: Vec<Tensor> = b
        .h_hat
        .params()
        .iter()
        .map(|&p| {
            let mut g = grads.take(p);
            g.data_mut().iter_mut().for_each(|x| *x = -*x);
            g
        })
        .collect();
    adam.step(&mut nets.h_hat.mlp.tensors_mut(), &neg)?;
    Ok(value)
}

/// One gradient-ascent step of `d_st` with respect to Ĥ only.
pub fn inner_max_step(
    nets: &mut Networks,
    src: &[&Image],
    trg: &[&Image],
    div: FDivergence,
    adam: &mut AdamState,
) -> Result<f64> {
    let recon = nets.reconstruct_tensor(&stacked(src, trg)?)?;
    ascend_h_hat(nets, &recon, src.len(), div, adam)
}

use std::fmt::Write as _;

use super::{jitter, train, Net, Networks, TrainConfig, TrainData, TrainState};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fdiv::{mean_var, FDivergence};
use crate::nets::{images_to_tensor, Image};
use crate::synthdeg::{mix_seed, sample_paired, DegradationSpec, Domain, DomainDataset};

#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    /// Ascent steps used to approximate the sup in the discrepancy.
    pub ascent_steps: usize,
    pub ascent_lr: f64,
    /// Training schedule for the joint (paired, both-domain) encoder whose
    /// risk estimates λ*. `lambda_uda` is ignored.
    pub joint: TrainConfig,
    /// Fresh paired latents used to train the joint encoder.
    pub joint_pairs: usize,
    /// Degradation applied to the joint encoder's target images.
    pub degradation: DegradationSpec,
    /// Clamp scale `c` in `min(1, distance / c)`; `None` uses the 99th
    /// percentile of source-split distances.
    pub scale: Option<f64>,
    pub seed: u64,
}

impl AuditConfig {
    pub fn new(joint: TrainConfig, degradation: DegradationSpec) -> Self {
        AuditConfig {
            ascent_steps: 500,
            ascent_lr: 1e-3,
            seed: joint.seed,
            joint,
            joint_pairs: 2000,
            degradation,
            scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundAuditReport {
    pub r_t: f64,
    pub r_s: f64,
    pub d_hat: f64,
    pub lambda_star_hat: f64,
    /// `R_s + D_hat + λ̂* − R_t`.
    pub slack: f64,
    pub se_r_t: f64,
    pub se_r_s: f64,
    pub se_d_hat: f64,
    pub se_lambda_star: f64,
    /// Combined standard error of the slack.
    pub sigma: f64,
    pub scale: f64,
    pub n_pairs: usize,
}

impl BoundAuditReport {
    /// Whether `slack ≥ −3σ`.
    pub fn holds(&self) -> bool {
        self.slack >= -3.0 * self.sigma
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fields = [
            ("R_t", self.r_t),
            ("R_s", self.r_s),
            ("D_hat", self.d_hat),
            ("lambda_star_hat", self.lambda_star_hat),
            ("slack", self.slack),
            ("se_R_t", self.se_r_t),
            ("se_R_s", self.se_r_s),
            ("se_D_hat", self.se_d_hat),
            ("se_lambda_star_hat", self.se_lambda_star),
            ("sigma", self.sigma),
            ("scale", self.scale),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "n_pairs={}", self.n_pairs);
        let _ = writeln!(s, "holds={}", self.holds());
        s
    }
}

/// Paired evaluation records as (src inputs, trg inputs, clean references).
fn paired_split(eval: &DomainDataset) -> Result<(Vec<&Image>, Vec<&Image>)> {
    let src: Vec<_> = eval
        .domain(Domain::Src)
        .into_iter()
        .filter(|r| r.paired)
        .collect();
    let trg: Vec<_> = eval
        .domain(Domain::Trg)
        .into_iter()
        .filter(|r| r.paired)
        .collect();
    if src.is_empty() || src.len() != trg.len() {
        return Err(Error::Invalid(format!(
            "bound audit needs paired evaluation records ({} src, {} trg)",
            src.len(),
            trg.len()
        )));
    }
    for (s, t) in src.iter().zip(&trg) {
        if let (Some(a), Some(b)) = (&s.latent, &t.latent) {
            if a != b {
                return Err(Error::Invalid(format!(
                    "{} and {} are not a pair",
                    s.filename, t.filename
                )));
            }
        }
    }
    Ok((
        src.iter().map(|r| &r.image).collect(),
        trg.iter().map(|r| &r.image).collect(),
    ))
}

/// Final-layer H features, one row per image.
fn h_final(nets: &Networks, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = nets.h.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let f = h.forward(&mut tape, xv)?;
    Ok(tape.value(*f.last().expect("layers")).clone())
}

fn row_distances(a: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..a.rows())
        .map(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn clamp_loss(d: f64, c: f64) -> f64 {
    if c > 0.0 {
        (d / c).min(1.0)
    } else if d > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Nearest-rank percentile.
fn percentile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

struct Risk {
    mean: f64,
    se: f64,
}

fn risk(losses: &[f64]) -> Risk {
    let (mean, var) = mean_var(losses);
    Risk {
        mean,
        se: (var / losses.len() as f64).sqrt(),
    }
}

/// Clamped feature distances of the encoder's reconstructions to the clean
/// references, for the source and target splits.
fn split_losses(
    nets: &Networks,
    src: &Tensor,
    trg: &Tensor,
    h_ref: &Tensor,
    c: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hs = h_final(nets, &nets.reconstruct_tensor(src)?)?;
    let ht = h_final(nets, &nets.reconstruct_tensor(trg)?)?;
    let ls = row_distances(h_ref, &hs)
        .into_iter()
        .map(|d| clamp_loss(d, c))
        .collect();
    let lt = row_distances(h_ref, &ht)
        .into_iter()
        .map(|d| clamp_loss(d, c))
        .collect();
    Ok((ls, lt))
}

/// Empirical check of `R_t ≤ R_s + D + λ*` on a paired evaluation set.
///
/// Risks use the Euclidean distance between final-layer H features of the
/// reconstruction and the clean original, clamped into `[0, 1]`. `D_hat`
/// is the largest signed discrepancy seen while ascending from the trained
/// Ĥ and from H on
/// the same clamped distance. `λ̂*` is the summed risk of an encoder
/// trained with pairs on both domains for the same budget.
pub fn audit_bound(
    nets: &Networks,
    eval: &DomainDataset,
    div: FDivergence,
    cfg: &AuditConfig,
) -> Result<BoundAuditReport> {
    let (src, trg) = paired_split(eval)?;
    let n = src.len();
    let xs = images_to_tensor(&src)?;
    let xt = images_to_tensor(&trg)?;
    let h_ref = h_final(nets, &xs)?;

    let hs = h_final(nets, &nets.reconstruct_tensor(&xs)?)?;
    let c = match cfg.scale {
        Some(c) => c,
        None => percentile(&row_distances(&h_ref, &hs), 99.0),
    };
    let (ls, lt) = split_losses(nets, &xs, &xt, &h_ref, c)?;
    let (rs, rt) = (risk(&ls), risk(&lt));

    let (d_hat, se_d) = discrepancy_sup(nets, &xs, &xt, div, c, cfg)?;

    // λ*: joint hypothesis from the same class, same budget
    let pairs = sample_paired(
        &nets.generator,
        cfg.joint_pairs.max(2),
        &cfg.degradation,
        mix_seed(cfg.seed, 0x4A4F_494E),
    )?;
    let (jsrc, jtrg) = paired_split(&pairs)?;
    let mut fresh = Networks::init(nets.generator.clone(), mix_seed(cfg.seed, 0x4A4F));
    fresh.h = nets.h.clone();
    fresh.h_hat = nets.h.twin();
    fresh.r = nets.r.clone();
    let joint_cfg = TrainConfig {
        lambda_uda: 0.0,
        ..cfg.joint.clone()
    };
    let data = TrainData {
        src: jsrc.clone(),
        trg: jtrg,
        trg_refs: Some(jsrc),
    };
    let (joint, _) = train(&joint_cfg, TrainState::new(fresh, &joint_cfg), &data)?;
    let (js, jt) = split_losses(&joint.nets, &xs, &xt, &h_ref, c)?;
    let (rjs, rjt) = (risk(&js), risk(&jt));
    let lambda_star = rjs.mean + rjt.mean;
    let se_lambda = (rjs.se * rjs.se + rjt.se * rjt.se).sqrt();

    let slack = rs.mean + d_hat + lambda_star - rt.mean;
    let sigma = (rs.se * rs.se + rt.se * rt.se + se_d * se_d + se_lambda * se_lambda).sqrt();
    Ok(BoundAuditReport {
        r_t: rt.mean,
        r_s: rs.mean,
        d_hat,
        lambda_star_hat: lambda_star,
        slack,
        se_r_t: rt.se,
        se_r_s: rs.se,
        se_d_hat: se_d,
        se_lambda_star: se_lambda,
        sigma,
        scale: c,
        n_pairs: n,
    })
}

/// Full-batch Adam ascent of `mean_s ℓ − mean_t φ*(ℓ)` over a copy of Ĥ,
/// with `ℓ = min(1, ‖Ĥ(y) − H(y)‖ / c)` on final-layer features of the
/// reconstructions `y`. Returns the best value over both starts and its
/// standard error.
fn discrepancy_sup(
    nets: &Networks,
    xs: &Tensor,
    xt: &Tensor,
    div: FDivergence,
    c: f64,
    cfg: &AuditConfig,
) -> Result<(f64, f64)> {
    let ys = nets.reconstruct_tensor(xs)?;
    let yt = nets.reconstruct_tensor(xt)?;
    let n_src = ys.rows();
    let mut stacked = ys.data().to_vec();
    stacked.extend_from_slice(yt.data());
    let y = Tensor::matrix(n_src + yt.rows(), ys.cols(), stacked)?;
    let h_y = h_final(nets, &y)?;

    // Two starts: the trained Ĥ, and H itself (where ℓ = 0, which a trained
    // Ĥ far from H may never get back to once every ℓ is clamped). ℓ has
    // zero gradient at Ĥ = H, so that start is slightly perturbed.
    let mut near_h = nets.clone();
    near_h.h_hat = nets.h.twin();
    jitter(&mut near_h.h_hat.mlp, 1e-3, mix_seed(cfg.seed, 0x4A17));
    let mut best = ascend(near_h, &y, &h_y, n_src, div, c, cfg)?;
    if nets.h_hat.mlp != nets.h.mlp {
        let trained = ascend(nets.clone(), &y, &h_y, n_src, div, c, cfg)?;
        if trained.0 > best.0 {
            best = trained;
        }
    }
    Ok(best)
}

fn ascend(
    mut probe: Networks,
    y: &Tensor,
    h_y: &Tensor,
    n_src: usize,
    div: FDivergence,
    c: f64,
    cfg: &AuditConfig,
) -> Result<(f64, f64)> {
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.ascent_lr,
            ..AdamConfig::default()
        },
        probe.h_hat.mlp.tensors(),
    );
    let scale = if c > 0.0 { 1.0 / c } else { f64::MAX };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in 0..=cfg.ascent_steps {
        let mut tape = Tape::new();
        let b = probe.bind(&mut tape, &[Net::HHat]);
        let yv = tape.constant(y.clone());
        let hv = tape.constant(h_y.clone());
        let fh = b.h_hat.forward(&mut tape, yv)?;
        let diff = tape.sub(*fh.last().expect("layers"), hv)?;
        let sq = tape.square(diff);
        let s = tape.sum_axis(sq, 1)?;
        let s = tape.add_scalar(s, 1e-12);
        let dist = tape.sqrt(s)?;
        let scaled = tape.mul_scalar(dist, scale);
        let l = tape.clamp(scaled, 0.0, 1.0);
        let l_s = tape.slice_rows(l, 0, n_src)?;
        let l_t = tape.slice_rows(l, n_src, y.rows() - n_src)?;
        let ms = tape.mean(l_s);
        let conj = div.conjugate_var(&mut tape, l_t)?;
        let mt = tape.mean(conj);
        let d = tape.sub(ms, mt)?;
        let value = tape.value(d).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("discrepancy ascent".into()));
        }
        if value > best.0 {
            let (_, vs) = mean_var(tape.value(l_s).data());
            let (_, vt) = mean_var(tape.value(conj).data());
            let se = (vs / n_src as f64 + vt / (y.rows() - n_src) as f64).sqrt();
            best = (value, se);
        }
        if step == cfg.ascent_steps {
            break;
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
        adam.step(&mut probe.h_hat.mlp.tensors_mut(), &neg)?;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 99.0), 99.0);
        assert_eq!(percentile(&xs, 100.0), 100.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
    }

    #[test]
    fn clamp_loss_saturates() {
        assert_eq!(clamp_loss(5.0, 2.0), 1.0);
        assert_eq!(clamp_loss(1.0, 2.0), 0.5);
        assert_eq!(clamp_loss(1.0, 0.0), 1.0);
        assert_eq!(clamp_loss(0.0, 0.0), 0.0);
    }
}

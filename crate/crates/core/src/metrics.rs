//! Reconstruction and identity metrics: MSE/PSNR, windowed SSIM, a
//! Fréchet distance over fixed H features, and identity similarity.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nets::{identity_embed, FeatureNet, Image};
use crate::synthdeg::{Domain, DomainDataset};
use crate::uda::Networks;

/// Stand-in for infinite PSNR at zero error.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.size(), a.size()],
            rhs: vec![b.size(), b.size()],
        });
    }
    Ok(())
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-12 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// `(MSE, PSNR)` with peak 1.
pub fn pixel_metrics(a: &Image, b: &Image) -> Result<(f64, f64)> {
    same_shape(a, b, "pixel_metrics")?;
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok((mse, psnr_from_mse(mse)))
}

/// Mean SSIM over all 7×7 windows at stride 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let n = a.size();
    if n < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {n}x{n}"
        )));
    }
    let k = SSIM_WINDOW;
    let count = (k * k) as f64;
    let positions = n - k + 1;
    let mut total = 0.0;
    for y0 in 0..positions {
        for x0 in 0..positions {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    sa += a.get(x, y);
                    sb += b.get(x, y);
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    let (da, db) = (a.get(x, y) - ma, b.get(x, y) - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / count, vb / count, cov / count);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / (positions * positions) as f64)
}

fn gaussian_fit(feats: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = feats.len();
    let d = feats[0].len();
    let mut mu = vec![0.0; d];
    for f in feats {
        mu.iter_mut().zip(f).for_each(|(m, x)| *m += x);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        for i in 0..d {
            let di = f[i] - mu[i];
            for j in 0..d {
                cov[(i, j)] += di * (f[j] - mu[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

/// `V·diag(√max(λ, 0))·Vᵀ` of a symmetric matrix.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})`. The cross term is the trace
/// of the square root of the symmetric `Σa^{1/2} Σb Σa^{1/2}`, which has
/// the same spectrum as `Σa Σb`.
pub fn frechet_feature_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = a.first().or(b.first()).map_or(0, Vec::len);
    for (name, set) in [("first", a), ("second", b)] {
        if set.len() < d + 1 || d == 0 {
            return Err(Error::Invalid(format!(
                "{name} feature set has {} samples; at least dim + 1 = {} needed",
                set.len(),
                d + 1
            )));
        }
        if set.iter().any(|f| f.len() != d) {
            return Err(Error::Invalid(format!(
                "{name} feature set mixes dimensions"
            )));
        }
    }
    let (ma, ca) = gaussian_fit(a);
    let (mb, cb) = gaussian_fit(b);
    let mean_term: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    let ra = sym_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok((mean_term + ca.trace() + cb.trace() - 2.0 * cross).max(0.0))
}

/// Cosine similarity of identity embeddings.
pub fn identity_similarity(r: &FeatureNet, a: &Image, b: &Image) -> Result<f64> {
    let ea = identity_embed(r, a)?;
    let eb = identity_embed(r, b)?;
    let c: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
    Ok(c.clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub split: Domain,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub ffd: f64,
    /// Mean identity cosine similarity.
    pub ids: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("split,PSNR,SSIM,MSE,FFD,IDs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.split.name(),
            r.psnr,
            r.ssim,
            r.mse,
            r.ffd,
            r.ids
        );
    }
    s
}

/// Metrics of one split given its reconstructions and clean references.
/// Per-image values are averaged in record order.
pub fn split_metrics(
    exec: Exec,
    h: &FeatureNet,
    r: &FeatureNet,
    split: Domain,
    recon: &[Image],
    refs: &[&Image],
) -> Result<MetricsRow> {
    if recon.len() != refs.len() || recon.is_empty() {
        return Err(Error::Invalid(format!(
            "{} split: {} reconstructions for {} references",
            split.name(),
            recon.len(),
            refs.len()
        )));
    }
    let per = exec.map_range(recon.len(), |i| -> Result<[f64; 4]> {
        let (mse, psnr) = pixel_metrics(&recon[i], refs[i])?;
        Ok([
            mse,
            psnr,
            ssim(&recon[i], refs[i])?,
            identity_similarity(r, &recon[i], refs[i])?,
        ])
    });
    let mut sums = [0.0; 4];
    for p in per {
        sums.iter_mut().zip(p?).for_each(|(s, v)| *s += v);
    }
    let n = recon.len() as f64;
    let recon_refs: Vec<&Image> = recon.iter().collect();
    let last = |imgs: &[&Image]| -> Result<Vec<Vec<f64>>> {
        let f = h.features(imgs)?;
        let t = f.last().expect("layers");
        Ok((0..t.rows()).map(|i| t.row(i).to_vec()).collect())
    };
    Ok(MetricsRow {
        split,
        mse: sums[0] / n,
        psnr: sums[1] / n,
        ssim: sums[2] / n,
        ids: sums[3] / n,
        ffd: frechet_feature_distance(&last(&recon_refs)?, &last(refs)?)?,
    })
}

/// A split, its inputs and their clean references.
pub type SplitRefs<'a> = (Domain, Vec<&'a Image>, Vec<&'a Image>);

/// Clean references for every split of a paired evaluation set: each
/// paired src record is its own reference and the i-th paired trg record
/// pairs with the i-th paired src record.
pub fn paired_references(eval: &DomainDataset) -> Result<Vec<SplitRefs<'_>>> {
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
    if src.is_empty() {
        return Err(Error::Invalid(
            "evaluation set has no paired source records".into(),
        ));
    }
    let refs: Vec<&Image> = src.iter().map(|r| &r.image).collect();
    let mut out = vec![(Domain::Src, refs.clone(), refs.clone())];
    if !trg.is_empty() {
        if trg.len() != src.len() {
            return Err(Error::Invalid(format!(
                "{} paired trg records but {} paired src references",
                trg.len(),
                src.len()
            )));
        }
        out.push((Domain::Trg, trg.iter().map(|r| &r.image).collect(), refs));
    }
    Ok(out)
}

/// Inverts every paired image through E and G and scores it against its
/// clean original, one row per split present.
pub fn evaluate_checkpoint(nets: &Networks, eval: &DomainDataset) -> Result<Vec<MetricsRow>> {
    evaluate_checkpoint_with(Exec::default(), nets, eval)
}

pub fn evaluate_checkpoint_with(
    exec: Exec,
    nets: &Networks,
    eval: &DomainDataset,
) -> Result<Vec<MetricsRow>> {
    paired_references(eval)?
        .into_iter()
        .map(|(split, inputs, refs)| {
            let recon = nets.reconstruct(&inputs)?;
            split_metrics(exec, &nets.h, &nets.r, split, &recon, &refs)
        })
        .collect()
}

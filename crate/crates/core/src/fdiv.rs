//! f-divergences, their Fenchel conjugates, Gaussian reference values and
//! the variational (NWJ-style) lower-bound estimator.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FDivergence {
    KL,
    JS,
    PearsonChi2,
    TotalVariation,
}

/// Interval of arguments on which the conjugate is finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugateDomain {
    pub lo: f64,
    pub hi: f64,
    pub hi_inclusive: bool,
}

impl ConjugateDomain {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && (t < self.hi || (self.hi_inclusive && t == self.hi))
    }
}

impl FDivergence {
    pub const ALL: [FDivergence; 4] = [
        FDivergence::KL,
        FDivergence::JS,
        FDivergence::PearsonChi2,
        FDivergence::TotalVariation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FDivergence::KL => "KL",
            FDivergence::JS => "JS",
            FDivergence::PearsonChi2 => "PearsonChi2",
            FDivergence::TotalVariation => "TotalVariation",
        }
    }

    /// The generator φ on the nonnegative reals.
    pub fn phi(self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain {
                op: "phi",
                detail: format!("{}: x = {x} is negative", self.name()),
            });
        }
        Ok(match self {
            FDivergence::KL => xlogx(x),
            FDivergence::JS => -(x + 1.0) * ((1.0 + x) / 2.0).ln() + xlogx(x),
            FDivergence::PearsonChi2 => (x - 1.0) * (x - 1.0),
            FDivergence::TotalVariation => 0.5 * (x - 1.0).abs(),
        })
    }

    /// φ′(x). For total variation this is the subgradient `sign(x − 1)/2`,
    /// taking 0 at the kink.
    pub fn phi_prime(self, x: f64) -> Result<f64> {
        let positive_needed = matches!(self, FDivergence::KL | FDivergence::JS);
        if !(x >= 0.0) || (positive_needed && x == 0.0) {
            return Err(Error::Domain {
                op: "phi_prime",
                detail: format!("{}: x = {x} outside domain", self.name()),
            });
        }
        Ok(match self {
            FDivergence::KL => x.ln() + 1.0,
            FDivergence::JS => (2.0 * x / (1.0 + x)).ln(),
            FDivergence::PearsonChi2 => 2.0 * (x - 1.0),
            FDivergence::TotalVariation => {
                if x > 1.0 {
                    0.5
                } else if x < 1.0 {
                    -0.5
                } else {
                    0.0
                }
            }
        })
    }

    pub fn conjugate_domain(self) -> ConjugateDomain {
        match self {
            FDivergence::KL | FDivergence::PearsonChi2 => ConjugateDomain {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
                hi_inclusive: false,
            },
            FDivergence::JS => ConjugateDomain {
                lo: f64::NEG_INFINITY,
                hi: LN_2,
                hi_inclusive: false,
            },
            FDivergence::TotalVariation => ConjugateDomain {
                lo: -0.5,
                hi: 0.5,
                hi_inclusive: true,
            },
        }
    }

    fn check_domain(self, t: f64) -> Result<()> {
        if !t.is_finite() {
            Err(Error::NonFinite(format!(
                "{}: conjugate at t = {t}",
                self.name()
            )))
        } else if self.conjugate_domain().contains(t) {
            Ok(())
        } else {
            Err(Error::Domain {
                op: "conjugate",
                detail: format!("{}: t = {t} outside conjugate domain", self.name()),
            })
        }
    }

    /// Fenchel conjugate φ*(t) = sup_{x ≥ 0} (x·t − φ(x)).
    pub fn conjugate(self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match self {
            FDivergence::KL => (t - 1.0).exp(),
            FDivergence::JS => -(2.0 - t.exp()).ln(),
            FDivergence::PearsonChi2 => {
                if t >= -2.0 {
                    t + t * t / 4.0
                } else {
                    -1.0
                }
            }
            FDivergence::TotalVariation => t,
        })
    }

    /// φ* applied elementwise on a tape.
    pub fn conjugate_var(self, tape: &mut Tape, t: Var) -> Result<Var> {
        if let Some(&bad) = tape
            .value(t)
            .data()
            .iter()
            .find(|&&x| !self.conjugate_domain().contains(x))
        {
            self.check_domain(bad)?;
        }
        Ok(match self {
            FDivergence::KL => {
                let s = tape.add_scalar(t, -1.0);
                tape.exp(s)
            }
            FDivergence::JS => {
                let e = tape.exp(t);
                let neg = tape.neg(e);
                let s = tape.add_scalar(neg, 2.0);
                let l = tape.ln(s)?;
                tape.neg(l)
            }
            FDivergence::PearsonChi2 => {
                // Below -2 the supremum sits at x = 0, giving the constant -1.
                let u = tape.clamp(t, -2.0, f64::INFINITY);
                let sq = tape.square(u);
                let q = tape.mul_scalar(sq, 0.25);
                tape.add(u, q)?
            }
            FDivergence::TotalVariation => t,
        })
    }

    /// Integrand `q·φ(p/q)` of the defining integral, from log densities.
    fn integrand(self, log_p: f64, log_q: f64) -> f64 {
        let (p, q) = (log_p.exp(), log_q.exp());
        match self {
            FDivergence::KL => {
                if p == 0.0 {
                    0.0
                } else {
                    p * (log_p - log_q)
                }
            }
            FDivergence::JS => {
                let lse = log_add_exp(log_p, log_q);
                let kl_term = if p == 0.0 { 0.0 } else { p * (log_p - log_q) };
                kl_term - (p + q) * (lse - LN_2 - log_q)
            }
            FDivergence::PearsonChi2 => {
                let r = (log_p - log_q).exp();
                q * (r - 1.0) * (r - 1.0)
            }
            FDivergence::TotalVariation => 0.5 * (p - q).abs(),
        }
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(FDivergence::KL),
            "js" => Ok(FDivergence::JS),
            "pearsonchi2" | "pearson" | "chi2" => Ok(FDivergence::PearsonChi2),
            "totalvariation" | "tv" => Ok(FDivergence::TotalVariation),
            _ => Err(Error::Invalid(format!("unknown divergence '{s}'"))),
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSpec {
    mean: f64,
    stddev: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, stddev: f64) -> Result<Self> {
        if !(stddev > 0.0) || !mean.is_finite() || !stddev.is_finite() {
            return Err(Error::Invalid(format!(
                "gaussian needs finite mean and positive stddev, got N({mean}, {stddev}²)"
            )));
        }
        Ok(GaussianSpec { mean, stddev })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.stddev;
        -0.5 * z * z - self.stddev.ln() - 0.5 * (2.0 * PI).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let d = Normal::new(self.mean, self.stddev).expect("validated stddev");
        (0..n).map(|_| d.sample(rng)).collect()
    }
}

/// Result of a brute-force conjugate evaluation on a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSup {
    pub value: f64,
    pub argmax: f64,
    /// The maximizer landed on a grid endpoint, so the true supremum may lie
    /// outside the grid.
    pub clipped: bool,
}

/// `max_x x·t − φ(x)` over `points` evenly spaced values in `[lo, hi]`.
pub fn conjugate_numeric_oracle(
    div: FDivergence,
    t: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<GridSup> {
    if points < 2 || !(hi > lo) || lo < 0.0 {
        return Err(Error::Invalid(format!(
            "oracle grid [{lo}, {hi}] with {points} points"
        )));
    }
    let h = (hi - lo) / (points - 1) as f64;
    let mut best = GridSup {
        value: f64::NEG_INFINITY,
        argmax: lo,
        clipped: false,
    };
    let mut best_i = 0;
    for i in 0..points {
        let x = lo + h * i as f64;
        let v = x * t - div.phi(x)?;
        if v > best.value {
            best.value = v;
            best.argmax = x;
            best_i = i;
        }
    }
    best.clipped = (best_i == 0 && lo > 0.0) || best_i == points - 1;
    Ok(best)
}

/// Adaptive Simpson quadrature of the defining integral ∫ q·φ(p/q).
pub fn quadrature_divergence(div: FDivergence, p: &GaussianSpec, q: &GaussianSpec) -> f64 {
    let span = 14.0 * p.stddev.max(q.stddev);
    let lo = p.mean.min(q.mean) - span;
    let hi = p.mean.max(q.mean) + span;
    let f = |x: f64| div.integrand(p.ln_pdf(x), q.ln_pdf(x));
    // Split into panels so the adaptive rule sees every feature of the integrand.
    let panels = 64;
    let w = (hi - lo) / panels as f64;
    (0..panels)
        .map(|k| {
            let a = lo + w * k as f64;
            adaptive_simpson(&f, a, a + w, 1e-13, 40)
        })
        .sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `D_φ(P‖Q)` for univariate Gaussians: closed form for KL and for Pearson
/// χ² with equal variances, quadrature otherwise.
pub fn closed_form_gaussian_divergence(
    div: FDivergence,
    p: &GaussianSpec,
    q: &GaussianSpec,
) -> f64 {
    let dm = p.mean - q.mean;
    match div {
        FDivergence::KL => {
            (q.stddev / p.stddev).ln()
                + (p.stddev * p.stddev + dm * dm) / (2.0 * q.stddev * q.stddev)
                - 0.5
        }
        FDivergence::PearsonChi2 if p.stddev == q.stddev => {
            (dm * dm / (p.stddev * p.stddev)).exp() - 1.0
        }
        _ => quadrature_divergence(div, p, q),
    }
}

/// φ′(p(x)/q(x)): the witness attaining equality in the variational bound.
pub fn optimal_witness_eval(
    div: FDivergence,
    p: &GaussianSpec,
    q: &GaussianSpec,
    x: f64,
) -> Result<f64> {
    let (lp, lq) = (p.ln_pdf(x), q.ln_pdf(x));
    if lq.exp() == 0.0 {
        return Err(Error::Domain {
            op: "optimal_witness",
            detail: format!("q has zero density at x = {x}"),
        });
    }
    if div == FDivergence::KL {
        // log r computed directly keeps precision in the tails.
        return Ok(lp - lq + 1.0);
    }
    div.phi_prime((lp - lq).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NwjEstimate {
    pub value: f64,
    /// Monte-Carlo standard error of `value`.
    pub std_error: f64,
}

/// Signed variational lower bound `mean_P T − mean_Q φ*(T)`.
pub fn nwj_estimate<W>(
    div: FDivergence,
    samples_p: &[f64],
    samples_q: &[f64],
    witness: W,
) -> Result<NwjEstimate>
where
    W: Fn(f64) -> f64 + Sync + Send,
{
    nwj_estimate_with(Exec::default(), div, samples_p, samples_q, witness)
}

pub fn nwj_estimate_with<W>(
    exec: Exec,
    div: FDivergence,
    samples_p: &[f64],
    samples_q: &[f64],
    witness: W,
) -> Result<NwjEstimate>
where
    W: Fn(f64) -> f64 + Sync + Send,
{
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::Invalid("nwj_estimate needs nonempty samples".into()));
    }
    let tp = exec.map(samples_p, |&x| witness(x));
    let cq = exec.map(samples_q, |&x| {
        let t = witness(x);
        div.conjugate(t).map_err(|_| (x, t))
    });
    let mut conj = Vec::with_capacity(cq.len());
    for (i, c) in cq.into_iter().enumerate() {
        match c {
            Ok(v) => conj.push(v),
            Err((x, t)) => {
                return Err(Error::Domain {
                    op: "nwj_estimate",
                    detail: format!(
                        "{}: witness value {t} at q-sample #{i} (x = {x}) outside conjugate domain",
                        div.name()
                    ),
                })
            }
        }
    }
    let (mp, vp) = mean_var(&tp);
    let (mq, vq) = mean_var(&conj);
    Ok(NwjEstimate {
        value: mp - mq,
        std_error: (vp / tp.len() as f64 + vq / conj.len() as f64).sqrt(),
    })
}

/// Mean and unbiased variance, summed in slice order.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

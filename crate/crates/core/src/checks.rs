//! Oracle suites behind the `gradcheck` and `divcheck` commands: central
//! differences for every tape primitive and both training objectives, and
//! brute-force / closed-form references for the f-divergence machinery.

use std::f64::consts::{E, LN_2};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_report, GradCheck, Tape, TapeFn, Tensor, Var};
use crate::error::Result;
use crate::exec::Exec;
use crate::fdiv::{
    closed_form_gaussian_divergence, conjugate_numeric_oracle, nwj_estimate_with,
    optimal_witness_eval, FDivergence, GaussianSpec,
};
use crate::nets::{images_to_tensor, GeneratorSpec, LatentCode};
use crate::synthdeg::mix_seed;
use crate::uda::{
    d_st_var, jitter, reconstruct, source_loss_var, BoundNets, Net, Networks, TrainConfig,
};

/// One named check: `value` compared against `limit`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    /// Extra `key=value` fields for the report.
    pub note: String,
}

impl CheckLine {
    fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        CheckLine {
            name: name.into(),
            value,
            limit,
            pass: value < limit,
            note: String::new(),
        }
    }
}

pub fn report(lines: &[CheckLine]) -> String {
    let mut s = String::new();
    for l in lines {
        let _ = writeln!(
            s,
            "{} value={:e} limit={:e}{}{} {}",
            l.name,
            l.value,
            l.limit,
            if l.note.is_empty() { "" } else { " " },
            l.note,
            if l.pass { "PASS" } else { "FAIL" }
        );
    }
    let worst = lines.iter().map(|l| l.value / l.limit).fold(0.0, f64::max);
    let _ = writeln!(
        s,
        "all_pass={} worst_ratio={worst:e}",
        lines.iter().all(|l| l.pass)
    );
    s
}

pub const GRAD_LIMIT: f64 = 1e-5;
/// Step for single primitives.
pub const PRIMITIVE_STEP: f64 = 1e-5;
/// Step for chains through the renderer, whose small position derivatives
/// sit at the rounding floor with a 1e-5 step.
pub const COMPOSITE_STEP: f64 = 1e-4;

fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.3..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(0.2..3.0))
}

/// Fixed positive projection to a scalar.
fn project(tape: &mut Tape, y: Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(Tensor::from_fn(&shape, |_| rng.random_range(0.5..1.5)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Unary = fn(&mut Tape, Var) -> Result<Var>;
type Binary = fn(&mut Tape, Var, Var) -> Result<Var>;

const UNARY: &[(&str, Unary, bool)] = &[
    ("exp", |t, x| Ok(t.exp(x)), false),
    ("ln", |t, x| t.ln(x), true),
    ("tanh", |t, x| Ok(t.tanh(x)), false),
    ("sigmoid", |t, x| Ok(t.sigmoid(x)), false),
    ("leaky_relu", |t, x| Ok(t.leaky_relu(x, 0.2)), false),
    ("square", |t, x| Ok(t.square(x)), false),
    ("abs", |t, x| Ok(t.abs(x)), false),
    ("sqrt", |t, x| t.sqrt(x), true),
    ("neg", |t, x| Ok(t.neg(x)), false),
    ("add_scalar", |t, x| Ok(t.add_scalar(x, 2.5)), false),
    ("mul_scalar", |t, x| Ok(t.mul_scalar(x, -1.7)), false),
    ("clamp", |t, x| Ok(t.clamp(x, -1.0, 1.0)), false),
    ("sum", |t, x| Ok(t.sum(x)), false),
    ("mean", |t, x| Ok(t.mean(x)), false),
    ("sum_axis0", |t, x| t.sum_axis(x, 0), false),
    ("sum_axis1", |t, x| t.sum_axis(x, 1), false),
    ("mean_axis0", |t, x| t.mean_axis(x, 0), false),
    ("mean_axis1", |t, x| t.mean_axis(x, 1), false),
    ("slice_cols", |t, x| t.slice_cols(x, 1, 2), false),
    ("slice_rows", |t, x| t.slice_rows(x, 1, 2), false),
];

const BINARY: &[(&str, Binary)] = &[
    ("add", |t, a, b| t.add(a, b)),
    ("sub", |t, a, b| t.sub(a, b)),
    ("mul", |t, a, b| t.mul(a, b)),
    ("div", |t, a, b| t.div(a, b)),
    ("concat0", |t, a, b| t.concat(&[a, b], 0)),
    ("concat1", |t, a, b| t.concat(&[a, b], 1)),
    ("matmul", |t, a, b| t.matmul(a, b)),
];

/// Gradient checks merged over seeds.
#[derive(Default)]
struct Tally {
    worst: f64,
    checked: usize,
    straddled: usize,
}

impl Tally {
    fn add(&mut self, g: GradCheck) {
        self.worst = self.worst.max(g.max_rel_error);
        self.checked += g.checked;
        self.straddled += g.straddled;
    }

    fn line(&self, name: impl Into<String>) -> CheckLine {
        let mut l = CheckLine::below(name, self.worst, GRAD_LIMIT);
        l.pass &= self.checked > 0;
        l.note = format!("checked={} straddled={}", self.checked, self.straddled);
        l
    }
}

fn tally(
    exec: Exec,
    seeds: &[u64],
    step: f64,
    mut one: impl FnMut(u64) -> (Tensor, Box<dyn TapeFn>),
) -> Result<Tally> {
    let mut t = Tally::default();
    for &s in seeds {
        let (point, f) = one(s);
        t.add(grad_check_report(exec, &f, &point, step)?);
    }
    Ok(t)
}

/// Max relative gradient error per check over `n_seeds` seeds derived from
/// `seed`.
pub fn gradcheck_suite(exec: Exec, seed: u64, n_seeds: usize) -> Result<Vec<CheckLine>> {
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| mix_seed(seed, i)).collect();
    let mut out = Vec::new();

    for &(name, op, pos) in UNARY {
        let w = tally(exec, &seeds, PRIMITIVE_STEP, |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = if pos {
                positive(&mut rng, &[3, 4])
            } else {
                signed(&mut rng, &[3, 4])
            };
            let f = move |t: &mut Tape, x: Var| {
                let y = op(t, x)?;
                project(t, y)
            };
            (x, Box::new(f))
        })?;
        out.push(w.line(format!("primitive.{name}")));
    }
    for &(name, op) in BINARY {
        let w = tally(exec, &seeds, PRIMITIVE_STEP, |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let f = move |t: &mut Tape, x: Var| {
                let a = t.slice_rows(x, 0, 3)?;
                let b = t.slice_rows(x, 3, 3)?;
                let y = op(t, a, b)?;
                project(t, y)
            };
            (signed(&mut rng, &[6, 3]), Box::new(f))
        })?;
        out.push(w.line(format!("primitive.{name}")));
    }
    // row-broadcast on either side; positive inputs so the summed column
    // gradients cannot cancel to zero
    for (name, op) in [
        ("add", BINARY[0].1),
        ("mul", BINARY[2].1),
        ("div", BINARY[3].1),
    ] {
        for (side, row_first) in [("rhs", false), ("lhs", true)] {
            let w = tally(exec, &seeds, PRIMITIVE_STEP, |s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let f = move |t: &mut Tape, x: Var| {
                    let m = t.slice_rows(x, 0, 3)?;
                    let row = t.slice_rows(x, 3, 1)?;
                    let y = if row_first {
                        op(t, row, m)?
                    } else {
                        op(t, m, row)?
                    };
                    project(t, y)
                };
                (positive(&mut rng, &[4, 3]), Box::new(f))
            })?;
            out.push(w.line(format!("broadcast_{side}.{name}")));
        }
    }

    let g = GeneratorSpec::default();
    let w = tally(exec, &seeds, COMPOSITE_STEP, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let w = signed(&mut rng, &[2, g.latent_dim]);
        let g = g.clone();
        let f = move |t: &mut Tape, w: Var| {
            let img = g.render(t, w)?;
            project(t, img)
        };
        (w, Box::new(f))
    })?;
    out.push(w.line("generator.render"));

    // full objectives on micro-batches, per parameter tensor
    let images = |s: u64| -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(s, 1));
        let imgs: Vec<_> = (0..4)
            .map(|_| {
                let w: Vec<f64> = (0..g.latent_dim)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect();
                g.generate(&LatentCode(w))
            })
            .collect::<Result<_>>()?;
        images_to_tensor(&imgs.iter().collect::<Vec<_>>())
    };
    let objectives: [(&str, Net, &[usize]); 3] = [
        ("source_loss.encoder", Net::Encoder, &[1, 3, 4, 5]),
        ("d_st.h_hat", Net::HHat, &[1, 3, 4, 5]),
        ("d_st.encoder", Net::Encoder, &[3, 4, 5]),
    ];
    for (name, net, tensors) in objectives {
        for &idx in tensors {
            let mut w = Tally::default();
            for &s in &seeds {
                let mut nets = Networks::init(g.clone(), s);
                jitter(&mut nets.h_hat.mlp, 0.05, mix_seed(s, 2));
                let x = images(s)?;
                let point = nets.mlp(net).tensors()[idx].clone();
                let is_source = name.starts_with("source");
                let f = |t: &mut Tape, p: Var| -> Result<Var> {
                    let b: BoundNets = nets.bind_with(t, |t, n, i, ten| {
                        if n == net && i == idx {
                            p
                        } else {
                            t.constant(ten.clone())
                        }
                    });
                    let xv = t.constant(x.clone());
                    let r = reconstruct(t, &nets.generator, &b.encoder, xv)?;
                    if is_source {
                        source_loss_var(t, &b, r, xv, TrainConfig::default().weights())
                    } else {
                        d_st_var(t, &b, r, 2, FDivergence::PearsonChi2)
                    }
                };
                w.add(grad_check_report(exec, &f, &point, COMPOSITE_STEP)?);
            }
            out.push(w.line(format!("{name}[{idx}]")));
        }
    }
    Ok(out)
}

/// Argument grid spanning each conjugate domain, and an `x` range wide
/// enough to contain every maximizer.
fn conjugate_grid(div: FDivergence) -> (f64, f64, f64) {
    match div {
        FDivergence::KL => (-3.0, 3.0, 20.0),
        FDivergence::JS => (-3.0, LN_2 - 0.05, 40.0),
        FDivergence::PearsonChi2 => (-3.0, 3.0, 10.0),
        FDivergence::TotalVariation => (-0.5, 0.5, 10.0),
    }
}

pub const CONJUGATE_TOL: f64 = 1e-4;
pub const NWJ_SAMPLES: usize = 100_000;

/// Conjugates against the brute-force sup, and NWJ estimates against
/// Gaussian closed forms.
pub fn divcheck_suite(exec: Exec, seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = conjugate_checks(exec)?;
    out.extend(nwj_checks(exec, seed)?);
    Ok(out)
}

/// Analytic conjugate against the grid supremum, worst over 41 arguments.
pub fn conjugate_checks(exec: Exec) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    for div in FDivergence::ALL {
        let (lo, hi, xmax) = conjugate_grid(div);
        let points = (xmax * 1e4) as usize + 1;
        let ts: Vec<f64> = (0..41).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect();
        let errs = exec.map(&ts, |&t| -> Result<f64> {
            let o = conjugate_numeric_oracle(div, t, 0.0, xmax, points)?;
            Ok((div.conjugate(t)? - o.value).abs())
        });
        let mut w: f64 = 0.0;
        for e in errs {
            w = w.max(e?);
        }
        out.push(CheckLine::below(
            format!("conjugate.{div}"),
            w,
            CONJUGATE_TOL,
        ));
    }
    Ok(out)
}

/// NWJ estimates at the optimal witness, and restricted witnesses that must
/// stay under the closed form.
pub fn nwj_checks(exec: Exec, seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    let n01 = GaussianSpec::new(0.0, 1.0)?;
    let n11 = GaussianSpec::new(1.0, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4E57));
    let s0 = n01.sample(NWJ_SAMPLES, &mut rng);
    let s1 = n11.sample(NWJ_SAMPLES, &mut rng);

    // KL(N(0,1) || N(1,1)) = 1/2
    let kl = closed_form_gaussian_divergence(FDivergence::KL, &n01, &n11);
    let est = nwj_estimate_with(exec, FDivergence::KL, &s0, &s1, |x| {
        optimal_witness_eval(FDivergence::KL, &n01, &n11, x).unwrap_or(f64::NAN)
    })?;
    out.push(CheckLine::below(
        "nwj.KL.abs_error",
        (est.value - kl).abs(),
        0.02,
    ));

    // Pearson χ²(N(1,1) || N(0,1)) = e − 1
    let chi = closed_form_gaussian_divergence(FDivergence::PearsonChi2, &n11, &n01);
    let est = nwj_estimate_with(exec, FDivergence::PearsonChi2, &s1, &s0, |x| {
        optimal_witness_eval(FDivergence::PearsonChi2, &n11, &n01, x).unwrap_or(f64::NAN)
    })?;
    out.push(CheckLine::below(
        "nwj.PearsonChi2.rel_error",
        (est.value - chi).abs() / (E - 1.0),
        0.05,
    ));

    // restricted witnesses: the estimate may not exceed the truth by more
    // than 3 standard errors
    type Witness = Box<dyn Fn(f64) -> f64 + Sync + Send>;
    let restricted: Vec<(&str, FDivergence, Witness)> = vec![
        ("KL.zero", FDivergence::KL, Box::new(|_| 0.0)),
        ("KL.linear", FDivergence::KL, Box::new(|x| 0.5 - 0.8 * x)),
        (
            "KL.half_optimal",
            FDivergence::KL,
            Box::new(|x| 0.5 * (1.5 - x) + 0.5),
        ),
        (
            "PearsonChi2.linear",
            FDivergence::PearsonChi2,
            Box::new(|x| 1.5 * x),
        ),
        (
            "PearsonChi2.tanh",
            FDivergence::PearsonChi2,
            Box::new(|x| 2.0 * x.tanh()),
        ),
        (
            "PearsonChi2.scaled_optimal",
            FDivergence::PearsonChi2,
            Box::new(move |x| {
                0.5 * optimal_witness_eval(FDivergence::PearsonChi2, &n11, &n01, x)
                    .unwrap_or(f64::NAN)
            }),
        ),
    ];
    for (name, div, w) in restricted {
        let (p, q, truth) = match div {
            FDivergence::KL => (&s0, &s1, kl),
            _ => (&s1, &s0, chi),
        };
        let est = nwj_estimate_with(exec, div, p, q, w)?;
        let excess = (est.value - truth) / est.std_error.max(1e-300);
        out.push(CheckLine {
            name: format!("nwj.restricted.{name}.excess_in_se"),
            value: excess,
            limit: 3.0,
            pass: excess <= 3.0,
            note: format!("estimate={} truth={truth}", est.value),
        });
    }
    Ok(out)
}

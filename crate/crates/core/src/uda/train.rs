use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    ascend_h_hat, d_st_var, jitter, reconstruct, source_loss_var, Net, Networks, TrainConfig,
};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nets::{images_to_tensor, Image};
use crate::synthdeg::mix_seed;

const SRC_STREAM: u64 = 0x5352_4342;
const TRG_STREAM: u64 = 0x5452_4742;

/// Training images. `trg_refs`, when present, holds the clean original of
/// every target image and turns the run into supervised joint training
/// (used to estimate the ideal joint risk).
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub src: Vec<&'a Image>,
    pub trg: Vec<&'a Image>,
    pub trg_refs: Option<Vec<&'a Image>>,
}

/// Networks plus both optimizer states; everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub nets: Networks,
    pub adam_e: AdamState,
    pub adam_h: AdamState,
    /// Completed outer iterations.
    pub iteration: usize,
}

impl TrainState {
    pub fn new(nets: Networks, cfg: &TrainConfig) -> Self {
        let adam = |lr| AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        TrainState {
            adam_e: AdamState::new(adam(cfg.lr_encoder), nets.encoder.mlp.tensors()),
            adam_h: AdamState::new(adam(cfg.lr_hhat), nets.h_hat.mlp.tensors()),
            nets,
            iteration: 0,
        }
    }

    pub fn to_checkpoint(&self, config: impl Into<String>) -> Checkpoint {
        let mut ck = Checkpoint::new(config);
        self.nets.write_checkpoint(&mut ck);
        for (name, st) in [("adam.encoder", &self.adam_e), ("adam.h_hat", &self.adam_h)] {
            ck.insert_group(&format!("{name}.m"), &st.m);
            ck.insert_group(&format!("{name}.v"), &st.v);
            ck.insert(format!("{name}.step"), Tensor::scalar(st.step as f64));
        }
        ck.insert("meta.iteration", Tensor::scalar(self.iteration as f64));
        ck
    }

    /// Restores a state saved by [`TrainState::to_checkpoint`]; learning
    /// rates come from `cfg`.
    pub fn from_checkpoint(
        generator: crate::nets::GeneratorSpec,
        ck: &Checkpoint,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let nets = Networks::from_checkpoint(generator, ck)?;
        let mut state = TrainState::new(nets, cfg);
        for (name, st) in [
            ("adam.encoder", &mut state.adam_e),
            ("adam.h_hat", &mut state.adam_h),
        ] {
            let m = ck.group(&format!("{name}.m"));
            let v = ck.group(&format!("{name}.v"));
            let shapes: Vec<&[usize]> = st.m.iter().map(|t| t.shape()).collect();
            let ok = |ts: &[Tensor]| {
                ts.len() == shapes.len() && ts.iter().zip(&shapes).all(|(t, s)| t.shape() == *s)
            };
            if !ok(&m) || !ok(&v) {
                return Err(Error::Checkpoint(format!(
                    "optimizer state '{name}' does not match"
                )));
            }
            st.m = m;
            st.v = v;
            st.step = ck.require(&format!("{name}.step"))?.item() as u64;
        }
        state.iteration = ck.require("meta.iteration")?.item() as usize;
        Ok(state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub l_s: f64,
    pub d_st: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,L_s,d_st,total\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.iteration, r.l_s, r.d_st, r.total);
        }
        s
    }
}

/// Indices of a batch drawn without replacement.
fn picks(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, n, size.min(n)).into_vec()
}

/// Alternating min–max training from `state` up to `cfg.iterations`.
///
/// Each iteration ascends `d_st` in Ĥ (`inner_steps` times, with E at its
/// pre-update value), then descends `L_s + λ_uda·d_st` in E. Batches for
/// iteration `t` come from streams keyed by `(seed, t)`, so a resumed run
/// draws the same batches as an uninterrupted one.
pub fn train(
    cfg: &TrainConfig,
    mut state: TrainState,
    data: &TrainData,
) -> Result<(TrainState, TrainLog)> {
    cfg.validate()?;
    if data.src.is_empty() {
        return Err(Error::Invalid("training needs source images".into()));
    }
    let joint = data.trg_refs.is_some();
    if let Some(refs) = &data.trg_refs {
        if refs.len() != data.trg.len() {
            return Err(Error::Invalid(
                "every target image needs a reference".into(),
            ));
        }
    }
    let uda = cfg.lambda_uda != 0.0 && !joint;
    if (uda || joint) && data.trg.is_empty() {
        return Err(Error::Invalid(
            "target images are required unless lambda_uda = 0".into(),
        ));
    }
    let pixels = state.nets.generator.pixels();
    if data
        .src
        .iter()
        .chain(&data.trg)
        .any(|x| x.pixels().len() != pixels)
    {
        return Err(Error::Invalid(format!(
            "training images must have {pixels} pixels"
        )));
    }
    if uda && state.iteration == 0 && state.nets.h_hat.mlp == state.nets.h.mlp {
        jitter(
            &mut state.nets.h_hat.mlp,
            cfg.hhat_jitter,
            mix_seed(cfg.seed, 0x4A17),
        );
    }
    let mut log = TrainLog::default();

    for t in state.iteration + 1..=cfg.iterations {
        let snapshot = state.clone();
        match iteration(cfg, &mut state, data, t, uda, joint) {
            Ok(row) => {
                if t == 1 || t % cfg.log_every == 0 || t == cfg.iterations {
                    log.rows.push(row);
                }
            }
            Err(Error::NonFinite(_)) => return Err(diverged(t, &snapshot)),
            Err(e) => return Err(e),
        }
    }
    Ok((state, log))
}

/// One outer iteration `t`; leaves `state` half-updated on error.
fn iteration(
    cfg: &TrainConfig,
    state: &mut TrainState,
    data: &TrainData,
    t: usize,
    uda: bool,
    joint: bool,
) -> Result<LogRow> {
    let mut rs = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, SRC_STREAM), t as u64));
    let mut rt = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, TRG_STREAM), t as u64));
    let xs: Vec<&Image> = picks(data.src.len(), cfg.batch_size, &mut rs)
        .into_iter()
        .map(|i| data.src[i])
        .collect();
    let ti = if uda || joint {
        picks(data.trg.len(), cfg.batch_size, &mut rt)
    } else {
        Vec::new()
    };
    let xt: Vec<&Image> = ti.iter().map(|&i| data.trg[i]).collect();
    let rt_refs: Vec<&Image> = match &data.trg_refs {
        Some(r) => ti.iter().map(|&i| r[i]).collect(),
        None => Vec::new(),
    };
    let inputs: Vec<&Image> = xs.iter().chain(&xt).copied().collect();
    let x = images_to_tensor(&inputs)?;

    // steps 1–2: ascend Ĥ with E frozen
    if uda {
        let recon = state.nets.reconstruct_tensor(&x)?;
        for _ in 0..cfg.inner_steps {
            ascend_h_hat(
                &mut state.nets,
                &recon,
                xs.len(),
                cfg.divergence,
                &mut state.adam_h,
            )?;
        }
    }

    // steps 3–5: descend E on L_s + λ_uda·d_st
    let mut tape = Tape::new();
    let b = state.nets.bind(&mut tape, &[Net::Encoder]);
    let xv = tape.constant(x);
    let recon = reconstruct(&mut tape, &state.nets.generator, &b.encoder, xv)?;
    let (sup_recon, sup_refs) = if joint {
        let all_refs: Vec<&Image> = xs.iter().chain(&rt_refs).copied().collect();
        (recon, tape.constant(images_to_tensor(&all_refs)?))
    } else if uda {
        let n = xs.len();
        let r = tape.slice_rows(recon, 0, n)?;
        let x_src = tape.slice_rows(xv, 0, n)?;
        (r, x_src)
    } else {
        (recon, xv)
    };
    let l_s = source_loss_var(&mut tape, &b, sup_recon, sup_refs, cfg.weights())?;
    let (d, total) = if uda {
        let d = d_st_var(&mut tape, &b, recon, xs.len(), cfg.divergence)?;
        let scaled = tape.mul_scalar(d, cfg.lambda_uda);
        let total = tape.add(l_s, scaled)?;
        (tape.value(d).item(), total)
    } else {
        // Ĥ is never trained here, so ℓ̂ ≡ 0 and d_st = −φ*(0) exactly.
        (-cfg.divergence.conjugate(0.0)?, l_s)
    };
    let row = LogRow {
        iteration: t,
        l_s: tape.value(l_s).item(),
        d_st: d,
        total: tape.value(total).item(),
    };
    if !row.total.is_finite() || !row.l_s.is_finite() {
        return Err(Error::NonFinite(format!("loss at iteration {t}")));
    }
    let mut grads = tape.backward(total)?;
    let g: Vec<Tensor> = b.encoder.params().iter().map(|&p| grads.take(p)).collect();
    if g.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "encoder gradient at iteration {t}"
        )));
    }
    state
        .adam_e
        .step(&mut state.nets.encoder.mlp.tensors_mut(), &g)?;
    state.iteration = t;
    Ok(row)
}

fn diverged(iteration: usize, state: &TrainState) -> Error {
    Error::Diverged {
        iteration,
        last_finite: Box::new(state.to_checkpoint(format!("diverged_at={iteration}"))),
    }
}

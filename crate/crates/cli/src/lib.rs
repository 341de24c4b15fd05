//! The `udainv` command line.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use udainv_core::checkpoint::Checkpoint;
use udainv_core::checks::{divcheck_suite, gradcheck_suite, report, CheckLine};
use udainv_core::config::RunConfig;
use udainv_core::editctl::{
    apply_edit, directions_csv, ganspace_directions, interfacegan_direction, EditDirection,
};
use udainv_core::metrics::{evaluate_checkpoint, metrics_csv};
use udainv_core::nets::{Image, LatentCode};
use udainv_core::synthdeg::pgm::write_pgm_strip;
use udainv_core::synthdeg::{
    mix_seed, read_dataset, sample_domain, sample_paired, write_dataset, Domain, DomainDataset,
};
use udainv_core::uda::{audit_bound, train, Networks, TrainData, TrainState};
use udainv_core::{Error, Exec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Gradient checks run over this many seeds derived from `--seed`.
pub const GRADCHECK_SEEDS: usize = 10;
/// Eval images shown in `edit` strips.
pub const EDIT_STRIPS: usize = 8;
/// Principal directions written by `edit`.
pub const PCA_DIRECTIONS: usize = 3;

#[derive(Parser, Debug)]
#[command(
    name = "udainv",
    version,
    about = "GAN inversion across clean and degraded domains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value run configuration; every key has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset root written by `synth`. Without it the data is synthesized
    /// in memory from the configuration.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Trained checkpoint for invert, edit, eval and audit-bound.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write train/ and eval/ datasets with manifests.
    Synth(Common),
    /// Train the encoder; writes checkpoint.bin and train_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write input/reconstruction PGM pairs for the eval split.
    Invert(Common),
    /// Fit edit directions and write α-sweep strips.
    Edit(Common),
    /// Write metrics.csv for the eval split.
    Eval(Common),
    /// Check the target-risk bound on the eval split.
    AuditBound(Common),
    /// Conjugate and variational-bound oracle report.
    Divcheck(Common),
    /// Central-difference gradient report.
    Gradcheck(Common),
}

/// Result of a command that ran to completion.
enum Outcome {
    Done,
    ChecksFailed,
}

type CmdResult = Result<Outcome, Error>;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Invalid(_) | Error::Checkpoint(_) | Error::Manifest { .. } => {
            EXIT_INVALID
        }
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::ChecksFailed) => EXIT_INVALID,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Synth(c) => synth(&c),
        Command::Train { common, resume } => train_cmd(&common, resume.as_deref()),
        Command::Invert(c) => invert(&c),
        Command::Edit(c) => edit(&c),
        Command::Eval(c) => eval(&c),
        Command::AuditBound(c) => audit(&c),
        Command::Divcheck(c) => checks(&c, "divcheck.txt", |seed| {
            divcheck_suite(Exec::default(), seed)
        }),
        Command::Gradcheck(c) => checks(&c, "gradcheck.txt", |seed| {
            gradcheck_suite(Exec::default(), seed, GRADCHECK_SEEDS)
        }),
    }
}

/// Configuration from `--config` (else the checkpoint's echo, else
/// defaults) with `--seed` and `--out` applied.
fn config(c: &Common, ck: Option<&Checkpoint>) -> Result<RunConfig, Error> {
    let mut cfg = match (&c.config, ck) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(ck)) => RunConfig::parse(&ck.config)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Error> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    Ok(&cfg.out_dir)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

fn eval_seed(cfg: &RunConfig) -> u64 {
    mix_seed(cfg.train.seed, 0xE7A1)
}

fn train_split(cfg: &RunConfig) -> Result<DomainDataset, Error> {
    let g = cfg.generator()?;
    let s = cfg.train.seed;
    let mut ds = sample_domain(&g, cfg.n_src, Domain::Src, &cfg.degradation, s)?;
    if cfg.n_trg > 0 {
        ds.extend(sample_domain(
            &g,
            cfg.n_trg,
            Domain::Trg,
            &cfg.degradation,
            s,
        )?);
    }
    Ok(ds)
}

fn eval_split(cfg: &RunConfig) -> Result<DomainDataset, Error> {
    sample_paired(
        &cfg.generator()?,
        cfg.n_eval,
        &cfg.degradation,
        eval_seed(cfg),
    )
}

fn load_split(c: &Common, cfg: &RunConfig, name: &str) -> Result<DomainDataset, Error> {
    match &c.data {
        Some(root) => read_dataset(&root.join(name)),
        None if name == "train" => train_split(cfg),
        None => eval_split(cfg),
    }
}

fn load_checkpoint(c: &Common) -> Result<Checkpoint, Error> {
    let path = c
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Invalid("this command needs --checkpoint".into()))?;
    Checkpoint::load(path)
}

/// Checkpoint, configuration and networks for the evaluation commands.
fn trained(c: &Common) -> Result<(RunConfig, Networks), Error> {
    let ck = load_checkpoint(c)?;
    let cfg = config(c, Some(&ck))?;
    let nets = Networks::from_checkpoint(cfg.generator()?, &ck)?;
    Ok((cfg, nets))
}

fn synth(c: &Common) -> CmdResult {
    let cfg = config(c, None)?;
    let out = out_dir(&cfg)?;
    write_dataset(&train_split(&cfg)?, &out.join("train"))?;
    write_dataset(&eval_split(&cfg)?, &out.join("eval"))?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    Ok(Outcome::Done)
}

fn train_cmd(c: &Common, resume: Option<&Path>) -> CmdResult {
    let resumed = resume.map(Checkpoint::load).transpose()?;
    let cfg = config(c, resumed.as_ref())?;
    let g = cfg.generator()?;
    let state = match &resumed {
        Some(ck) => TrainState::from_checkpoint(g.clone(), ck, &cfg.train)?,
        None => TrainState::new(Networks::init(g, cfg.train.seed), &cfg.train),
    };
    let ds = load_split(c, &cfg, "train")?;
    let data = TrainData {
        src: ds.images(Domain::Src),
        trg: ds.images(Domain::Trg),
        trg_refs: None,
    };
    let out = out_dir(&cfg)?;
    let echo = cfg.to_text();
    match train(&cfg.train, state, &data) {
        Ok((state, log)) => {
            state
                .to_checkpoint(echo)
                .save(&out.join("checkpoint.bin"))?;
            write_text(&out.join("train_log.csv"), &log.to_csv())?;
            Ok(Outcome::Done)
        }
        Err(Error::Diverged {
            iteration,
            mut last_finite,
        }) => {
            last_finite.config = echo;
            let path = out.join("last_finite.bin");
            last_finite.save(&path)?;
            eprintln!("last finite state written to {}", path.display());
            Err(Error::Diverged {
                iteration,
                last_finite,
            })
        }
        Err(e) => Err(e),
    }
}

fn side_by_side(images: &[&Image]) -> (usize, usize, Vec<f64>) {
    let n = images.first().map_or(0, |x| x.size());
    let w = n * images.len();
    let mut px = Vec::with_capacity(w * n);
    for y in 0..n {
        for img in images {
            px.extend_from_slice(&img.pixels()[y * n..(y + 1) * n]);
        }
    }
    (w, n, px)
}

fn stem(filename: &str) -> &str {
    filename.strip_suffix(".pgm").unwrap_or(filename)
}

fn invert(c: &Common) -> CmdResult {
    let (cfg, nets) = trained(c)?;
    let eval = load_split(c, &cfg, "eval")?;
    let dir = out_dir(&cfg)?.join("invert");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let inputs: Vec<&Image> = eval.records.iter().map(|r| &r.image).collect();
    let recon = nets.reconstruct(&inputs)?;
    for (r, y) in eval.records.iter().zip(&recon) {
        let (w, h, px) = side_by_side(&[&r.image, y]);
        write_pgm_strip(
            &dir.join(format!("{}_pair.pgm", stem(&r.filename))),
            w,
            h,
            &px,
        )?;
    }
    Ok(Outcome::Done)
}

fn edit(c: &Common) -> CmdResult {
    let (cfg, nets) = trained(c)?;
    let eval = load_split(c, &cfg, "eval")?;
    let src = eval.domain(Domain::Src);
    let truth: Vec<LatentCode> = src
        .iter()
        .map(|r| {
            r.latent
                .clone()
                .ok_or_else(|| Error::Invalid(format!("{} has no latent code", r.filename)))
        })
        .collect::<Result<_, _>>()?;
    let labels: Vec<bool> = truth.iter().map(|w| w.0[0] > 0.0).collect();
    let mut dirs = vec![interfacegan_direction(&truth, &labels, "sign_w0")?];

    let trg = eval.domain(Domain::Trg);
    let trg_images: Vec<&Image> = trg.iter().map(|r| &r.image).collect();
    let inverted = nets.encoder.encode_batch(&trg_images)?;
    dirs.extend(ganspace_directions(&inverted, PCA_DIRECTIONS)?);

    let out = out_dir(&cfg)?;
    write_text(&out.join("directions.csv"), &directions_csv(&dirs)?)?;
    let dir = out.join("edit");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let alphas = cfg.alphas();
    for (rec, w) in trg.iter().zip(&inverted).take(EDIT_STRIPS) {
        for d in &dirs {
            let edits = sweep(&nets, w, d, &alphas)?;
            let mut row: Vec<&Image> = vec![&rec.image];
            row.extend(edits.iter());
            let (width, h, px) = side_by_side(&row);
            let name = format!("{}_{}_{}.pgm", stem(&rec.filename), d.method, d.attribute);
            write_pgm_strip(&dir.join(name), width, h, &px)?;
        }
    }
    Ok(Outcome::Done)
}

fn sweep(
    nets: &Networks,
    w: &LatentCode,
    d: &EditDirection,
    alphas: &[f64],
) -> Result<Vec<Image>, Error> {
    alphas
        .iter()
        .map(|&a| apply_edit(&nets.generator, w, d, a).map(|(_, x)| x))
        .collect()
}

fn eval(c: &Common) -> CmdResult {
    let (cfg, nets) = trained(c)?;
    let eval = load_split(c, &cfg, "eval")?;
    let rows = evaluate_checkpoint(&nets, &eval)?;
    write_text(&out_dir(&cfg)?.join("metrics.csv"), &metrics_csv(&rows))?;
    Ok(Outcome::Done)
}

fn audit(c: &Common) -> CmdResult {
    let (cfg, nets) = trained(c)?;
    let eval = load_split(c, &cfg, "eval")?;
    let report = audit_bound(&nets, &eval, cfg.train.divergence, &cfg.audit())?;
    let text = report.to_text();
    write_text(&out_dir(&cfg)?.join("audit.txt"), &text)?;
    print!("{text}");
    Ok(Outcome::Done)
}

fn checks(
    c: &Common,
    file: &str,
    suite: impl Fn(u64) -> Result<Vec<CheckLine>, Error>,
) -> CmdResult {
    let cfg = config(c, None)?;
    let lines = suite(cfg.train.seed)?;
    let text = report(&lines);
    print!("{text}");
    if c.out.is_some() {
        write_text(&out_dir(&cfg)?.join(file), &text)?;
    }
    Ok(if lines.iter().all(|l| l.pass) {
        Outcome::Done
    } else {
        Outcome::ChecksFailed
    })
}

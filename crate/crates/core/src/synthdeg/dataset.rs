use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::degrade::{degrade, DegradationKind, DegradationSpec};
use super::pgm;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nets::{GeneratorSpec, Image, LatentCode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Src,
    Trg,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Src => "src",
            Domain::Trg => "trg",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Domain::Src => 0x5352_4300,
            Domain::Trg => 0x5452_4700,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "src" => Ok(Domain::Src),
            "trg" => Ok(Domain::Trg),
            _ => Err(Error::Invalid(format!("unknown domain '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub filename: String,
    pub image: Image,
    pub domain: Domain,
    pub deg_kind: DegradationKind,
    pub deg_seed: u64,
    /// Evaluation records whose clean original is known.
    pub paired: bool,
    pub latent: Option<LatentCode>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DomainDataset {
    pub records: Vec<Record>,
}

/// SplitMix64 finalizer; derives independent 64-bit seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn standard_latent(seed: u64, dim: usize) -> LatentCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentCode((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn domain(&self, d: Domain) -> Vec<&Record> {
        self.records.iter().filter(|r| r.domain == d).collect()
    }

    pub fn images(&self, d: Domain) -> Vec<&Image> {
        self.records
            .iter()
            .filter(|r| r.domain == d)
            .map(|r| &r.image)
            .collect()
    }

    pub fn extend(&mut self, other: DomainDataset) {
        self.records.extend(other.records);
    }
}

/// Draws `n` standard-normal latents for `domain` and renders them; target
/// records additionally pass through the degradation operator. Every record
/// derives its own stream from `(seed, domain, index)`, so source and target
/// latents are independent.
pub fn sample_domain(
    g: &GeneratorSpec,
    n: usize,
    domain: Domain,
    deg: &DegradationSpec,
    seed: u64,
) -> Result<DomainDataset> {
    sample_domain_with(Exec::default(), g, n, domain, deg, seed)
}

pub fn sample_domain_with(
    exec: Exec,
    g: &GeneratorSpec,
    n: usize,
    domain: Domain,
    deg: &DegradationSpec,
    seed: u64,
) -> Result<DomainDataset> {
    if n == 0 {
        return Err(Error::Invalid("sample_domain needs n > 0".into()));
    }
    let base = mix_seed(seed, domain.stream());
    let records = exec.map_range(n, |i| -> Result<Record> {
        let rec_seed = mix_seed(base, i as u64);
        let w = standard_latent(rec_seed, g.latent_dim);
        let clean = g.generate(&w)?;
        let (image, kind, deg_seed) = match domain {
            Domain::Src => (clean, DegradationKind::None, rec_seed),
            Domain::Trg => {
                let dseed = mix_seed(rec_seed, 0xDE6);
                (degrade(&clean, &deg.with_seed(dseed))?, deg.kind, dseed)
            }
        };
        Ok(Record {
            filename: format!("{}_{i:05}.pgm", domain.name()),
            image,
            domain,
            deg_kind: kind,
            deg_seed,
            paired: false,
            latent: Some(w),
        })
    });
    Ok(DomainDataset {
        records: records.into_iter().collect::<Result<_>>()?,
    })
}

/// Evaluation split: `n` latents, each rendered clean (src) and degraded
/// (trg), both flagged `paired`.
pub fn sample_paired(
    g: &GeneratorSpec,
    n: usize,
    deg: &DegradationSpec,
    seed: u64,
) -> Result<DomainDataset> {
    sample_paired_with(Exec::default(), g, n, deg, seed)
}

pub fn sample_paired_with(
    exec: Exec,
    g: &GeneratorSpec,
    n: usize,
    deg: &DegradationSpec,
    seed: u64,
) -> Result<DomainDataset> {
    if n == 0 {
        return Err(Error::Invalid("sample_paired needs n > 0".into()));
    }
    let base = mix_seed(seed, 0x5041_4952);
    let pairs = exec.map_range(n, |i| -> Result<(Record, Record)> {
        let rec_seed = mix_seed(base, i as u64);
        let w = standard_latent(rec_seed, g.latent_dim);
        let clean = g.generate(&w)?;
        let dseed = mix_seed(rec_seed, 0xDE6);
        let degraded = degrade(&clean, &deg.with_seed(dseed))?;
        let src = Record {
            filename: format!("src_{i:05}.pgm"),
            image: clean,
            domain: Domain::Src,
            deg_kind: DegradationKind::None,
            deg_seed: rec_seed,
            paired: true,
            latent: Some(w.clone()),
        };
        let trg = Record {
            filename: format!("trg_{i:05}.pgm"),
            image: degraded,
            domain: Domain::Trg,
            deg_kind: deg.kind,
            deg_seed: dseed,
            paired: true,
            latent: Some(w),
        };
        Ok((src, trg))
    });
    let mut src = Vec::with_capacity(n);
    let mut trg = Vec::with_capacity(n);
    for p in pairs {
        let (s, t) = p?;
        src.push(s);
        trg.push(t);
    }
    src.extend(trg);
    Ok(DomainDataset { records: src })
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes every image as PGM plus `manifest.csv` into `dir`.
pub fn write_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = ds
        .records
        .iter()
        .filter_map(|r| r.latent.as_ref().map(|w| w.dim()))
        .max()
        .unwrap_or(crate::nets::RENDERED_COORDS);
    let mut out = String::new();
    out.push_str("filename,domain,deg_kind,deg_seed,paired");
    for k in 0..dim {
        out.push_str(&format!(",w{k}"));
    }
    out.push('\n');
    for r in &ds.records {
        pgm::write_pgm(&dir.join(&r.filename), &r.image)?;
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.filename, r.domain, r.deg_kind, r.deg_seed, r.paired
        ));
        for k in 0..dim {
            out.push(',');
            if let Some(w) = &r.latent {
                out.push_str(&w.0[k].to_string());
            }
        }
        out.push('\n');
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<DomainDataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |row: usize, msg: String| Error::Manifest {
        path: path.clone(),
        row,
        msg,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .split(',')
        .collect();
    let fixed = ["filename", "domain", "deg_kind", "deg_seed", "paired"];
    if header.len() < fixed.len() || header[..fixed.len()] != fixed {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    for (k, h) in header[fixed.len()..].iter().enumerate() {
        if *h != format!("w{k}") {
            return Err(bad(1, format!("unexpected latent column '{h}'")));
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(bad(
                row,
                format!("expected {} columns, found {}", header.len(), cols.len()),
            ));
        }
        let field = |k: usize| cols[k];
        let domain: Domain = field(1)
            .parse()
            .map_err(|e: Error| bad(row, e.to_string()))?;
        let deg_kind: DegradationKind = field(2)
            .parse()
            .map_err(|e: Error| bad(row, e.to_string()))?;
        let deg_seed: u64 = field(3)
            .parse()
            .map_err(|_| bad(row, format!("bad deg_seed '{}'", field(3))))?;
        let paired: bool = field(4)
            .parse()
            .map_err(|_| bad(row, format!("bad paired flag '{}'", field(4))))?;
        let latent_cols = &cols[fixed.len()..];
        let latent = if latent_cols.iter().all(|c| c.is_empty()) {
            None
        } else {
            let vals = latent_cols
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| bad(row, format!("bad latent '{c}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(LatentCode(vals))
        };
        let filename = field(0).to_string();
        if filename.contains('/') || filename.contains("..") {
            return Err(bad(
                row,
                format!("filename '{filename}' leaves the dataset directory"),
            ));
        }
        let image = pgm::read_pgm(&dir.join(&filename))?;
        records.push(Record {
            filename,
            image,
            domain,
            deg_kind,
            deg_seed,
            paired,
            latent,
        });
    }
    Ok(DomainDataset { records })
}

/// Writes `ds` into `dir` and reads it back.
pub fn manifest_roundtrip(ds: &DomainDataset, dir: &Path) -> Result<DomainDataset> {
    write_dataset(ds, dir)?;
    read_dataset(dir)
}

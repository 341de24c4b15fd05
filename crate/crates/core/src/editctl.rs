//! Latent-space editing: a supervised linear-boundary direction, principal
//! directions of a latent collection, edit application and a position probe.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::nets::{GeneratorSpec, Image, LatentCode};

pub const LOGISTIC_STEPS: usize = 500;
pub const LOGISTIC_L2: f64 = 1e-3;
const LOGISTIC_LR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditMethod {
    LinearBoundary,
    Pca,
}

impl fmt::Display for EditMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditMethod::LinearBoundary => "linear-boundary",
            EditMethod::Pca => "pca",
        })
    }
}

impl FromStr for EditMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-boundary" => Ok(EditMethod::LinearBoundary),
            "pca" => Ok(EditMethod::Pca),
            _ => Err(Error::Invalid(format!("unknown edit method '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditDirection {
    /// Unit vector in latent space.
    pub vector: Vec<f64>,
    pub method: EditMethod,
    pub attribute: String,
    /// Geometric margin of the separator, or explained-variance ratio.
    pub metadata: f64,
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::NonFinite(format!(
            "cannot normalize direction of norm {n}"
        )));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

fn check_latents(latents: &[LatentCode]) -> Result<usize> {
    let d = latents.first().map_or(0, LatentCode::dim);
    if d == 0 || latents.iter().any(|w| w.dim() != d) {
        return Err(Error::Invalid(
            "latents must be nonempty and share a dimension".into(),
        ));
    }
    Ok(d)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Normal of a logistic-regression separator between the two label classes,
/// pointing toward the positive class.
pub fn interfacegan_direction(
    latents: &[LatentCode],
    labels: &[bool],
    attribute: &str,
) -> Result<EditDirection> {
    if latents.len() != labels.len() || latents.len() < 20 {
        return Err(Error::Invalid(format!(
            "need at least 20 labelled latents, got {} latents and {} labels",
            latents.len(),
            labels.len()
        )));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Invalid("labels contain a single class".into()));
    }
    let d = check_latents(latents)?;
    let n = latents.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..LOGISTIC_STEPS {
        let mut gw: Vec<f64> = w.iter().map(|wi| LOGISTIC_L2 * wi).collect();
        let mut gb = 0.0;
        for (x, &y) in latents.iter().zip(labels) {
            let z = b + x.0.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = (sigmoid(z) - f64::from(u8::from(y))) / n;
            gw.iter_mut().zip(&x.0).for_each(|(g, xi)| *g += err * xi);
            gb += err;
        }
        w.iter_mut()
            .zip(&gw)
            .for_each(|(wi, g)| *wi -= LOGISTIC_LR * g);
        b -= LOGISTIC_LR * gb;
    }
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let margin = latents
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = b + x.0.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            if y {
                z / norm
            } else {
                -z / norm
            }
        })
        .fold(f64::INFINITY, f64::min);
    normalize(&mut w)?;
    Ok(EditDirection {
        vector: w,
        method: EditMethod::LinearBoundary,
        attribute: attribute.to_string(),
        metadata: margin,
    })
}

/// Top-`k` principal directions of the centered latents, largest variance
/// first. Each is signed so its largest-magnitude entry is positive.
pub fn ganspace_directions(latents: &[LatentCode], k: usize) -> Result<Vec<EditDirection>> {
    let d = check_latents(latents)?;
    if latents.len() <= d {
        return Err(Error::Invalid(format!(
            "need more than {d} latents, got {}",
            latents.len()
        )));
    }
    if k == 0 || k > d {
        return Err(Error::Invalid(format!("k must be in 1..={d}, got {k}")));
    }
    let n = latents.len();
    let mut mean = vec![0.0; d];
    for w in latents {
        mean.iter_mut()
            .zip(&w.0)
            .for_each(|(m, x)| *m += x / n as f64);
    }
    let mut cov = DMatrix::zeros(d, d);
    for w in latents {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (w.0[i] - mean[i]) * (w.0[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let total: f64 = values.iter().map(|l| l.max(0.0)).sum();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, i)| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            normalize(&mut v)?;
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            Ok(EditDirection {
                vector: v,
                method: EditMethod::Pca,
                attribute: format!("pc{rank}"),
                metadata: if total > 0.0 {
                    values[i].max(0.0) / total
                } else {
                    0.0
                },
            })
        })
        .collect()
}

/// `w + α·dir` and its rendering.
pub fn apply_edit(
    g: &GeneratorSpec,
    w: &LatentCode,
    dir: &EditDirection,
    alpha: f64,
) -> Result<(LatentCode, Image)> {
    if w.dim() != dir.vector.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_edit",
            lhs: vec![w.dim()],
            rhs: vec![dir.vector.len()],
        });
    }
    let edited = LatentCode(
        w.0.iter()
            .zip(&dir.vector)
            .map(|(x, v)| x + alpha * v)
            .collect(),
    );
    let img = g.generate(&edited)?;
    Ok((edited, img))
}

/// Horizontal intensity centroid above the image minimum, in `[0, 1]`.
/// A flat image gives 0.5.
pub fn attribute_probe(x: &Image) -> f64 {
    let n = x.size();
    let lo = x.pixels().iter().copied().fold(f64::INFINITY, f64::min);
    let (mut m, mut s) = (0.0, 0.0);
    for y in 0..n {
        for c in 0..n {
            let v = x.get(c, y) - lo;
            m += c as f64 * v;
            s += v;
        }
    }
    if s <= 0.0 || n < 2 {
        0.5
    } else {
        m / s / (n - 1) as f64
    }
}

pub fn directions_csv(dirs: &[EditDirection]) -> Result<String> {
    let d = dirs.first().map_or(0, |x| x.vector.len());
    if dirs.iter().any(|x| x.vector.len() != d) {
        return Err(Error::Invalid("directions differ in dimension".into()));
    }
    let mut s = String::from("method,attribute,metadata");
    for i in 0..d {
        let _ = write!(s, ",v{i}");
    }
    s.push('\n');
    for dir in dirs {
        if dir.attribute.contains([',', '\n']) {
            return Err(Error::Invalid(format!(
                "attribute '{}' has a separator",
                dir.attribute
            )));
        }
        let _ = write!(s, "{},{},{}", dir.method, dir.attribute, dir.metadata);
        for v in &dir.vector {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_directions(text: &str) -> Result<Vec<EditDirection>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Invalid("empty directions file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..3] != ["method", "attribute", "metadata"] {
        return Err(Error::Invalid(format!("bad directions header '{header}'")));
    }
    let d = cols.len() - 3;
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = |m: &str| Error::Invalid(format!("directions row {}: {m}", i + 2));
            if f.len() != d + 3 {
                return Err(bad("wrong field count"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(&format!("'{s}' is not a number")))
            };
            Ok(EditDirection {
                method: f[0].parse()?,
                attribute: f[1].to_string(),
                metadata: num(f[2])?,
                vector: f[3..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

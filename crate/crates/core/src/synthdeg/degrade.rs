use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DegradationKind {
    None,
    Rain,
    Mask,
    Downsample,
}

impl DegradationKind {
    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::None => "none",
            DegradationKind::Rain => "rain",
            DegradationKind::Mask => "mask",
            DegradationKind::Downsample => "downsample",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DegradationKind::None),
            "rain" => Ok(DegradationKind::Rain),
            "mask" => Ok(DegradationKind::Mask),
            "downsample" => Ok(DegradationKind::Downsample),
            _ => Err(Error::Invalid(format!("unknown degradation kind '{s}'"))),
        }
    }
}

/// Additive bright line segments.
#[derive(Clone, Debug, PartialEq)]
pub struct RainParams {
    pub streaks: usize,
    pub length: usize,
    /// Streak angle range in degrees; one angle is drawn per image.
    pub angle_deg: (f64, f64),
    pub intensity: f64,
}

/// Free-form stroke painted along a 4-neighbour random walk.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskParams {
    pub steps: usize,
    /// Brush radius range in pixels; one radius is drawn per image.
    pub radius: (usize, usize),
    pub fill: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleParams {
    pub factor: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    pub rain: RainParams,
    pub mask: MaskParams,
    pub downsample: DownsampleParams,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            rain: RainParams {
                streaks: 12,
                length: 5,
                angle_deg: (-60.0, -45.0),
                intensity: 0.25,
            },
            mask: MaskParams {
                steps: 40,
                radius: (1, 2),
                fill: 0.0,
            },
            downsample: DownsampleParams { factor: 2 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub seed: u64,
    pub params: DegradationParams,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, seed: u64) -> Self {
        DegradationSpec {
            kind,
            seed,
            params: DegradationParams::default(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DegradationSpec {
            seed,
            ..self.clone()
        }
    }
}

/// Applies a degradation operator. Output pixels stay in `[0, 1]` and are a
/// pure function of `(x, kind, seed, params)`.
pub fn degrade(x: &Image, deg: &DegradationSpec) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(deg.seed);
    match deg.kind {
        DegradationKind::None => Ok(x.clone()),
        DegradationKind::Rain => rain(x, &deg.params.rain, &mut rng),
        DegradationKind::Mask => Ok(mask(x, &deg.params.mask, &mut rng)?.0),
        DegradationKind::Downsample => downsample(x, deg.params.downsample.factor),
    }
}

fn rain(x: &Image, p: &RainParams, rng: &mut ChaCha8Rng) -> Result<Image> {
    if !(p.angle_deg.0 <= p.angle_deg.1) {
        return Err(Error::Invalid(format!(
            "rain angle range {:?}",
            p.angle_deg
        )));
    }
    let n = x.size();
    let mut out = x.clone();
    let theta = if p.angle_deg.0 == p.angle_deg.1 {
        p.angle_deg.0
    } else {
        rng.random_range(p.angle_deg.0..p.angle_deg.1)
    }
    .to_radians();
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut touched = Vec::with_capacity(p.length);
    for _ in 0..p.streaks {
        let x0: f64 = rng.random_range(0.0..n as f64);
        let y0: f64 = rng.random_range(0.0..n as f64);
        touched.clear();
        for k in 0..p.length {
            let px = (x0 + k as f64 * dx).floor();
            let py = (y0 + k as f64 * dy).floor();
            if px < 0.0 || py < 0.0 || px >= n as f64 || py >= n as f64 {
                continue;
            }
            let idx = py as usize * n + px as usize;
            if !touched.contains(&idx) {
                touched.push(idx);
                let v = &mut out.pixels_mut()[idx];
                *v = (*v + p.intensity).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Paints the mask and also returns the boolean coverage map.
pub(crate) fn mask(x: &Image, p: &MaskParams, rng: &mut ChaCha8Rng) -> Result<(Image, Vec<bool>)> {
    let (rlo, rhi) = p.radius;
    if rlo > rhi || !(0.0..=1.0).contains(&p.fill) {
        return Err(Error::Invalid(format!(
            "mask radius {:?} / fill {}",
            p.radius, p.fill
        )));
    }
    let n = x.size() as i64;
    let r = rng.random_range(rlo..=rhi) as i64;
    let mut covered = vec![false; (n * n) as usize];
    let mut cx = rng.random_range(0..n);
    let mut cy = rng.random_range(0..n);
    let mut paint = |cx: i64, cy: i64| {
        for yy in (cy - r).max(0)..=(cy + r).min(n - 1) {
            for xx in (cx - r).max(0)..=(cx + r).min(n - 1) {
                if (xx - cx).pow(2) + (yy - cy).pow(2) <= r * r {
                    covered[(yy * n + xx) as usize] = true;
                }
            }
        }
    };
    paint(cx, cy);
    for _ in 0..p.steps {
        let (mx, my) = [(1, 0), (-1, 0), (0, 1), (0, -1)][rng.random_range(0..4usize)];
        // reflect at the border
        cx = if cx + mx < 0 || cx + mx >= n {
            cx - mx
        } else {
            cx + mx
        };
        cy = if cy + my < 0 || cy + my >= n {
            cy - my
        } else {
            cy + my
        };
        paint(cx, cy);
    }
    let mut out = x.clone();
    for (v, &c) in out.pixels_mut().iter_mut().zip(&covered) {
        if c {
            *v = p.fill;
        }
    }
    Ok((out, covered))
}

/// `factor`×`factor` average pooling followed by bilinear upsampling back
/// to the original grid (half-pixel centers, edge clamped).
fn downsample(x: &Image, factor: usize) -> Result<Image> {
    let n = x.size();
    if factor == 0 || !n.is_multiple_of(factor) {
        return Err(Error::Invalid(format!(
            "downsample factor {factor} does not divide image size {n}"
        )));
    }
    let m = n / factor;
    let mut small = vec![0.0; m * m];
    for by in 0..m {
        for bx in 0..m {
            let mut s = 0.0;
            for y in by * factor..(by + 1) * factor {
                for xx in bx * factor..(bx + 1) * factor {
                    s += x.get(xx, y);
                }
            }
            small[by * m + bx] = s / (factor * factor) as f64;
        }
    }
    let coord = |i: usize| -> (usize, usize, f64) {
        let c = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (m - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(m - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        let (y0, y1, ty) = coord(y);
        for xx in 0..n {
            let (x0, x1, tx) = coord(xx);
            let top = small[y0 * m + x0] * (1.0 - tx) + small[y0 * m + x1] * tx;
            let bot = small[y1 * m + x0] * (1.0 - tx) + small[y1 * m + x1] * tx;
            out[y * n + xx] = top * (1.0 - ty) + bot * ty;
        }
    }
    Image::clamped(n, out)
}

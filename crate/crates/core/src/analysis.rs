//! Densities and scalar diagnostics computed from ensembles.

use std::io::Write;

use rand::Rng;

use crate::kernels::InteractionKernel;
use crate::kinetic::BinaryFeedback;

/// Controls at or below this magnitude count as switched off.
pub const ACTIVE_THRESHOLD: f64 = 1e-12;
/// Default relative prominence for [`peak_count`].
pub const DEFAULT_PROMINENCE: f64 = 0.2;
/// Variance below which an ensemble is considered at consensus.
pub const CONSENSUS_VARIANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("invalid domain [{lo}, {hi}] with dx = {dx}")]
    InvalidDomain { lo: f64, hi: f64, dx: f64 },
    #[error("frames have different bin geometry")]
    GeometryMismatch,
    #[error("snapshot times must be strictly increasing ({prev} then {next})")]
    NonMonotoneTime { prev: f64, next: f64 },
}

/// Histogram of an ensemble on a uniform grid over `[omega_min, omega_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFrame {
    pub t: f64,
    pub bin_centers: Vec<f64>,
    pub mass: Vec<f64>,
}

/// Number of bins `ceil(|Ω| / dx)`.
pub fn bin_count(omega_min: f64, omega_max: f64, dx: f64) -> usize {
    // the slack keeps 2 / 0.025 from rounding up to 81
    (((omega_max - omega_min) / dx) - 1e-9).ceil().max(1.0) as usize
}

/// Bin of `x`; out-of-domain samples fall into the boundary bins.
#[inline]
fn bin_of(x: f64, omega_min: f64, width: f64, n: usize) -> usize {
    let k = ((x - omega_min) / width).floor();
    if k.is_nan() || k < 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

fn check_domain(omega_min: f64, omega_max: f64, dx: f64) -> Result<(), AnalysisError> {
    if omega_min < omega_max && dx > 0.0 && omega_min.is_finite() && omega_max.is_finite() && dx.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::InvalidDomain {
            lo: omega_min,
            hi: omega_max,
            dx,
        })
    }
}

/// Bins are of equal width `|Ω| / n`, which is `dx` whenever `dx` divides `|Ω|`.
fn centers(omega_min: f64, omega_max: f64, n: usize) -> (Vec<f64>, f64) {
    let width = (omega_max - omega_min) / n as f64;
    ((0..n).map(|k| omega_min + (k as f64 + 0.5) * width).collect(), width)
}

pub fn histogram(
    positions: &[f64],
    t: f64,
    omega_min: f64,
    omega_max: f64,
    dx: f64,
) -> Result<DensityFrame, AnalysisError> {
    if positions.is_empty() {
        return Err(AnalysisError::EmptyEnsemble);
    }
    check_domain(omega_min, omega_max, dx)?;
    let n = bin_count(omega_min, omega_max, dx);
    let (bin_centers, width) = centers(omega_min, omega_max, n);
    let mut counts = vec![0u64; n];
    for &x in positions {
        counts[bin_of(x, omega_min, width, n)] += 1;
    }
    let total = positions.len() as f64;
    let mass = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(DensityFrame { t, bin_centers, mass })
}

impl DensityFrame {
    pub fn dx(&self) -> f64 {
        if self.bin_centers.len() > 1 {
            self.bin_centers[1] - self.bin_centers[0]
        } else {
            1.0
        }
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.bin_centers.len() == other.bin_centers.len()
            && self
                .bin_centers
                .iter()
                .zip(&other.bin_centers)
                .all(|(a, b)| (a - b).abs() <= 1e-12)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Number and locations of prominent maxima of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Peaks {
    pub count: usize,
    pub locations: Vec<f64>,
}

/// Counts local maxima of the 3-bin moving average whose topographic
/// prominence exceeds `min_prominence` times the largest smoothed mass.
///
/// A plateau counts as one maximum located at its middle bin. Maxima that
/// touch the ends of the grid are eligible.
pub fn peak_count(frame: &DensityFrame, min_prominence: f64) -> Peaks {
    let m = &frame.mass;
    let n = m.len();
    if n == 0 {
        return Peaks {
            count: 0,
            locations: Vec::new(),
        };
    }
    // truncated window at the ends
    let s: Vec<f64> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            m[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let top = s.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Peaks {
            count: 0,
            locations: Vec::new(),
        };
    }
    let threshold = min_prominence * top;
    let mut locations = Vec::new();
    let mut k = 0;
    while k < n {
        // plateau [k, e]
        let mut e = k;
        while e + 1 < n && s[e + 1] == s[k] {
            e += 1;
        }
        let h = s[k];
        let left_lower = k == 0 || s[k - 1] < h;
        let right_lower = e == n - 1 || s[e + 1] < h;
        if left_lower && right_lower && !(k == 0 && e == n - 1) {
            if prominence(&s, k, e, h) > threshold {
                locations.push(frame.bin_centers[(k + e) / 2]);
            }
        }
        k = e + 1;
    }
    Peaks {
        count: locations.len(),
        locations,
    }
}

/// Height of the maximum on `[k, e]` above its key col.
fn prominence(s: &[f64], k: usize, e: usize, h: f64) -> f64 {
    let n = s.len();
    // walk left until something taller; track the lowest point on the way
    let mut left_min = h;
    let mut left_bounded = false;
    for &v in s[..k].iter().rev() {
        if v > h {
            left_bounded = true;
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    let mut right_bounded = false;
    for &v in &s[e + 1..n] {
        if v > h {
            right_bounded = true;
            break;
        }
        right_min = right_min.min(v);
    }
    // the col through which taller ground is reached; the highest peak is
    // measured against the lowest point of the frame
    let saddle = match (left_bounded, right_bounded) {
        (true, true) => left_min.max(right_min),
        (true, false) => left_min,
        (false, true) => right_min,
        (false, false) => left_min.min(right_min),
    };
    h - saddle
}

/// `dx · Σ |CDF_a − CDF_b|`.
pub fn wasserstein1(a: &DensityFrame, b: &DensityFrame) -> Result<f64, AnalysisError> {
    if !a.same_geometry(b) {
        return Err(AnalysisError::GeometryMismatch);
    }
    let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
    for (x, y) in a.mass.iter().zip(&b.mass) {
        ca += x;
        cb += y;
        acc += (ca - cb).abs();
    }
    Ok(a.dx() * acc)
}

/// Mean and (population) variance of raw positions.
pub fn moments(positions: &[f64]) -> (f64, f64) {
    let n = positions.len() as f64;
    if positions.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = positions.iter().sum::<f64>() / n;
    let var = positions.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMetrics {
    pub l1_mass: f64,
    pub active_fraction: f64,
}

/// Realized control of every particle against a partner drawn uniformly
/// from the ensemble.
pub fn sampled_controls<R: Rng + ?Sized>(
    positions: &[f64],
    feedback: &BinaryFeedback,
    kernel: &InteractionKernel,
    alpha: f64,
    rng: &mut R,
) -> Vec<f64> {
    let n = positions.len();
    positions
        .iter()
        .map(|&x| {
            let y = positions[rng.random_range(0..n)];
            feedback.control(x, y, kernel.eval(x, y) * (y - x), alpha)
        })
        .collect()
}

pub fn control_metrics<R: Rng + ?Sized>(
    positions: &[f64],
    feedback: &BinaryFeedback,
    kernel: &InteractionKernel,
    alpha: f64,
    rng: &mut R,
) -> ControlMetrics {
    summarize_controls(&sampled_controls(positions, feedback, kernel, alpha, rng))
}

pub fn summarize_controls(u: &[f64]) -> ControlMetrics {
    if u.is_empty() {
        return ControlMetrics {
            l1_mass: 0.0,
            active_fraction: 0.0,
        };
    }
    let n = u.len() as f64;
    ControlMetrics {
        l1_mass: u.iter().map(|v| v.abs()).sum::<f64>() / n,
        active_fraction: u.iter().filter(|v| v.abs() > ACTIVE_THRESHOLD).count() as f64 / n,
    }
}

/// Per-bin mean of `values[i]` attached to `positions[i]`, on the grid of
/// [`histogram`]. Empty bins report 0.
pub fn binned_mean(
    positions: &[f64],
    values: &[f64],
    omega_min: f64,
    omega_max: f64,
    dx: f64,
) -> Result<Vec<f64>, AnalysisError> {
    check_domain(omega_min, omega_max, dx)?;
    let n = bin_count(omega_min, omega_max, dx);
    let width = (omega_max - omega_min) / n as f64;
    let mut sum = vec![0.0; n];
    let mut cnt = vec![0u64; n];
    for (&x, &v) in positions.iter().zip(values) {
        let k = bin_of(x, omega_min, width, n);
        sum[k] += v;
        cnt[k] += 1;
    }
    Ok(sum
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

/// One row of `moments.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub l1_control_mass: f64,
    pub active_fraction: f64,
    pub peak_count: usize,
}

pub const MOMENTS_HEADER: &str = "t,mean,variance,l1_control_mass,active_fraction,peak_count";

/// Frames of one run in time order, with the metadata needed to reproduce it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensitySeries {
    pub config_hash: String,
    pub seed: u64,
    pub frames: Vec<DensityFrame>,
    /// Per-bin mean forcing `S` at each frame; empty for uncontrolled runs.
    pub control: Vec<Vec<f64>>,
    pub moments: Vec<MomentRow>,
}

impl DensitySeries {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn push(&mut self, frame: DensityFrame, row: MomentRow, control: Option<Vec<f64>>) -> Result<(), AnalysisError> {
        if let Some(last) = self.frames.last() {
            if frame.t <= last.t {
                return Err(AnalysisError::NonMonotoneTime {
                    prev: last.t,
                    next: frame.t,
                });
            }
            if !last.same_geometry(&frame) {
                return Err(AnalysisError::GeometryMismatch);
            }
        }
        self.frames.push(frame);
        self.moments.push(row);
        if let Some(c) = control {
            self.control.push(c);
        }
        Ok(())
    }

    pub fn write_density_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        write!(w, "t")?;
        for c in &first.bin_centers {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for f in &self.frames {
            write!(w, "{}", f.t)?;
            for m in &f.mass {
                write!(w, ",{m}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn write_moments_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MOMENTS_HEADER}")?;
        for r in &self.moments {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t, r.mean, r.variance, r.l1_control_mass, r.active_fraction, r.peak_count
            )?;
        }
        w.flush()
    }
}

/// Parses a `moments.csv` body.
pub fn read_moments_csv(text: &str) -> Result<Vec<MomentRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MOMENTS_HEADER => {}
        _ => return Err("missing moments header".into()),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(format!("row {}: expected 6 fields", i + 1));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            Ok(MomentRow {
                t: num(f[0])?,
                mean: num(f[1])?,
                variance: num(f[2])?,
                l1_control_mass: num(f[3])?,
                active_fraction: num(f[4])?,
                peak_count: f[5].trim().parse().map_err(|e| format!("row {}: {e}", i + 1))?,
            })
        })
        .collect()
}

/// Parses the header row of `density.csv` into bin centers.
pub fn read_density_grid(text: &str) -> Result<Vec<f64>, String> {
    let header = text.lines().next().ok_or("empty density file")?;
    let mut f = header.split(',');
    if f.next().map(str::trim) != Some("t") {
        return Err("density header must start with `t`".into());
    }
    f.map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string())).collect()
}

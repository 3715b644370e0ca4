//! Experiment driver: configuration, orchestration and artifacts.

pub mod config;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use ksc_core::analysis::{
    binned_mean, read_density_grid, read_moments_csv, sampled_controls, summarize_controls, MomentRow,
    CONSENSUS_VARIANCE, DEFAULT_PROMINENCE,
};
use ksc_core::kinetic::{snapshot_interval, stream_rng, total_steps};
use ksc_core::{
    bci_run, histogram, moments, peak_count, solve_policy_iteration, BinaryFeedback, DensitySeries, EnsembleError,
    FeedbackTable, HjbError, ParticleEnsemble, Penalty, ValueGrid,
};

pub use config::{ControlVariant, Preset, RunConfig};

/// RNG stream for the control-metric partner draws.
const METRICS_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("{context}: {source}")]
    NonConvergence { context: String, source: HjbError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("runs have different density grids: {0} vs {1}")]
    GeometryMismatch(PathBuf, PathBuf),
    #[error("missing artifact {0}")]
    MissingArtifacts(PathBuf),
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid_owned(field: &str, reason: String) -> Self {
        Self::invalid(field, reason)
    }

    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidConfig { .. } => 2,
            Self::NonConvergence { .. } => 3,
            Self::Io { .. } | Self::MissingArtifacts(_) | Self::GeometryMismatch(..) | Self::Format(_) => 4,
        }
    }
}

/// Writes `path` through a sibling temporary file and a rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::io(path, io::Error::new(io::ErrorKind::InvalidInput, "not a file path")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            CliError::MissingArtifacts(path.to_path_buf())
        } else {
            CliError::io(path, e)
        }
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Content hash of everything the feedback table depends on.
pub fn hjb_key(cfg: &RunConfig, penalty: Penalty) -> String {
    let mut h = Sha256::new();
    let text = format!(
        "kernel={:?}\npenalty={penalty:?}\ngamma_bar={:e}\nlambda={:e}\ntarget={:e}\nbox={:e},{:e}\nomega={:e},{:e}\nn_nodes={}\nn_controls={}\ndt={:e}\ntol={:e}\nmax_policy_iters={}\n",
        cfg.kernel,
        cfg.gamma_bar,
        cfg.lambda,
        cfg.target,
        cfg.u_min,
        cfg.u_max,
        cfg.omega_min,
        cfg.omega_max,
        cfg.hjb.n_nodes,
        cfg.hjb.n_controls,
        cfg.hjb.dt,
        cfg.hjb.tol,
        cfg.hjb.max_policy_iters,
    );
    h.update(text.as_bytes());
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbSummary {
    pub key: String,
    pub iterations: usize,
    pub residual: f64,
    pub cache_hit: bool,
    pub table_path: PathBuf,
}

fn sidecar(table: &Path, ext: &str) -> PathBuf {
    let mut s = table.as_os_str().to_os_string();
    s.push(ext);
    PathBuf::from(s)
}

fn parse_log(text: &str) -> Option<(String, usize, f64)> {
    let mut key = None;
    let mut it = None;
    let mut res = None;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            match k.trim() {
                "key" => key = Some(v.trim().to_string()),
                "iterations" => it = v.trim().parse().ok(),
                "residual" => res = v.trim().parse().ok(),
                _ => {}
            }
        }
    }
    Some((key?, it?, res?))
}

/// Solves the infinite-horizon problem for `penalty` and writes the table
/// to `out` with a `.log` sidecar. A table whose log carries the same
/// content hash is reused.
pub fn precompute_hjb(cfg: &RunConfig, penalty: Penalty, out: &Path) -> Result<(HjbSummary, FeedbackTable), CliError> {
    cfg.validate()?;
    let key = hjb_key(cfg, penalty);
    let log_path = sidecar(out, ".log");
    if let (Ok(log), true) = (fs::read_to_string(&log_path), out.exists()) {
        if let Some((k, iterations, residual)) = parse_log(&log) {
            if k == key {
                let file = fs::File::open(out).map_err(|e| CliError::io(out, e))?;
                if let Ok(table) = FeedbackTable::read_csv(io::BufReader::new(file)) {
                    let summary = HjbSummary {
                        key,
                        iterations,
                        residual,
                        cache_hit: true,
                        table_path: out.to_path_buf(),
                    };
                    return Ok((summary, table));
                }
            }
        }
    }
    let geometry = cfg.hjb_geometry()?;
    let params = cfg.hjb_params(penalty);
    let sol = solve_policy_iteration(&ValueGrid::zeros(geometry), &cfg.kernel, &params, &cfg.control_box()).map_err(
        |e| match e {
            HjbError::NonConvergence { .. } => CliError::NonConvergence {
                context: format!("HJB solve for {penalty:?} penalty on {}x{} grid", geometry.n_nodes, geometry.n_nodes),
                source: e,
            },
            other => CliError::invalid("hjb", other.to_string()),
        },
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_atomic(out, |w| sol.table.write_csv(w))?;
    // the log goes last: its presence marks a complete table
    write_atomic(&log_path, |w| {
        writeln!(w, "key = {key}")?;
        writeln!(w, "iterations = {}", sol.iterations)?;
        writeln!(w, "residual = {:e}", sol.residual)?;
        writeln!(w, "tol = {:e}", params.tol)
    })?;
    let summary = HjbSummary {
        key,
        iterations: sol.iterations,
        residual: sol.residual,
        cache_hit: false,
        table_path: out.to_path_buf(),
    };
    Ok((summary, sol.table))
}

/// Summary printed at the end of `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub frames: usize,
    pub final_time: f64,
    pub final_mean: f64,
    pub final_variance: f64,
    pub peak_count: usize,
    pub peak_locations: Vec<f64>,
    pub mean_active_fraction: Option<f64>,
    pub hjb: Option<HjbSummary>,
    pub wall_time_s: f64,
}

impl std::fmt::Display for ExitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "out_dir = {}", self.out_dir.display())?;
        writeln!(f, "config_hash = {}", self.config_hash)?;
        writeln!(f, "frames = {}", self.frames)?;
        writeln!(f, "final_time = {}", self.final_time)?;
        writeln!(f, "final_mean = {:e}", self.final_mean)?;
        writeln!(f, "final_variance = {:e}", self.final_variance)?;
        writeln!(f, "peak_count = {}", self.peak_count)?;
        let locs: Vec<String> = self.peak_locations.iter().map(|x| format!("{x:.4}")).collect();
        writeln!(f, "peak_locations = [{}]", locs.join(", "))?;
        if let Some(a) = self.mean_active_fraction {
            writeln!(f, "mean_active_fraction = {a:.6}")?;
        }
        if let Some(h) = &self.hjb {
            writeln!(
                f,
                "hjb = {} iterations, residual {:e}{}",
                h.iterations,
                h.residual,
                if h.cache_hit { " (cached)" } else { "" }
            )?;
        }
        write!(f, "wall_time_s = {:.3}", self.wall_time_s)
    }
}

/// Builds the feedback for `cfg.control`, solving (or loading) the HJB
/// table into `table_dir` when needed.
pub fn build_feedback(cfg: &RunConfig, table_dir: &Path) -> Result<(BinaryFeedback, Option<HjbSummary>), CliError> {
    let Some(penalty) = cfg.control.penalty() else {
        return Ok((BinaryFeedback::None, None));
    };
    if !cfg.control.is_infinite_horizon() {
        let fb = BinaryFeedback::Instantaneous {
            params: cfg.instantaneous_params(penalty),
            bx: cfg.control_box(),
        };
        return Ok((fb, None));
    }
    let dir = if cfg.hjb.cache_dir.is_empty() {
        table_dir.to_path_buf()
    } else {
        PathBuf::from(&cfg.hjb.cache_dir)
    };
    let name = match penalty {
        Penalty::L1 => "feedback_table_l1.csv",
        Penalty::L2 => "feedback_table_l2.csv",
    };
    let (summary, table) = precompute_hjb(cfg, penalty, &dir.join(name))?;
    Ok((BinaryFeedback::Table(Arc::new(table)), Some(summary)))
}

/// Runs the configured experiment and writes its artifacts into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<ExitReport, CliError> {
    let start = Instant::now();
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let resolved = cfg.resolved();
    let config_hash = hex(&Sha256::digest(resolved.as_bytes()));
    write_atomic(&out_dir.join("config.resolved"), |w| w.write_all(resolved.as_bytes()))?;

    let (feedback, hjb) = build_feedback(cfg, out_dir)?;
    let ensemble = ParticleEnsemble::uniform(cfg.n_samples, cfg.omega_min, cfg.omega_max, cfg.epsilon, cfg.seed)
        .map_err(|e| CliError::invalid("n_samples", e.to_string()))?;
    let every = snapshot_interval(total_steps(cfg.t_final, cfg.epsilon), cfg.output.n_frames);
    let mut series = DensitySeries::new(config_hash.clone(), cfg.seed);
    let mut metrics_rng = stream_rng(cfg.seed, METRICS_STREAM);
    let alpha = cfg.epsilon;

    let final_ens = bci_run::<RunError>(ensemble, &cfg.kernel, &feedback, cfg.t_final, every, |snap| {
        let frame = histogram(snap.positions, snap.time, cfg.omega_min, cfg.omega_max, cfg.dx)
            .map_err(|e| RunError::Other(e.to_string()))?;
        let (mean, variance) = moments(snap.positions);
        let peaks = peak_count(&frame, DEFAULT_PROMINENCE);
        let (metrics, profile) = if feedback.is_none() {
            (summarize_controls(&[]), None)
        } else {
            let u = sampled_controls(snap.positions, &feedback, &cfg.kernel, alpha, &mut metrics_rng);
            let forcing: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
            let profile = binned_mean(snap.positions, &forcing, cfg.omega_min, cfg.omega_max, cfg.dx)
                .map_err(|e| RunError::Other(e.to_string()))?;
            (summarize_controls(&u), Some(profile))
        };
        let row = MomentRow {
            t: snap.time,
            mean,
            variance,
            l1_control_mass: metrics.l1_mass,
            active_fraction: metrics.active_fraction,
            peak_count: peaks.count,
        };
        series.push(frame, row, profile).map_err(|e| RunError::Other(e.to_string()))
    })
    .map_err(|e| match e {
        RunError::Ensemble(e) => CliError::invalid("t_final", e.to_string()),
        RunError::Other(m) => CliError::Format(m),
    })?;

    write_atomic(&out_dir.join("density.csv"), |w| series.write_density_csv(w))?;
    write_atomic(&out_dir.join("moments.csv"), |w| series.write_moments_csv(w))?;
    if cfg.output.emit_svg {
        let times: Vec<f64> = series.frames.iter().map(|f| f.t).collect();
        let rows: Vec<&[f64]> = series.frames.iter().map(|f| f.mass.as_slice()).collect();
        let doc = svg::heatmap(&times, cfg.omega_min, cfg.omega_max, &rows, svg::Scale::Sequential, "density");
        write_atomic(&out_dir.join("heatmap_density.svg"), |w| w.write_all(doc.as_bytes()))?;
        if !series.control.is_empty() {
            let rows: Vec<&[f64]> = series.control.iter().map(Vec::as_slice).collect();
            let doc = svg::heatmap(&times, cfg.omega_min, cfg.omega_max, &rows, svg::Scale::Diverging, "control");
            write_atomic(&out_dir.join("heatmap_control.svg"), |w| w.write_all(doc.as_bytes()))?;
        }
    }

    let last = series.frames.last().expect("observer runs at least twice");
    let peaks = peak_count(last, DEFAULT_PROMINENCE);
    let (final_mean, final_variance) = moments(final_ens.positions());
    let mean_active_fraction = (!feedback.is_none())
        .then(|| series.moments.iter().map(|r| r.active_fraction).sum::<f64>() / series.moments.len() as f64);
    Ok(ExitReport {
        out_dir: out_dir.to_path_buf(),
        config_hash,
        frames: series.frames.len(),
        final_time: final_ens.time(),
        final_mean,
        final_variance,
        peak_count: peaks.count,
        peak_locations: peaks.locations,
        mean_active_fraction,
        hjb,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

enum RunError {
    Ensemble(EnsembleError),
    Other(String),
}

impl From<EnsembleError> for RunError {
    fn from(e: EnsembleError) -> Self {
        Self::Ensemble(e)
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: String,
    pub final_variance: f64,
    pub peak_count: usize,
    /// First snapshot time with variance below the consensus threshold.
    pub time_to_consensus: f64,
    pub cumulative_l1_mass: f64,
    pub mean_active_fraction: f64,
}

pub const COMPARE_HEADER: &str = "run,final_variance,peak_count,time_to_consensus,cumulative_l1_mass,mean_active_fraction";

pub fn summarize_run(dir: &Path) -> Result<(RunSummary, Vec<f64>), CliError> {
    let grid = read_density_grid(&read_text(&dir.join("density.csv"))?).map_err(CliError::Format)?;
    let rows = read_moments_csv(&read_text(&dir.join("moments.csv"))?).map_err(CliError::Format)?;
    let last = rows
        .last()
        .ok_or_else(|| CliError::Format(format!("{}: moments.csv has no rows", dir.display())))?;
    let time_to_consensus = rows
        .iter()
        .find(|r| r.variance < CONSENSUS_VARIANCE)
        .map_or(f64::INFINITY, |r| r.t);
    // left Riemann sum over snapshot intervals
    let cumulative_l1_mass = rows.windows(2).map(|w| w[0].l1_control_mass * (w[1].t - w[0].t)).sum();
    let mean_active_fraction = rows.iter().map(|r| r.active_fraction).sum::<f64>() / rows.len() as f64;
    let summary = RunSummary {
        run: dir.display().to_string(),
        final_variance: last.variance,
        peak_count: last.peak_count,
        time_to_consensus,
        cumulative_l1_mass,
        mean_active_fraction,
    };
    Ok((summary, grid))
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<RunSummary>, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::invalid("compare", "need at least two run directories"));
    }
    let mut out = Vec::with_capacity(dirs.len());
    let mut first_grid: Option<Vec<f64>> = None;
    for d in dirs {
        let (s, grid) = summarize_run(d)?;
        match &first_grid {
            None => first_grid = Some(grid),
            Some(g) => {
                let same = g.len() == grid.len() && g.iter().zip(&grid).all(|(a, b)| (a - b).abs() <= 1e-12);
                if !same {
                    return Err(CliError::GeometryMismatch(dirs[0].clone(), d.clone()));
                }
            }
        }
        out.push(s);
    }
    Ok(out)
}

pub fn comparison_csv(rows: &[RunSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{COMPARE_HEADER}");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:e},{},{},{:e},{}",
            r.run, r.final_variance, r.peak_count, r.time_to_consensus, r.cumulative_l1_mass, r.mean_active_fraction
        );
    }
    s
}

/// Applies `KSC_THREADS` (0 or unset means one worker per core).
pub fn configure_threads() -> Result<(), CliError> {
    let n = match std::env::var("KSC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|e| CliError::invalid("KSC_THREADS", e.to_string()))?,
        Err(_) => 0,
    };
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::invalid("x", "y").exit_code(), 2);
        let nc = CliError::NonConvergence {
            context: "c".into(),
            source: HjbError::NonConvergence {
                iterations: 1,
                residual: 1.0,
            },
        };
        assert_eq!(nc.exit_code(), 3);
        assert_eq!(CliError::MissingArtifacts("a".into()).exit_code(), 4);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, |w| w.write_all(b"hi")).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "hi");
        let failed = write_atomic(&dir.path().join("b.txt"), |_| Err(io::Error::other("boom")));
        assert!(failed.is_err());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.txt")]);
    }

    #[test]
    fn hjb_key_tracks_relevant_fields_only() {
        let a = RunConfig::preset(Preset::Hk);
        let mut b = a.clone();
        b.seed = 99;
        b.n_samples = 10;
        assert_eq!(hjb_key(&a, Penalty::L1), hjb_key(&b, Penalty::L1));
        b.gamma_bar = 0.2;
        assert_ne!(hjb_key(&a, Penalty::L1), hjb_key(&b, Penalty::L1));
        assert_ne!(hjb_key(&a, Penalty::L1), hjb_key(&a, Penalty::L2));
    }
}

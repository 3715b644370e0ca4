//! Binary-interaction Monte Carlo for the controlled kinetic density.
//!
//! Each step of length `ε` draws a uniform random permutation of the
//! ensemble, pairs consecutive entries, and replaces both members of every
//! pair by their post-interaction states
//!
//! ```text
//! x* = x + α P(x,y)(y-x) + α S(x,y)
//! y* = y + α P(y,x)(x-y) + α S(y,x)
//! ```
//!
//! with `α = ε`. Since the time step equals `ε`, no particle keeps its
//! pre-interaction state unless it is left unpaired.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::hjb::FeedbackTable;
use crate::kernels::InteractionKernel;
use crate::sparse_feedback::{instantaneous_component, ControlBox, InstantaneousParams};

/// Pairs per step below which the parallel path is not worth it.
const PARALLEL_MIN_PAIRS: usize = 8192;

/// Feedback `S(x, y) = 2 u*(x, y)` applied inside binary interactions.
#[derive(Debug, Clone, PartialEq)]
pub enum BinaryFeedback {
    None,
    /// Closed-form one-step law, evaluated with controller step `2α`.
    Instantaneous {
        params: InstantaneousParams,
        bx: ControlBox,
    },
    /// Precomputed infinite-horizon feedback, nearest-node lookup.
    Table(Arc<FeedbackTable>),
}

impl BinaryFeedback {
    /// Optimal control `u*` of the agent at `x` interacting with `y`, where
    /// `drift = P(x, y)(y - x)`.
    #[inline]
    pub fn control(&self, x: f64, y: f64, drift: f64, alpha: f64) -> f64 {
        match self {
            BinaryFeedback::None => 0.0,
            BinaryFeedback::Instantaneous { params, bx } => {
                instantaneous_component(x, drift, &params.with_dt(2.0 * alpha), bx)
            }
            BinaryFeedback::Table(table) => table.lookup(x, y).0,
        }
    }

    /// `S(x, y)`.
    #[inline]
    pub fn forcing(&self, x: f64, y: f64, drift: f64, alpha: f64) -> f64 {
        2.0 * self.control(x, y, drift, alpha)
    }

    pub fn is_none(&self) -> bool {
        matches!(self, BinaryFeedback::None)
    }

    /// Largest `|u|` this feedback can produce.
    pub fn max_abs_control(&self) -> f64 {
        match self {
            BinaryFeedback::None => 0.0,
            BinaryFeedback::Instantaneous { bx, .. } => bx.max_abs(),
            BinaryFeedback::Table(t) => t
                .controls
                .iter()
                .map(|&(a, b)| a.abs().max(b.abs()))
                .fold(0.0, f64::max),
        }
    }
}

/// Post-interaction states of the pair `(x, y)`.
#[inline]
pub fn binary_interact(
    x: f64,
    y: f64,
    kernel: &InteractionKernel,
    feedback: &BinaryFeedback,
    alpha: f64,
) -> (f64, f64) {
    // radial kernels: P(y, x) = P(x, y)
    let drift = kernel.eval(x, y) * (y - x);
    let sx = feedback.forcing(x, y, drift, alpha);
    let sy = feedback.forcing(y, x, -drift, alpha);
    (x + alpha * drift + alpha * sx, y + alpha * -drift + alpha * sy)
}

/// Stochastic rounding: `floor(v) + 1` with probability `frac(v)`.
pub fn iround<R: Rng + ?Sized>(v: f64, rng: &mut R) -> u64 {
    debug_assert!(v >= 0.0);
    let floor = v.floor();
    let frac = v - floor;
    if frac > 0.0 && rng.random::<f64>() < frac {
        floor as u64 + 1
    } else {
        floor as u64
    }
}

/// View of an ensemble handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub step: u64,
    pub time: f64,
    pub positions: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least 2 particles, got {0}")]
    TooFew(usize),
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("positions must be finite")]
    NonFinite,
    #[error("final time {t_final} is shorter than one step of {epsilon}")]
    TooShort { t_final: f64, epsilon: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Monte Carlo samples of the density plus their random stream.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    step: u64,
    epsilon: f64,
    seed: u64,
    rng: ChaCha8Rng,
    order: Vec<u32>,
}

impl PartialEq for ParticleEnsemble {
    fn eq(&self, other: &Self) -> bool {
        self.positions == other.positions
            && self.step == other.step
            && self.epsilon == other.epsilon
            && self.seed == other.seed
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

/// RNG stream used by the interaction dynamics.
const DYNAMICS_STREAM: u64 = 0;
/// RNG stream used to sample initial data.
pub const INITIAL_STREAM: u64 = 1;

/// Reproducible generator for an auxiliary stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` samples of `Unif[lo, hi]` from the initial-data stream of `seed`.
pub fn sample_uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, INITIAL_STREAM);
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, epsilon: f64, seed: u64) -> Result<Self, EnsembleError> {
        if positions.len() < 2 {
            return Err(EnsembleError::TooFew(positions.len()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(EnsembleError::BadEpsilon(epsilon));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(EnsembleError::NonFinite);
        }
        let order = Vec::with_capacity(positions.len());
        Ok(Self {
            positions,
            step: 0,
            epsilon,
            seed,
            rng: stream_rng(seed, DYNAMICS_STREAM),
            order,
        })
    }

    /// Uniform initial data on `[lo, hi]`.
    pub fn uniform(n: usize, lo: f64, hi: f64, epsilon: f64, seed: u64) -> Result<Self, EnsembleError> {
        Self::new(sample_uniform(n, lo, hi, seed), epsilon, seed)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.epsilon
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            step: self.step,
            time: self.time(),
            positions: &self.positions,
        }
    }

    /// Draws the pairing for the next step: a shuffled index list whose
    /// first `2 * pairs` entries form consecutive pairs.
    fn draw_pairs(&mut self) -> usize {
        let n = self.positions.len();
        let pairs = (iround(n as f64 / 2.0, &mut self.rng) as usize).min(n / 2);
        self.order.clear();
        self.order.extend(0..n as u32);
        self.order.shuffle(&mut self.rng);
        pairs
    }

    /// Exact state for resuming a run.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            positions: self.positions.clone(),
            step: self.step,
            epsilon: self.epsilon,
            seed: self.seed,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(cp: &Checkpoint) -> Result<Self, EnsembleError> {
        let mut ens = Self::new(cp.positions.clone(), cp.epsilon, cp.seed)?;
        ens.step = cp.step;
        ens.rng.set_word_pos(cp.word_pos);
        Ok(ens)
    }
}

/// One Monte Carlo step with `α = δt = ε`.
pub fn bci_step(ens: &mut ParticleEnsemble, kernel: &InteractionKernel, feedback: &BinaryFeedback) {
    let pairs = ens.draw_pairs();
    let alpha = ens.epsilon;
    let order = &ens.order[..2 * pairs];
    let pos = &mut ens.positions;
    if pairs >= PARALLEL_MIN_PAIRS && rayon::current_num_threads() > 1 {
        let snapshot: &[f64] = pos;
        let updated: Vec<(f64, f64)> = order
            .par_chunks_exact(2)
            .map(|p| binary_interact(snapshot[p[0] as usize], snapshot[p[1] as usize], kernel, feedback, alpha))
            .collect();
        for (p, (xs, ys)) in order.chunks_exact(2).zip(updated) {
            pos[p[0] as usize] = xs;
            pos[p[1] as usize] = ys;
        }
    } else {
        for p in order.chunks_exact(2) {
            let (i, j) = (p[0] as usize, p[1] as usize);
            let (xs, ys) = binary_interact(pos[i], pos[j], kernel, feedback, alpha);
            pos[i] = xs;
            pos[j] = ys;
        }
    }
    ens.step += 1;
}

/// Number of steps `round(T / ε)`.
pub fn total_steps(t_final: f64, epsilon: f64) -> u64 {
    (t_final / epsilon).round() as u64
}

/// Observer cadence for `n_frames` snapshots over `steps` steps.
pub fn snapshot_interval(steps: u64, n_frames: u64) -> u64 {
    ((steps as f64 / n_frames.max(1) as f64).round() as u64).max(1)
}

/// Advances the ensemble to time `t_final`, calling `observer` at the
/// starting state, every `snapshot_every` steps, and at the end.
pub fn bci_run<E>(
    mut ens: ParticleEnsemble,
    kernel: &InteractionKernel,
    feedback: &BinaryFeedback,
    t_final: f64,
    snapshot_every: u64,
    mut observer: impl FnMut(&Snapshot<'_>) -> Result<(), E>,
) -> Result<ParticleEnsemble, E>
where
    E: From<EnsembleError>,
{
    let total = total_steps(t_final, ens.epsilon);
    if total == 0 {
        return Err(EnsembleError::TooShort {
            t_final,
            epsilon: ens.epsilon,
        }
        .into());
    }
    let every = snapshot_every.max(1);
    observer(&ens.snapshot())?;
    for k in 1..=total {
        bci_step(&mut ens, kernel, feedback);
        if k % every == 0 || k == total {
            observer(&ens.snapshot())?;
        }
    }
    Ok(ens)
}

/// Serializable ensemble state; floats are stored bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub positions: Vec<f64>,
    pub step: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub word_pos: u128,
}

const CHECKPOINT_MAGIC: &str = "ksc-checkpoint v1";

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "step {}", self.step)?;
        writeln!(w, "epsilon {:016x}", self.epsilon.to_bits())?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "word_pos {}", self.word_pos)?;
        writeln!(w, "n {}", self.positions.len())?;
        for x in &self.positions {
            writeln!(w, "{:016x}", x.to_bits())?;
        }
        w.flush()
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, EnsembleError> {
        let bad = |m: &str| EnsembleError::Checkpoint(m.to_string());
        let mut lines = r.lines().map(|l| l.map_err(|e| EnsembleError::Checkpoint(e.to_string())));
        let mut next = || lines.next().unwrap_or_else(|| Err(bad("truncated")));
        if next()? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        fn field(line: String, key: &str) -> Result<String, EnsembleError> {
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| EnsembleError::Checkpoint(format!("expected `{key}`")))
        }
        let parse_err = |e: std::num::ParseIntError| EnsembleError::Checkpoint(e.to_string());
        let step = field(next()?, "step")?.parse::<u64>().map_err(parse_err)?;
        let epsilon = f64::from_bits(u64::from_str_radix(&field(next()?, "epsilon")?, 16).map_err(parse_err)?);
        let seed = field(next()?, "seed")?.parse::<u64>().map_err(parse_err)?;
        let word_pos = field(next()?, "word_pos")?.parse::<u128>().map_err(parse_err)?;
        let n = field(next()?, "n")?.parse::<usize>().map_err(parse_err)?;
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            positions.push(f64::from_bits(u64::from_str_radix(next()?.trim(), 16).map_err(parse_err)?));
        }
        Ok(Self {
            positions,
            step,
            epsilon,
            seed,
            word_pos,
        })
    }
}

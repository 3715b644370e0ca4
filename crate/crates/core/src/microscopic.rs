//! Direct N-agent simulation and the two-agent discrete model.
//!
//! The N-agent update is the explicit Euler step
//!
//! ```text
//! x_i <- x_i + dt * [ (1/N) Σ_j P(x_i, x_j)(x_j - x_i) + (1/N) Σ_j S(x_i, x_j) ]
//! ```
//!
//! where `S = 2u*` is the binary feedback also used by the kinetic engine,
//! evaluated at interaction strength `dt / 2`. All sums read step-`k` states
//! and run in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::kernels::{confidence_ramp, InteractionKernel};
use crate::kinetic::{BinaryFeedback, Snapshot};
use crate::sparse_feedback::{IcLaw, Penalty};

/// One step of the controlled two-agent model with explicit controls.
#[inline]
pub fn binary_step(x_i: f64, x_j: f64, u_i: f64, u_j: f64, kernel: &InteractionKernel, dt: f64) -> (f64, f64) {
    let drift = kernel.eval(x_i, x_j) * (x_j - x_i);
    let half = 0.5 * dt;
    (x_i + half * drift + dt * u_i, x_j + half * -drift + dt * u_j)
}

/// One step of the two-agent model closed with `feedback`.
pub fn binary_feedback_step(
    x_i: f64,
    x_j: f64,
    kernel: &InteractionKernel,
    feedback: &BinaryFeedback,
    dt: f64,
) -> (f64, f64) {
    let drift = kernel.eval(x_i, x_j) * (x_j - x_i);
    let alpha = 0.5 * dt;
    let u_i = feedback.control(x_i, x_j, drift, alpha);
    let u_j = feedback.control(x_j, x_i, -drift, alpha);
    binary_step(x_i, x_j, u_i, u_j, kernel, dt)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid agent system: {0}")]
pub struct AgentSystemError(String);

/// State of the N-agent system.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSystem {
    states: Vec<f64>,
    dt: f64,
    step: u64,
}

impl AgentSystem {
    pub fn new(states: Vec<f64>, dt: f64) -> Result<Self, AgentSystemError> {
        if states.is_empty() {
            return Err(AgentSystemError("need at least one agent".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(AgentSystemError(format!("time step must be positive, got {dt}")));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(AgentSystemError("states must be finite".into()));
        }
        Ok(Self { states, dt, step: 0 })
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            step: self.step,
            time: self.time(),
            positions: &self.states,
        }
    }
}

/// Sum over `j` of `(P(x_i, x_j)(x_j - x_i), u(x_i, x_j))` in fixed order.
///
/// Eight interleaved accumulators keep the loop vectorizable while the
/// reduction order stays fixed.
#[inline(always)]
fn row_sums<K, F>(states: &[f64], xi: f64, kern: &K, fb: &F) -> (f64, f64)
where
    K: Fn(f64) -> f64,
    F: Fn(f64, f64, f64) -> f64,
{
    const W: usize = 8;
    let mut ds = [0.0f64; W];
    let mut us = [0.0f64; W];
    let chunks = states.chunks_exact(W);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..W {
            let d = c[l] - xi;
            let pd = kern(d.abs()) * d;
            ds[l] += pd;
            us[l] += fb(xi, c[l], pd);
        }
    }
    let fold = |a: [f64; W]| ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    let mut d_sum = fold(ds);
    let mut u_sum = fold(us);
    for &xj in tail {
        let d = xj - xi;
        let pd = kern(d.abs()) * d;
        d_sum += pd;
        u_sum += fb(xi, xj, pd);
    }
    (d_sum, u_sum)
}

/// Wider vectors where available. FMA stays disabled so every path rounds
/// identically and results do not depend on the host.
#[inline(always)]
fn row_sums_dispatch<K, F>(states: &[f64], xi: f64, kern: &K, fb: &F) -> (f64, f64)
where
    K: Fn(f64) -> f64,
    F: Fn(f64, f64, f64) -> f64,
{
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { row_sums_avx2(states, xi, kern, fb) };
    }
    row_sums(states, xi, kern, fb)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn row_sums_avx2<K, F>(states: &[f64], xi: f64, kern: &K, fb: &F) -> (f64, f64)
where
    K: Fn(f64) -> f64,
    F: Fn(f64, f64, f64) -> f64,
{
    row_sums(states, xi, kern, fb)
}

fn step_with<K, F>(states: &[f64], out: &mut [f64], dt: f64, kern: K, fb: F)
where
    K: Fn(f64) -> f64 + Sync,
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let inv_n = 1.0 / states.len() as f64;
    out.par_iter_mut().zip(states.par_iter()).for_each(|(o, &xi)| {
        let (d_sum, u_sum) = row_sums_dispatch(states, xi, &kern, &fb);
        // S = 2u*, averaged over partners
        *o = xi + dt * (d_sum * inv_n + 2.0 * u_sum * inv_n);
    });
}

fn step_kernel<K>(states: &[f64], out: &mut [f64], dt: f64, kern: K, feedback: &BinaryFeedback)
where
    K: Fn(f64) -> f64 + Sync,
{
    let alpha = 0.5 * dt;
    match feedback {
        BinaryFeedback::None => step_with(states, out, dt, kern, |_, _, _| 0.0),
        BinaryFeedback::Instantaneous { params, bx } => {
            let law = IcLaw::new(&params.with_dt(2.0 * alpha), bx);
            match params.penalty {
                Penalty::L1 => step_with(states, out, dt, kern, move |xi, _, pd| law.l1(xi, pd)),
                Penalty::L2 => step_with(states, out, dt, kern, move |xi, _, pd| law.l2(xi, pd)),
            }
        }
        BinaryFeedback::Table(table) => {
            step_with(states, out, dt, kern, |xi, xj, _| table.lookup(xi, xj).0)
        }
    }
}

/// One synchronous step of the N-agent system.
pub fn micro_step(sys: &mut AgentSystem, kernel: &InteractionKernel, feedback: &BinaryFeedback) {
    let mut out = vec![0.0; sys.states.len()];
    let (states, dt) = (&sys.states, sys.dt);
    match *kernel {
        InteractionKernel::BoundedConfidence { delta, smoothing } if smoothing > 0.0 => {
            step_kernel(states, &mut out, dt, move |r| confidence_ramp(r, delta, smoothing), feedback)
        }
        InteractionKernel::Constant => step_kernel(states, &mut out, dt, |_| 1.0, feedback),
        InteractionKernel::Zero => step_kernel(states, &mut out, dt, |_| 0.0, feedback),
        k => step_kernel(states, &mut out, dt, move |r| k.radial(r), feedback),
    }
    sys.states = out;
    sys.step += 1;
}

/// Number of steps needed to reach `t_final` with step `dt`.
pub fn steps_for(t_final: f64, dt: f64) -> u64 {
    ((t_final / dt) - 1e-9).ceil().max(0.0) as u64
}

/// Runs `ceil(T / dt)` steps, calling `observer` at step 0, every
/// `snapshot_every` steps, and at the final step.
pub fn micro_run<E>(
    mut sys: AgentSystem,
    kernel: &InteractionKernel,
    feedback: &BinaryFeedback,
    t_final: f64,
    snapshot_every: u64,
    mut observer: impl FnMut(&Snapshot<'_>) -> Result<(), E>,
) -> Result<AgentSystem, E> {
    let total = steps_for(t_final, sys.dt);
    let every = snapshot_every.max(1);
    observer(&sys.snapshot())?;
    for k in 1..=total {
        micro_step(&mut sys, kernel, feedback);
        if k % every == 0 || k == total {
            observer(&sys.snapshot())?;
        }
    }
    Ok(sys)
}

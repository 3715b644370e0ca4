//! Closed-form one-step feedback laws for the two-agent system.
//!
//! The one-step problem for agent `i` reduces to minimizing
//! `(1/2)(xi - u)^2 + gamma_bar * pen(u)` over `u` in the control box, where
//! `xi` is the velocity that would put the agent exactly on the target after
//! one step. For `pen = |u|` the minimizer is soft thresholding, for
//! `pen = u^2` it is a plain shrinkage by `1 + 2 gamma_bar`.

use crate::kernels::InteractionKernel;

/// Admissible control set `[u_min, u_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBox {
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for ControlBox {
    fn default() -> Self {
        Self {
            u_min: -1.0,
            u_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("control box [{u_min}, {u_max}] must satisfy u_min < u_max and contain 0")]
    InvalidBox { u_min: f64, u_max: f64 },
    #[error("invalid control parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

impl ControlBox {
    pub fn new(u_min: f64, u_max: f64) -> Result<Self, ControlError> {
        let b = Self { u_min, u_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.u_min < self.u_max && self.u_min <= 0.0 && 0.0 <= self.u_max {
            Ok(())
        } else {
            Err(ControlError::InvalidBox {
                u_min: self.u_min,
                u_max: self.u_max,
            })
        }
    }

    #[inline]
    pub fn project(&self, u: f64) -> f64 {
        u.max(self.u_min).min(self.u_max)
    }

    pub fn max_abs(&self) -> f64 {
        self.u_min.abs().max(self.u_max.abs())
    }
}

/// Projection onto the control box.
#[inline]
pub fn project_box(u: f64, bx: &ControlBox) -> f64 {
    bx.project(u)
}

/// Control penalization in the running cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Penalty {
    L1,
    L2,
}

impl Penalty {
    #[inline]
    pub fn cost(self, u: f64) -> f64 {
        match self {
            Penalty::L1 => u.abs(),
            Penalty::L2 => u * u,
        }
    }
}

/// Parameters of the one-step (instantaneous) control problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantaneousParams {
    /// Effective threshold `gamma / (beta dt^2)`.
    pub gamma_bar: f64,
    /// Discount factor `exp(-lambda dt)`.
    pub beta: f64,
    /// Controller time step.
    pub dt: f64,
    /// Desired state.
    pub target: f64,
    pub penalty: Penalty,
}

impl InstantaneousParams {
    /// Builds parameters from a discount rate `lambda`.
    pub fn from_rate(gamma_bar: f64, lambda: f64, dt: f64, target: f64, penalty: Penalty) -> Self {
        Self {
            gamma_bar,
            beta: (-lambda * dt).exp(),
            dt,
            target,
            penalty,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |field, reason: &str| {
            Err(ControlError::InvalidParam {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.gamma_bar >= 0.0 && self.gamma_bar.is_finite()) {
            return bad("gamma_bar", "must be non-negative and finite");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta", "must lie in (0, 1]");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "must be positive and finite");
        }
        if !self.target.is_finite() {
            return bad("target", "must be finite");
        }
        Ok(())
    }

    /// Raw control weight `gamma = gamma_bar * beta * dt^2`.
    pub fn gamma(&self) -> f64 {
        self.gamma_bar * self.beta * self.dt * self.dt
    }

    /// Same parameters with a different controller step (discount kept).
    pub fn with_dt(self, dt: f64) -> Self {
        Self { dt, ..self }
    }
}

/// Soft thresholding: `(1 - g/|xi|) xi` if `|xi| > g`, else 0.
#[inline]
pub fn soft_threshold(xi: f64, gamma_bar: f64) -> f64 {
    // sign(xi) * max(|xi| - g, 0); the tie |xi| = g maps to 0.
    (xi.abs() - gamma_bar).max(0.0).copysign(xi)
}

/// Unprojected minimizer of `(1/2)(xi - u)^2 + gamma_bar * pen(u)`.
#[inline]
pub fn shrink(xi: f64, gamma_bar: f64, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::L1 => soft_threshold(xi, gamma_bar),
        Penalty::L2 => xi / (1.0 + 2.0 * gamma_bar),
    }
}

/// Optimal one-step control of an agent at `x` whose pairwise interaction
/// term is `drift = P(x, y)(y - x)`.
#[inline]
pub fn instantaneous_component(x: f64, drift: f64, p: &InstantaneousParams, bx: &ControlBox) -> f64 {
    let law = IcLaw::new(p, bx);
    match p.penalty {
        Penalty::L1 => law.l1(x, drift),
        Penalty::L2 => law.l2(x, drift),
    }
}

/// The instantaneous law with every per-call constant folded, so the
/// per-pair work is branch-free multiply-adds. All engines go through it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IcLaw {
    target: f64,
    half_dt: f64,
    inv_dt: f64,
    gamma_bar: f64,
    l2_scale: f64,
    u_min: f64,
    u_max: f64,
}

impl IcLaw {
    #[inline(always)]
    pub(crate) fn new(p: &InstantaneousParams, bx: &ControlBox) -> Self {
        Self {
            target: p.target,
            half_dt: 0.5 * p.dt,
            inv_dt: 1.0 / p.dt,
            gamma_bar: p.gamma_bar,
            l2_scale: 1.0 / (1.0 + 2.0 * p.gamma_bar),
            u_min: bx.u_min,
            u_max: bx.u_max,
        }
    }

    #[inline(always)]
    fn xi(&self, x: f64, drift: f64) -> f64 {
        (self.target - x - self.half_dt * drift) * self.inv_dt
    }

    #[inline(always)]
    fn project(&self, u: f64) -> f64 {
        let u = if u < self.u_min { self.u_min } else { u };
        if u > self.u_max {
            self.u_max
        } else {
            u
        }
    }

    #[inline(always)]
    pub(crate) fn l1(&self, x: f64, drift: f64) -> f64 {
        let xi = self.xi(x, drift);
        // xi - clamp(xi, -g, g) is soft thresholding, exact in floating point
        let g = self.gamma_bar;
        let c = if xi < -g { -g } else { xi };
        let c = if c > g { g } else { c };
        self.project(xi - c)
    }

    #[inline(always)]
    pub(crate) fn l2(&self, x: f64, drift: f64) -> f64 {
        self.project(self.xi(x, drift) * self.l2_scale)
    }
}

/// Instantaneous feedback pair `(u_i, u_j)` for agents at `(x_i, x_j)`.
pub fn instantaneous_control(
    x_i: f64,
    x_j: f64,
    kernel: &InteractionKernel,
    p: &InstantaneousParams,
    bx: &ControlBox,
) -> (f64, f64) {
    let pk = kernel.eval(x_i, x_j);
    let d = x_j - x_i;
    (
        instantaneous_component(x_i, pk * d, p, bx),
        instantaneous_component(x_j, -(pk * d), p, bx),
    )
}

/// Running cost `ℓ` of the two-agent system.
pub fn running_cost(x_i: f64, x_j: f64, u_i: f64, u_j: f64, p: &InstantaneousParams) -> f64 {
    pair_cost(x_i, x_j, u_i, u_j, p.target, p.gamma(), p.penalty)
}

#[inline]
pub(crate) fn pair_cost(x_i: f64, x_j: f64, u_i: f64, u_j: f64, target: f64, gamma: f64, penalty: Penalty) -> f64 {
    let ei = target - x_i;
    let ej = target - x_j;
    0.5 * (ei * ei + ej * ej) + gamma * (penalty.cost(u_i) + penalty.cost(u_j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(gamma_bar: f64, dt: f64, penalty: Penalty) -> InstantaneousParams {
        InstantaneousParams::from_rate(gamma_bar, 0.05, dt, 0.0, penalty)
    }

    /// Grid-search argmin of `(1/2)(xi - u)^2 + g |u|` on `[lo, hi]`.
    fn argmin_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (f64::INFINITY, lo);
        for k in 0..=n {
            let u = lo + k as f64 * step;
            let v = f(u);
            if v < best.0 {
                best = (v, u);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_examples() {
        assert_abs_diff_eq!(soft_threshold(0.5, 0.3), 0.2, epsilon = 1e-15);
        assert_eq!(soft_threshold(0.2, 0.3), 0.0);
        assert_eq!(soft_threshold(0.0, 0.3), 0.0);
        assert_eq!(soft_threshold(0.3, 0.3), 0.0);
        assert_abs_diff_eq!(soft_threshold(-1.0, 0.3), -0.7, epsilon = 1e-15);
    }

    #[test]
    fn soft_threshold_matches_brute_force_for_negative_input() {
        // (beta/2)(dt xi - dt u)^2 + gamma |u| with gamma = gamma_bar beta dt^2
        let (beta, dt, gbar, xi) = (0.99, 0.1, 0.3, -1.0);
        let gamma = gbar * beta * dt * dt;
        let cost = |u: f64| 0.5 * beta * (dt * xi - dt * u).powi(2) + gamma * u.abs();
        let u = argmin_scalar(cost, -2.0, 2.0, 1e-5);
        assert_abs_diff_eq!(u, soft_threshold(xi, gbar), epsilon = 1e-5);
    }

    #[test]
    fn project_box_examples() {
        let b = ControlBox::default();
        assert_eq!(project_box(1.5, &b), 1.0);
        assert_eq!(project_box(0.3, &b), 0.3);
        assert_eq!(project_box(-2.0, &b), -1.0);
    }

    #[test]
    fn box_validation() {
        assert!(ControlBox::new(1.0, -1.0).is_err());
        assert!(ControlBox::new(0.5, 1.0).is_err());
        assert!(ControlBox::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn fixed_point_has_zero_control() {
        let k = InteractionKernel::hegselmann_krause();
        for pen in [Penalty::L1, Penalty::L2] {
            let (ui, uj) = instantaneous_control(0.0, 0.0, &k, &params(0.3, 0.1, pen), &ControlBox::default());
            assert_eq!((ui, uj), (0.0, 0.0));
        }
    }

    #[test]
    fn out_of_range_pair_saturates() {
        let k = InteractionKernel::BoundedConfidence {
            delta: 0.4,
            smoothing: 0.0,
        };
        let p = params(0.3, 0.1, Penalty::L1);
        let (ui, _) = instantaneous_control(0.2, 0.9, &k, &p, &ControlBox::default());
        assert_eq!(ui, -1.0);

        // brute force over the agent's own one-step cost
        let gamma = p.gamma();
        let cost = |u: f64| {
            let x1 = 0.2 + p.dt * u;
            0.5 * p.beta * x1 * x1 + gamma * u.abs()
        };
        let brute = argmin_scalar(cost, -1.0, 1.0, 1e-4);
        assert_abs_diff_eq!(brute, ui, epsilon = 1e-4);
    }

    #[test]
    fn l2_shrinkage_example() {
        // xi = 0.8 at target 0 with no interaction: x = -0.8 dt
        let p = params(0.3, 0.1, Penalty::L2);
        let u = instantaneous_component(-0.08, 0.0, &p, &ControlBox::default());
        assert_abs_diff_eq!(u, 0.5, epsilon = 1e-12);

        let gamma = p.gamma();
        let cost = |u: f64| {
            let x1 = -0.08 + p.dt * u;
            0.5 * p.beta * x1 * x1 + gamma * u * u
        };
        assert_abs_diff_eq!(argmin_scalar(cost, -1.0, 1.0, 1e-4), u, epsilon = 1e-4);
    }

    #[test]
    fn running_cost_examples() {
        let p = params(0.3, 0.1, Penalty::L1);
        assert_eq!(running_cost(0.0, 0.0, 0.0, 0.0, &p), 0.0);
        assert_abs_diff_eq!(running_cost(1.0, -1.0, 0.0, 0.0, &p), 1.0, epsilon = 1e-15);
        // independent evaluation with gamma = 0.1
        let cost = pair_cost(1.0, 0.0, 0.5, 0.0, 0.0, 0.1, Penalty::L1);
        let expected = 0.5 * (1.0f64 + 0.0) + 0.1 * (0.5f64.abs() + 0.0);
        assert_abs_diff_eq!(cost, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(cost, 0.55, epsilon = 1e-15);
        let l2 = pair_cost(1.0, 0.0, 0.5, 0.0, 0.0, 0.1, Penalty::L2);
        assert_abs_diff_eq!(l2, 0.525, epsilon = 1e-15);
    }

    #[test]
    fn gamma_round_trip() {
        let p = params(0.3, 0.1, Penalty::L1);
        assert_abs_diff_eq!(p.gamma() / (p.beta * p.dt * p.dt), 0.3, epsilon = 1e-14);
    }

    #[test]
    fn soft_threshold_optimality_on_random_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let step = 1e-3;
        for _ in 0..1000 {
            let xi: f64 = rng.random_range(-3.0..3.0);
            let g: f64 = rng.random_range(0.0..1.0);
            let u = argmin_scalar(|u| 0.5 * (xi - u).powi(2) + g * u.abs(), -4.0, 4.0, step);
            assert!((u - soft_threshold(xi, g)).abs() <= step, "xi={xi} g={g}");
        }
    }

    #[test]
    fn sparsity_region_is_exactly_zero() {
        let p = params(0.3, 0.1, Penalty::L1);
        let b = ControlBox::default();
        // |xi| <= gamma_bar  <=>  |x| <= gamma_bar * dt for drift 0
        for k in 0..=100 {
            let x = -0.03 + 0.0006 * k as f64;
            assert_eq!(instantaneous_component(x, 0.0, &p, &b), 0.0, "x={x}");
        }
        assert!(instantaneous_component(0.031, 0.0, &p, &b) != 0.0);
    }

    proptest! {
        #[test]
        fn laws_are_monotone_in_xi(a in -5.0..5.0f64, b in -5.0..5.0f64, g in 0.0..1.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for pen in [Penalty::L1, Penalty::L2] {
                prop_assert!(shrink(lo, g, pen) <= shrink(hi, g, pen));
            }
        }

        #[test]
        fn soft_threshold_magnitude(xi in -5.0..5.0f64, g in 0.0..1.0f64) {
            let s = soft_threshold(xi, g);
            prop_assert!((s.abs() - (xi.abs() - g).max(0.0)).abs() < 1e-12);
            prop_assert!(s == 0.0 || s.signum() == xi.signum());
        }

        #[test]
        fn projection_is_idempotent(u in -10.0..10.0f64) {
            let b = ControlBox::default();
            prop_assert_eq!(project_box(project_box(u, &b), &b), project_box(u, &b));
        }

        #[test]
        fn exchange_symmetry(xi in -1.0..1.0f64, xj in -1.0..1.0f64, g in 0.0..1.0f64,
                             dt in 0.01..0.5f64, l1 in any::<bool>()) {
            let pen = if l1 { Penalty::L1 } else { Penalty::L2 };
            let p = params(g, dt, pen);
            let b = ControlBox::default();
            for k in [InteractionKernel::hegselmann_krause(), InteractionKernel::attraction_repulsion()] {
                let (a1, a2) = instantaneous_control(xi, xj, &k, &p, &b);
                let (b1, b2) = instantaneous_control(xj, xi, &k, &p, &b);
                prop_assert_eq!(a1, b2);
                prop_assert_eq!(a2, b1);
            }
        }
    }
}

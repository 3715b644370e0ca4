//! Infinite-horizon dynamic programming for the two-agent system.
//!
//! The value function lives on a uniform `n x n` grid over `Ω x Ω`. Off-grid
//! successors are evaluated by bilinear interpolation and clamped into the
//! domain. The Bellman operator minimizes jointly over a uniform control grid
//! on `U x U` that always contains 0.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::kernels::InteractionKernel;
use crate::microscopic::binary_step;
use crate::sparse_feedback::{pair_cost, ControlBox, Penalty};

/// Controls whose one-step value is within this of the minimum are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HjbError {
    #[error("invalid HJB parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("grid geometry mismatch: expected {expected:?}, found {found:?}")]
    GeometryMismatch {
        expected: GridGeometry,
        found: GridGeometry,
    },
    #[error("policy iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("malformed feedback table: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] IoErrorString),
}

/// `std::io::Error` is not `Clone`/`PartialEq`; keep its message.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct IoErrorString(pub String);

impl From<std::io::Error> for HjbError {
    fn from(e: std::io::Error) -> Self {
        HjbError::Io(IoErrorString(e.to_string()))
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> HjbError {
    HjbError::InvalidParam {
        field,
        reason: reason.into(),
    }
}

/// Uniform node layout on `[omega_min, omega_max]`, shared by both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_nodes: usize,
}

impl GridGeometry {
    pub fn new(omega_min: f64, omega_max: f64, n_nodes: usize) -> Result<Self, HjbError> {
        if !(omega_min.is_finite() && omega_max.is_finite() && omega_min < omega_max) {
            return Err(invalid("omega", "bounds must be finite with min < max"));
        }
        if n_nodes < 2 {
            return Err(invalid("n_nodes", "need at least 2 nodes per axis"));
        }
        Ok(Self {
            omega_min,
            omega_max,
            n_nodes,
        })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.omega_max - self.omega_min) / (self.n_nodes - 1) as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.n_nodes {
            self.omega_max
        } else {
            self.omega_min + k as f64 * self.spacing()
        }
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.omega_min).min(self.omega_max)
    }

    /// Index of the node nearest to `x` (after clamping).
    #[inline]
    pub fn nearest(&self, x: f64) -> usize {
        let s = (self.clamp(x) - self.omega_min) / self.spacing();
        (s.round() as usize).min(self.n_nodes - 1)
    }

    /// Lower cell index and fractional offset for interpolation at `x`.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (self.clamp(x) - self.omega_min) / self.spacing();
        let i0 = (s.floor() as usize).min(self.n_nodes - 2);
        (i0, s - i0 as f64)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_nodes * self.n_nodes
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_nodes + j
    }
}

/// Value function samples, row-major in `x` then `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    pub fn from_fn(geometry: GridGeometry, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = geometry.n_nodes;
        let values = (0..n * n)
            .map(|k| f(geometry.node(k / n), geometry.node(k % n)))
            .collect();
        Self { geometry, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.geometry.index(i, j)]
    }

    /// Bilinear interpolation, `x` first.
    #[inline]
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let (i0, wx) = self.geometry.locate(x);
        let (j0, wy) = self.geometry.locate(y);
        bilinear(&self.values, self.geometry.n_nodes, i0, wx, j0, wy)
    }

    pub fn sup_distance(&self, other: &ValueGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
fn bilinear(v: &[f64], n: usize, i0: usize, wx: f64, j0: usize, wy: f64) -> f64 {
    let r0 = i0 * n + j0;
    let r1 = r0 + n;
    let lo = (1.0 - wx) * v[r0] + wx * v[r1];
    let hi = (1.0 - wx) * v[r0 + 1] + wx * v[r1 + 1];
    (1.0 - wy) * lo + wy * hi
}

/// Optimal control pairs on the value-function grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    pub geometry: GridGeometry,
    pub controls: Vec<(f64, f64)>,
    /// Value function at the same nodes.
    pub values: Vec<f64>,
}

impl FeedbackTable {
    /// Nearest-node control pair `(u_i, u_j)` for agents at `(x, y)`.
    #[inline]
    pub fn lookup(&self, x: f64, y: f64) -> (f64, f64) {
        let i = self.geometry.nearest(x);
        let j = self.geometry.nearest(y);
        self.controls[self.geometry.index(i, j)]
    }

    pub fn value_grid(&self) -> ValueGrid {
        ValueGrid {
            geometry: self.geometry,
            values: self.values.clone(),
        }
    }

    /// Writes `x,y,u_i,u_j,value` rows, row-major in `x` then `y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,u_i,u_j,value")?;
        let n = self.geometry.n_nodes;
        for i in 0..n {
            for j in 0..n {
                let k = self.geometry.index(i, j);
                let (ui, uj) = self.controls[k];
                writeln!(
                    w,
                    "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    self.geometry.node(i),
                    self.geometry.node(j),
                    ui,
                    uj,
                    self.values[k]
                )?;
            }
        }
        w.flush()
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, HjbError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| HjbError::Format("empty file".into()))??;
        if header.trim() != "x,y,u_i,u_j,value" {
            return Err(HjbError::Format(format!("unexpected header `{}`", header.trim())));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| HjbError::Format(format!("line {}: {e}", lineno + 2)))?;
            if fields.len() != 5 {
                return Err(HjbError::Format(format!("line {}: expected 5 fields", lineno + 2)));
            }
            rows.push([fields[0], fields[1], fields[2], fields[3], fields[4]]);
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n < 2 || n * n != rows.len() {
            return Err(HjbError::Format(format!("{} rows is not a square grid", rows.len())));
        }
        let geometry = GridGeometry::new(rows[0][0], rows[rows.len() - 1][0], n)?;
        let tol = 1e-9 * geometry.spacing();
        for (k, row) in rows.iter().enumerate() {
            let (i, j) = (k / n, k % n);
            if (row[0] - geometry.node(i)).abs() > tol || (row[1] - geometry.node(j)).abs() > tol {
                return Err(HjbError::Format(format!("row {} is off the uniform grid", k + 2)));
            }
        }
        Ok(Self {
            geometry,
            controls: rows.iter().map(|r| (r[2], r[3])).collect(),
            values: rows.iter().map(|r| r[4]).collect(),
        })
    }
}

/// Running cost used inside the Bellman operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageCost {
    /// `(1/2)[(x̂-x)^2 + (x̂-y)^2] + gamma * pen(u)` with
    /// `gamma = gamma_bar * beta * dt^2`.
    Tracking,
    /// `ℓ ≡ c`, for testing the recursion itself.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbParams {
    pub dt: f64,
    pub lambda: f64,
    pub gamma_bar: f64,
    pub penalty: Penalty,
    pub target: f64,
    pub n_controls: usize,
    pub tol: f64,
    pub max_policy_iters: usize,
    pub max_eval_iters: usize,
    pub cost: StageCost,
}

impl Default for HjbParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            lambda: 0.05,
            gamma_bar: 0.3,
            penalty: Penalty::L1,
            target: 0.0,
            n_controls: 21,
            tol: 1e-6,
            max_policy_iters: 200,
            max_eval_iters: 10_000,
            cost: StageCost::Tracking,
        }
    }
}

impl HjbParams {
    pub fn beta(&self) -> f64 {
        (-self.lambda * self.dt).exp()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_bar * self.beta() * self.dt * self.dt
    }

    pub fn validate(&self) -> Result<(), HjbError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive and finite"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", "must be positive so that beta < 1"));
        }
        if !(self.gamma_bar >= 0.0 && self.gamma_bar.is_finite()) {
            return Err(invalid("gamma_bar", "must be non-negative and finite"));
        }
        if self.n_controls == 0 || self.n_controls % 2 == 0 {
            return Err(invalid("n_controls", "must be odd so that 0 is a control node"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.max_policy_iters == 0 || self.max_eval_iters == 0 {
            return Err(invalid("max_iters", "iteration caps must be positive"));
        }
        if let StageCost::Constant(c) = self.cost {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(invalid("cost", "constant cost must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Uniform control nodes on `[u_min, u_max]` with 0 included exactly.
pub fn control_grid(bx: &ControlBox, n: usize) -> Vec<f64> {
    let m = (n / 2) as i64;
    (0..n as i64)
        .map(|k| {
            let t = k - m;
            match t.cmp(&0) {
                std::cmp::Ordering::Less => bx.u_min * ((-t) as f64 / m as f64),
                std::cmp::Ordering::Equal => 0.0,
                std::cmp::Ordering::Greater => bx.u_max * (t as f64 / m as f64),
            }
        })
        .collect()
}

/// Per-node interpolation data for one control component.
#[derive(Debug, Clone, Copy)]
struct Axis {
    cell: usize,
    weight: f64,
}

/// The discretized Bellman operator for one problem instance.
///
/// Successor locations are precomputed: the `x` component of the one-step
/// map depends only on `u_i`, the `y` component only on `u_j`.
pub struct BellmanModel {
    geometry: GridGeometry,
    controls: Vec<f64>,
    beta: f64,
    dt: f64,
    target: f64,
    gamma: f64,
    penalty: Penalty,
    cost: StageCost,
    // node-major, n_controls entries per node
    x_axis: Vec<Axis>,
    y_axis: Vec<Axis>,
}

impl BellmanModel {
    pub fn new(
        geometry: GridGeometry,
        kernel: &InteractionKernel,
        params: &HjbParams,
        bx: &ControlBox,
    ) -> Result<Self, HjbError> {
        params.validate()?;
        kernel.validate().map_err(|e| invalid(e.field, e.reason))?;
        bx.validate().map_err(|e| invalid("box", e.to_string()))?;
        let controls = control_grid(bx, params.n_controls);
        let nc = controls.len();
        let n = geometry.n_nodes;
        let mut x_axis = Vec::with_capacity(n * n * nc);
        let mut y_axis = Vec::with_capacity(n * n * nc);
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (geometry.node(i), geometry.node(j));
                for &u in &controls {
                    // the x-successor ignores u_j and vice versa
                    let (xp, _) = binary_step(x, y, u, 0.0, kernel, params.dt);
                    let (_, yp) = binary_step(x, y, 0.0, u, kernel, params.dt);
                    let (cell, weight) = geometry.locate(xp);
                    x_axis.push(Axis { cell, weight });
                    let (cell, weight) = geometry.locate(yp);
                    y_axis.push(Axis { cell, weight });
                }
            }
        }
        Ok(Self {
            geometry,
            beta: params.beta(),
            dt: params.dt,
            target: params.target,
            gamma: params.gamma(),
            penalty: params.penalty,
            cost: params.cost,
            controls,
            x_axis,
            y_axis,
        })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn check(&self, grid: &ValueGrid) -> Result<(), HjbError> {
        if grid.geometry != self.geometry || grid.values.len() != self.geometry.len() {
            return Err(HjbError::GeometryMismatch {
                expected: self.geometry,
                found: grid.geometry,
            });
        }
        Ok(())
    }

    #[inline]
    fn stage(&self, x: f64, y: f64, ui: f64, uj: f64) -> f64 {
        match self.cost {
            StageCost::Tracking => self.dt * pair_cost(x, y, ui, uj, self.target, self.gamma, self.penalty),
            StageCost::Constant(c) => self.dt * c,
        }
    }

    /// `β V(x⁺(a, b)) + dt ℓ` for control indices `(a, b)` at `node`.
    #[inline]
    fn q_value(&self, v: &[f64], node: usize, a: usize, b: usize) -> f64 {
        let nc = self.controls.len();
        let n = self.geometry.n_nodes;
        let ax = self.x_axis[node * nc + a];
        let ay = self.y_axis[node * nc + b];
        let interp = bilinear(v, n, ax.cell, ax.weight, ay.cell, ay.weight);
        let (x, y) = (self.geometry.node(node / n), self.geometry.node(node % n));
        self.beta * interp + self.stage(x, y, self.controls[a], self.controls[b])
    }

    /// Minimum and tie-broken argmin at one node.
    fn minimize_node(&self, v: &[f64], node: usize, q: &mut Vec<f64>) -> (f64, usize, usize) {
        let nc = self.controls.len();
        q.clear();
        let mut best = f64::INFINITY;
        for a in 0..nc {
            for b in 0..nc {
                let val = self.q_value(v, node, a, b);
                best = best.min(val);
                q.push(val);
            }
        }
        let mut arg = (usize::MAX, usize::MAX);
        let mut arg_l1 = f64::INFINITY;
        for a in 0..nc {
            for b in 0..nc {
                if q[a * nc + b] <= best + TIE_TOLERANCE {
                    let l1 = self.controls[a].abs() + self.controls[b].abs();
                    // controls are ascending, so the first hit among equal l1 is lexicographic
                    if l1 < arg_l1 {
                        arg_l1 = l1;
                        arg = (a, b);
                    }
                }
            }
        }
        (best, arg.0, arg.1)
    }

    /// One synchronous Bellman sweep.
    pub fn update(&self, grid: &ValueGrid) -> Result<(ValueGrid, FeedbackTable), HjbError> {
        self.check(grid)?;
        let (values, policy) = self.sweep(&grid.values);
        Ok(self.package(values, &policy))
    }

    fn sweep(&self, v: &[f64]) -> (Vec<f64>, Vec<(usize, usize)>) {
        let results: Vec<(f64, usize, usize)> = (0..self.geometry.len())
            .into_par_iter()
            .map_init(Vec::new, |q, node| self.minimize_node(v, node, q))
            .collect();
        let values = results.iter().map(|r| r.0).collect();
        let policy = results.iter().map(|r| (r.1, r.2)).collect();
        (values, policy)
    }

    fn package(&self, values: Vec<f64>, policy: &[(usize, usize)]) -> (ValueGrid, FeedbackTable) {
        let controls = policy
            .iter()
            .map(|&(a, b)| (self.controls[a], self.controls[b]))
            .collect();
        let table = FeedbackTable {
            geometry: self.geometry,
            controls,
            values: values.clone(),
        };
        (
            ValueGrid {
                geometry: self.geometry,
                values,
            },
            table,
        )
    }

    /// Iterates `V <- β V(x⁺(π)) + dt ℓ(π)` for a fixed policy until the
    /// contraction error bound `δ β / (1 - β)` drops below `tol`.
    fn evaluate_policy(&self, v0: &[f64], policy: &[(usize, usize)], tol: f64, max_iters: usize) -> Vec<f64> {
        let nc = self.controls.len();
        let n = self.geometry.n_nodes;
        let plan: Vec<(Axis, Axis, f64)> = policy
            .iter()
            .enumerate()
            .map(|(node, &(a, b))| {
                let (x, y) = (self.geometry.node(node / n), self.geometry.node(node % n));
                (
                    self.x_axis[node * nc + a],
                    self.y_axis[node * nc + b],
                    self.stage(x, y, self.controls[a], self.controls[b]),
                )
            })
            .collect();
        let bound = (1.0 - self.beta) / self.beta;
        let mut v = v0.to_vec();
        let mut next = vec![0.0; v.len()];
        for _ in 0..max_iters {
            next.par_iter_mut().zip(plan.par_iter()).for_each(|(out, (ax, ay, c))| {
                *out = self.beta * bilinear(&v, n, ax.cell, ax.weight, ay.cell, ay.weight) + c;
            });
            let delta = sup_diff(&v, &next);
            std::mem::swap(&mut v, &mut next);
            if delta <= tol * bound {
                break;
            }
        }
        v
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One Bellman sweep; builds the operator on the fly.
pub fn bellman_update(
    grid: &ValueGrid,
    kernel: &InteractionKernel,
    params: &HjbParams,
    bx: &ControlBox,
) -> Result<(ValueGrid, FeedbackTable), HjbError> {
    BellmanModel::new(grid.geometry, kernel, params, bx)?.update(grid)
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueGrid,
    pub table: FeedbackTable,
    /// Number of Bellman (improvement) sweeps.
    pub iterations: usize,
    /// Sup-norm of the last Bellman update.
    pub residual: f64,
}

/// Semi-Lagrangian policy iteration (Howard's algorithm).
pub fn solve_policy_iteration(
    initial: &ValueGrid,
    kernel: &InteractionKernel,
    params: &HjbParams,
    bx: &ControlBox,
) -> Result<Solution, HjbError> {
    let model = BellmanModel::new(initial.geometry, kernel, params, bx)?;
    model.check(initial)?;
    policy_iteration(&model, &initial.values, params)
}

pub fn policy_iteration(model: &BellmanModel, initial: &[f64], params: &HjbParams) -> Result<Solution, HjbError> {
    let (mut v, mut policy) = model.sweep(initial);
    let mut iterations = 1;
    loop {
        let evaluated = model.evaluate_policy(&v, &policy, params.tol, params.max_eval_iters);
        let (improved, new_policy) = model.sweep(&evaluated);
        iterations += 1;
        let residual = sup_diff(&evaluated, &improved);
        let stable = new_policy == policy;
        v = improved;
        policy = new_policy;
        if stable || residual < params.tol {
            let (values, table) = model.package(v, &policy);
            return Ok(Solution {
                values,
                table,
                iterations,
                residual,
            });
        }
        if iterations >= params.max_policy_iters {
            return Err(HjbError::NonConvergence { iterations, residual });
        }
    }
}

/// Plain value iteration, stopped on the contraction error bound.
pub fn solve_value_iteration(
    initial: &ValueGrid,
    kernel: &InteractionKernel,
    params: &HjbParams,
    bx: &ControlBox,
    max_iters: usize,
) -> Result<Solution, HjbError> {
    let model = BellmanModel::new(initial.geometry, kernel, params, bx)?;
    model.check(initial)?;
    let bound = (1.0 - model.beta) / model.beta;
    let mut v = initial.values.clone();
    for it in 1..=max_iters {
        let (next, policy) = model.sweep(&v);
        let residual = sup_diff(&v, &next);
        v = next;
        if residual <= params.tol * bound {
            let (values, table) = model.package(v, &policy);
            return Ok(Solution {
                values,
                table,
                iterations: it,
                residual,
            });
        }
        if it == max_iters {
            return Err(HjbError::NonConvergence {
                iterations: it,
                residual,
            });
        }
    }
    Err(HjbError::NonConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(-1.0, 1.0, n).unwrap()
    }

    #[test]
    fn geometry_helpers() {
        let g = geom(101);
        assert_abs_diff_eq!(g.spacing(), 0.02, epsilon = 1e-15);
        assert_eq!(g.node(0), -1.0);
        assert_eq!(g.node(100), 1.0);
        assert_eq!(g.node(50), 0.0);
        assert_eq!(g.nearest(0.0), 50);
        assert_eq!(g.nearest(5.0), 100);
        assert_eq!(g.nearest(-5.0), 0);
        assert_eq!(g.locate(1.0), (99, 1.0));
        assert!(GridGeometry::new(1.0, -1.0, 5).is_err());
        assert!(GridGeometry::new(-1.0, 1.0, 1).is_err());
    }

    #[test]
    fn control_grid_contains_zero() {
        let c = control_grid(&ControlBox::default(), 21);
        assert_eq!(c.len(), 21);
        assert_eq!(c[10], 0.0);
        assert_eq!(c[0], -1.0);
        assert_eq!(c[20], 1.0);
        for k in 0..21 {
            assert_eq!(c[k], -c[20 - k]);
        }
        assert_eq!(control_grid(&ControlBox::default(), 1), vec![0.0]);
    }

    #[test]
    fn params_validation() {
        let mut p = HjbParams::default();
        assert!(p.validate().is_ok());
        p.n_controls = 4;
        assert!(p.validate().is_err());
        let p = HjbParams {
            lambda: 0.0,
            ..HjbParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = geom(9);
        let v = ValueGrid::from_fn(g, |x, y| 1.0 + 2.0 * x - 0.5 * y + 0.25 * x * y);
        for &(x, y) in &[(0.1, 0.3), (-0.77, 0.52), (1.0, 1.0), (-1.0, 0.999)] {
            let exact = 1.0 + 2.0 * x - 0.5 * y + 0.25 * x * y;
            assert_abs_diff_eq!(v.interpolate(x, y), exact, epsilon = 1e-12);
        }
        // clamped outside
        assert_abs_diff_eq!(v.interpolate(3.0, 0.0), v.interpolate(1.0, 0.0), epsilon = 0.0);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let k = InteractionKernel::hegselmann_krause();
        let model = BellmanModel::new(geom(5), &k, &HjbParams::default(), &ControlBox::default()).unwrap();
        let err = model.update(&ValueGrid::zeros(geom(7))).unwrap_err();
        assert!(matches!(err, HjbError::GeometryMismatch { .. }));
    }

    #[test]
    fn target_node_stays_put_at_zero_cost() {
        let k = InteractionKernel::hegselmann_krause();
        let p = HjbParams {
            n_controls: 5,
            ..HjbParams::default()
        };
        let g = geom(11);
        let model = BellmanModel::new(g, &k, &p, &ControlBox::default()).unwrap();
        let mut v = ValueGrid::zeros(g);
        for _ in 0..20 {
            let (next, table) = model.update(&v).unwrap();
            assert_eq!(table.lookup(0.0, 0.0), (0.0, 0.0));
            assert_eq!(next.at(5, 5), 0.0);
            assert!(next.values.iter().all(|&x| x >= 0.0));
            v = next;
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = geom(4);
        let table = FeedbackTable {
            geometry: g,
            controls: (0..16).map(|k| (k as f64 * 0.1 - 0.7, 1.0 / 3.0)).collect(),
            values: (0..16).map(|k| (k as f64).sqrt()).collect(),
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,u_i,u_j,value\n"));
        assert_eq!(text.lines().count(), 17);
        let back = FeedbackTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(FeedbackTable::read_csv(&b"a,b\n"[..]).is_err());
        assert!(FeedbackTable::read_csv(&b"x,y,u_i,u_j,value\n0,0,0,0,0\n"[..]).is_err());
        assert!(FeedbackTable::read_csv(&b"x,y,u_i,u_j,value\n0,0,0,zz,0\n"[..]).is_err());
    }

    #[test]
    fn lookup_clamps_and_rounds() {
        let g = geom(3);
        let table = FeedbackTable {
            geometry: g,
            controls: (0..9).map(|k| (k as f64, -(k as f64))).collect(),
            values: vec![0.0; 9],
        };
        assert_eq!(table.lookup(0.0, 0.0), (4.0, -4.0));
        assert_eq!(table.lookup(-0.9, 0.7), (2.0, -2.0));
        assert_eq!(table.lookup(9.0, -9.0), (6.0, -6.0));
    }
}

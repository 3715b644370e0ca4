//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use ksc_core::{InteractionKernel, Penalty};

/// Brute-force dynamic programming on a small grid, written without any of
/// the solver's machinery: every control pair at every visited node is
/// expanded recursively down to depth `k`.
pub struct Enumerator {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub controls: Vec<f64>,
    pub kernel: InteractionKernel,
    pub dt: f64,
    pub beta: f64,
    pub gamma: f64,
    pub penalty: Penalty,
    pub target: f64,
    pub terminal: Vec<f64>,
}

impl Enumerator {
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n - 1 {
            self.hi
        } else {
            self.lo + k as f64 * (self.hi - self.lo) / (self.n - 1) as f64
        }
    }

    fn cell(&self, x: f64) -> (usize, f64) {
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        let s = (x.clamp(self.lo, self.hi) - self.lo) / h;
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }

    fn pen(&self, u: f64) -> f64 {
        match self.penalty {
            Penalty::L1 => u.abs(),
            Penalty::L2 => u * u,
        }
    }

    /// Depth-`k` optimal cost from node `(i, j)`.
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        if k == 0 {
            return self.terminal[i * self.n + j];
        }
        let (x, y) = (self.node(i), self.node(j));
        let p = self.kernel.eval(x, y);
        let mut best = f64::INFINITY;
        for &ui in &self.controls {
            for &uj in &self.controls {
                let xp = x + 0.5 * self.dt * p * (y - x) + self.dt * ui;
                let yp = y + 0.5 * self.dt * p * (x - y) + self.dt * uj;
                let (a, wa) = self.cell(xp);
                let (b, wb) = self.cell(yp);
                let next = (1.0 - wb) * ((1.0 - wa) * self.value(a, b, k - 1) + wa * self.value(a + 1, b, k - 1))
                    + wb * ((1.0 - wa) * self.value(a, b + 1, k - 1) + wa * self.value(a + 1, b + 1, k - 1));
                let ex = self.target - x;
                let ey = self.target - y;
                let stage = 0.5 * (ex * ex + ey * ey) + self.gamma * (self.pen(ui) + self.pen(uj));
                best = best.min(self.beta * next + self.dt * stage);
            }
        }
        best
    }
}

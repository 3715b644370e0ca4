//! Pairwise interaction kernels `P(x, y)`.
//!
//! Every kernel here is radial: it depends only on `|x - y|`, which makes it
//! symmetric in its arguments. The engines rely on that and evaluate the
//! kernel once per pair.

use std::fmt;

/// Interaction function selecting who influences whom and how strongly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InteractionKernel {
    /// Smoothed bounded-confidence indicator: 1 within `delta - smoothing`,
    /// 0 beyond `delta + smoothing`, linear in between.
    BoundedConfidence { delta: f64, smoothing: f64 },
    /// Regularized power law `(sigma + r)^a - (sigma + r)^b`.
    AttractionRepulsion { a: f64, b: f64, sigma: f64 },
    /// `P = 1` everywhere (linear consensus).
    Constant,
    /// No interaction.
    Zero,
}

/// Confidence radius of the opinion test problem.
pub const HK_DELTA: f64 = 0.4;
/// Default ramp half-width of the smoothed indicator.
pub const HK_SMOOTHING: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid kernel parameter `{field}`: {reason}")]
pub struct KernelError {
    pub field: &'static str,
    pub reason: String,
}

impl InteractionKernel {
    pub fn hegselmann_krause() -> Self {
        Self::BoundedConfidence {
            delta: HK_DELTA,
            smoothing: HK_SMOOTHING,
        }
    }

    pub fn attraction_repulsion() -> Self {
        Self::AttractionRepulsion {
            a: 1.0,
            b: -1.0,
            sigma: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |field, reason: &str| {
            Err(KernelError {
                field,
                reason: reason.to_string(),
            })
        };
        match *self {
            Self::BoundedConfidence { delta, smoothing } => {
                if !(delta > 0.0 && delta.is_finite()) {
                    return bad("delta", "must be positive and finite");
                }
                if !(smoothing >= 0.0 && smoothing.is_finite()) {
                    return bad("smoothing", "must be non-negative and finite");
                }
                Ok(())
            }
            Self::AttractionRepulsion { a, b, sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return bad("sigma", "must be positive and finite");
                }
                if !a.is_finite() {
                    return bad("a", "must be finite");
                }
                if !b.is_finite() {
                    return bad("b", "must be finite");
                }
                Ok(())
            }
            Self::Constant | Self::Zero => Ok(()),
        }
    }

    /// `P(x, y)`.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.radial((x - y).abs())
    }

    /// The kernel as a function of the distance `r = |x - y|`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        match *self {
            Self::BoundedConfidence { delta, smoothing } => confidence_ramp(r, delta, smoothing),
            Self::AttractionRepulsion { a, b, sigma } => power_law(r, a, b, sigma),
            Self::Constant => 1.0,
            Self::Zero => 0.0,
        }
    }

    /// Upper bound of `|P|` over distances in `[0, diameter]`.
    pub fn max_abs(&self, diameter: f64) -> f64 {
        match *self {
            Self::BoundedConfidence { .. } | Self::Constant => 1.0,
            Self::Zero => 0.0,
            Self::AttractionRepulsion { .. } => {
                // Both terms are monotone in r, so the extremes sit at the ends.
                self.radial(0.0).abs().max(self.radial(diameter).abs())
            }
        }
    }
}

impl fmt::Display for InteractionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BoundedConfidence { delta, smoothing } => {
                write!(f, "bounded_confidence(delta={delta}, smoothing={smoothing})")
            }
            Self::AttractionRepulsion { a, b, sigma } => {
                write!(f, "attraction_repulsion(a={a}, b={b}, sigma={sigma})")
            }
            Self::Constant => f.write_str("constant"),
            Self::Zero => f.write_str("zero"),
        }
    }
}

#[inline]
pub(crate) fn confidence_ramp(r: f64, delta: f64, smoothing: f64) -> f64 {
    if smoothing == 0.0 {
        return if r <= delta { 1.0 } else { 0.0 };
    }
    // Saturates to exactly 1 below delta - smoothing and exactly 0 above
    // delta + smoothing.
    let v = (delta + smoothing - r) * (0.5 / smoothing);
    let v = if v > 0.0 { v } else { 0.0 };
    if v < 1.0 {
        v
    } else {
        1.0
    }
}

#[inline]
fn power_law(r: f64, a: f64, b: f64, sigma: f64) -> f64 {
    let s = sigma + r;
    pow(s, a) - pow(s, b)
}

#[inline]
fn pow(base: f64, exp: f64) -> f64 {
    // The reference exponents are small integers; powi is exact for them.
    if exp == exp.trunc() && exp.abs() <= 16.0 {
        base.powi(exp as i32)
    } else {
        base.powf(exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bounded_confidence_inside_and_outside() {
        let k = InteractionKernel::BoundedConfidence {
            delta: 0.4,
            smoothing: 0.02,
        };
        assert_eq!(k.eval(0.0, 0.1), 1.0);
        assert_eq!(k.eval(0.0, 0.9), 0.0);
        assert_eq!(k.eval(0.0, 0.38), 1.0);
        assert_eq!(k.eval(0.0, 0.43), 0.0);
        assert_relative_eq!(k.eval(0.0, 0.4), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn attraction_repulsion_values() {
        let k = InteractionKernel::attraction_repulsion();
        assert_relative_eq!(k.eval(0.3, 0.3), 1e-4 - 1e4, epsilon = 1e-9);
        assert_relative_eq!(k.eval(0.0, 1.0 - 1e-4), 0.0, epsilon = 1e-12);
        // repulsive near contact, attractive at range
        assert!(k.eval(0.0, 0.5) < 0.0);
        assert!(k.eval(0.0, 1.5) > 0.0);
    }

    #[test]
    fn sharp_indicator_when_smoothing_is_zero() {
        let k = InteractionKernel::BoundedConfidence {
            delta: 0.4,
            smoothing: 0.0,
        };
        assert_eq!(k.radial(0.4), 1.0);
        assert_eq!(k.radial(0.4000001), 0.0);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let k = InteractionKernel::BoundedConfidence {
            delta: 0.0,
            smoothing: 0.1,
        };
        assert_eq!(k.validate().unwrap_err().field, "delta");
        let k = InteractionKernel::BoundedConfidence {
            delta: 0.4,
            smoothing: -0.1,
        };
        assert_eq!(k.validate().unwrap_err().field, "smoothing");
        let k = InteractionKernel::AttractionRepulsion {
            a: 1.0,
            b: -1.0,
            sigma: 0.0,
        };
        assert_eq!(k.validate().unwrap_err().field, "sigma");
        assert!(InteractionKernel::hegselmann_krause().validate().is_ok());
    }

    #[test]
    fn max_abs_bounds_samples() {
        for k in [
            InteractionKernel::hegselmann_krause(),
            InteractionKernel::attraction_repulsion(),
            InteractionKernel::Constant,
            InteractionKernel::Zero,
        ] {
            let m = k.max_abs(2.0);
            for i in 0..=2000 {
                let r = i as f64 * 1e-3;
                assert!(k.radial(r).abs() <= m + 1e-9, "{k} at r={r}");
            }
        }
    }

    #[test]
    fn symmetry_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let kernels = [
            InteractionKernel::hegselmann_krause(),
            InteractionKernel::attraction_repulsion(),
        ];
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-1.0..=1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            for k in &kernels {
                assert_eq!(k.eval(x, y), k.eval(y, x));
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_confidence_is_monotone(r1 in 0.0..2.0f64, r2 in 0.0..2.0f64,
                                          delta in 0.05..1.0f64, s in 0.0..0.05f64) {
            let k = InteractionKernel::BoundedConfidence { delta, smoothing: s };
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let (a, b) = (k.radial(lo), k.radial(hi));
            prop_assert!(a >= b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn smoothing_converges_to_sharp_indicator(r in 0.0..2.0f64) {
            prop_assume!((r - 0.4).abs() > 1e-6);
            let sharp = if r <= 0.4 { 1.0 } else { 0.0 };
            let mut s = 0.1;
            let mut last = f64::INFINITY;
            while s > 1e-9 {
                let k = InteractionKernel::BoundedConfidence { delta: 0.4, smoothing: s };
                last = (k.radial(r) - sharp).abs();
                s *= 0.5;
            }
            prop_assert!(last < 1e-12);
        }
    }
}

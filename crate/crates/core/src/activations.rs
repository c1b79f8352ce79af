//! Activation functions with exact first/second derivatives and the
//! per-function Lipschitz (`M_f`) and smoothness (`L_f`) constants that feed
//! the theoretical bound calculators.
//!
//! The supported set is Sigmoid, Tanh, Softplus, CELU(alpha), the generalized
//! soft-clipping activation, Identity, and ReLU. ReLU is flagged "outside
//! theory": it has a Lipschitz constant but no smoothness constant, so bound
//! computation refuses architectures containing it.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Vec64;
use crate::Result;

/// An elementwise activation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softplus,
    /// Continuously differentiable ELU with scale `alpha > 0`.
    Celu(f64),
    /// Generalized soft-clipping onto `(s1, s2)` with sharpness `s > 0`:
    /// `f(x) = (1/s) * log((1 + e^{s(x - s1)}) / (1 + e^{s(x - s2)})) + s1`.
    SoftClip { s1: f64, s2: f64, s: f64 },
    Identity,
    /// Not smooth; usable for training experiments but excluded from the
    /// theoretical bound calculators.
    Relu,
}

/// Numerically stable `log(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Validate the activation's own parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Celu(alpha) if alpha <= 0.0 => {
                Err(Error::invalid("alpha", "CELU requires alpha > 0"))
            }
            Activation::SoftClip { s1, s2, s } => {
                if s1 > s2 {
                    Err(Error::invalid("s1/s2", "SoftClip requires s1 <= s2"))
                } else if s <= 0.0 {
                    Err(Error::invalid("s", "SoftClip requires s > 0"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Function value.
    pub fn act(&self, x: f64) -> f64 {
        match *self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Celu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * ((x / alpha).exp() - 1.0)
                }
            }
            Activation::SoftClip { s1, s2, s } => {
                // (1/s) * (softplus(a) - softplus(b)) + s1 with a = s(x - s1),
                // b = s(x - s2). Rewritten per region via the identity
                // softplus(u) = u + softplus(-u) so that only softplus of
                // non-positive arguments is ever evaluated; the naive form
                // subtracts two large nearly-equal numbers in the tails, whose
                // rounding noise breaks monotonicity at the ULP level.
                let a = s * (x - s1);
                let b = s * (x - s2);
                let f = if x <= s1 {
                    s1 + (softplus(a) - softplus(b)) / s
                } else if x >= s2 {
                    s2 + (softplus(-a) - softplus(-b)) / s
                } else {
                    x + (softplus(-a) - softplus(b)) / s
                };
                // The clamp removes residual rounding at the edges so the
                // output range [s1, s2] holds exactly.
                f.clamp(s1, s2)
            }
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }

    /// Exact first derivative.
    pub fn act_d1(&self, x: f64) -> f64 {
        match *self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(x),
            Activation::Celu(alpha) => {
                if x > 0.0 {
                    1.0
                } else {
                    (x / alpha).exp()
                }
            }
            Activation::SoftClip { s1, s2, s } => sigmoid(s * (x - s1)) - sigmoid(s * (x - s2)),
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact second derivative (one-sided at the ReLU/CELU kink).
    pub fn act_d2(&self, x: f64) -> f64 {
        match *self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Celu(alpha) => {
                if x > 0.0 {
                    0.0
                } else {
                    (x / alpha).exp() / alpha
                }
            }
            Activation::SoftClip { s1, s2, s } => {
                let a = sigmoid(s * (x - s1));
                let b = sigmoid(s * (x - s2));
                s * (a * (1.0 - a) - b * (1.0 - b))
            }
            Activation::Identity => 0.0,
            Activation::Relu => 0.0,
        }
    }

    /// Lipschitz constant `M_f = sup |f'|` and smoothness constant
    /// `L_f = sup |f''|`.
    ///
    /// ReLU returns `(1, None)`: it is 1-Lipschitz but has no smoothness
    /// constant. The SoftClip constants are `(1, s/4)`: the derivative
    /// `sigma(s(x-s1)) - sigma(s(x-s2))` is bounded by 1 and its derivative by
    /// `s/4`; both are verified numerically on a dense grid in the test suite.
    pub fn constants(&self) -> (f64, Option<f64>) {
        match *self {
            Activation::Sigmoid => (0.25, Some(0.25)),
            Activation::Tanh => (1.0, Some(1.0)),
            Activation::Softplus => (1.0, Some(0.25)),
            Activation::Celu(alpha) => (1.0, Some(1.0 / alpha)),
            Activation::SoftClip { s, .. } => (1.0, Some(s / 4.0)),
            Activation::Identity => (1.0, Some(0.0)),
            Activation::Relu => (1.0, None),
        }
    }

    /// Apply elementwise to a vector.
    pub fn act_vec(&self, v: &Vec64) -> Vec64 {
        v.map(|x| self.act(x))
    }

    /// First derivative elementwise.
    pub fn act_d1_vec(&self, v: &Vec64) -> Vec64 {
        v.map(|x| self.act_d1(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Vec64};
    use approx::assert_relative_eq;

    const ALL: [Activation; 7] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Softplus,
        Activation::Celu(2.0),
        Activation::SoftClip {
            s1: -1.0,
            s2: 1.0,
            s: 5.0,
        },
        Activation::Identity,
        Activation::Relu,
    ];

    #[test]
    fn point_values() {
        assert_relative_eq!(Activation::Sigmoid.act(0.0), 0.5);
        assert_relative_eq!(Activation::Tanh.act_d1(0.0), 1.0);
        // Softplus f'' at 0 = sigma(0)(1 - sigma(0)) = 1/4.
        assert_relative_eq!(Activation::Softplus.act_d2(0.0), 0.25);
    }

    #[test]
    fn soft_clip_midpoint_exact() {
        // Symmetric clip: f(0) = (s1 + s2) / 2 = 0 exactly.
        let f = Activation::SoftClip {
            s1: -1.0,
            s2: 1.0,
            s: 5.0,
        };
        assert_eq!(f.act(0.0), 0.0);
    }

    #[test]
    fn soft_clip_saturates_to_bounds() {
        let f = Activation::SoftClip {
            s1: 0.0,
            s2: 1.0,
            s: 5.0,
        };
        assert!((f.act(-100.0) - 0.0).abs() < 1e-6);
        assert!((f.act(100.0) - 1.0).abs() < 1e-6);
        // Stability at extreme inputs.
        assert!(f.act(700.0).is_finite());
        assert!(f.act(-700.0).is_finite());
    }

    #[test]
    fn soft_clip_derivative_vanishes_at_infinity() {
        let f = Activation::SoftClip {
            s1: -1.0,
            s2: 1.0,
            s: 5.0,
        };
        assert!(f.act_d1(20.0).abs() < 1e-6);
        assert!(f.act_d1(-20.0).abs() < 1e-6);
    }

    #[test]
    fn constants_table() {
        assert_eq!(Activation::Sigmoid.constants(), (0.25, Some(0.25)));
        assert_eq!(Activation::Tanh.constants(), (1.0, Some(1.0)));
        assert_eq!(Activation::Softplus.constants(), (1.0, Some(0.25)));
        assert_eq!(Activation::Celu(2.0).constants(), (1.0, Some(0.5)));
        let sc = Activation::SoftClip {
            s1: 0.0,
            s2: 1.0,
            s: 4.0,
        };
        assert_eq!(sc.constants(), (1.0, Some(1.0)));
        assert_eq!(Activation::Relu.constants(), (1.0, None));
    }

    /// Grid used by the derivative/constant audits. Step 1e-3 over
    /// [-50, 50] is the contract; we use the full grid here (fast in
    /// release/test profile).
    fn grid() -> impl Iterator<Item = f64> {
        (-50_000..=50_000).map(|i| i as f64 * 1e-3)
    }

    #[test]
    fn derivatives_bounded_by_constants_on_grid() {
        for a in ALL {
            let (m, l) = a.constants();
            for x in grid() {
                assert!(
                    a.act_d1(x).abs() <= m + 1e-12,
                    "{a:?} |f'({x})| = {} > M = {m}",
                    a.act_d1(x).abs()
                );
                if let Some(l) = l {
                    assert!(
                        a.act_d2(x).abs() <= l + 1e-12,
                        "{a:?} |f''({x})| = {} > L = {l}",
                        a.act_d2(x).abs()
                    );
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences_on_grid() {
        // Coarser grid for the FD sweep; 1e-3 everywhere would do ~7e5 probes
        // per activation for no extra coverage.
        for a in ALL {
            if a == Activation::Relu {
                continue; // kink: FD straddles the non-differentiable point
            }
            for i in -500..=500 {
                let x = i as f64 * 0.1;
                if let Activation::Celu(_) = a {
                    if x.abs() < 1e-3 {
                        continue; // second derivative jumps at 0
                    }
                }
                let xv = Vec64::from_element(1, x);
                let d1 = finite_diff_grad(|v| a.act(v[0]), &xv, None).unwrap()[0];
                assert!(
                    (d1 - a.act_d1(x)).abs() < 1e-6,
                    "{a:?} d1 mismatch at {x}: fd {d1} vs {}",
                    a.act_d1(x)
                );
                let d2 = finite_diff_grad(|v| a.act_d1(v[0]), &xv, None).unwrap()[0];
                assert!(
                    (d2 - a.act_d2(x)).abs() < 1e-6,
                    "{a:?} d2 mismatch at {x}: fd {d2} vs {}",
                    a.act_d2(x)
                );
            }
        }
    }

    #[test]
    fn soft_clip_monotone_and_bounded_on_grid() {
        let f = Activation::SoftClip {
            s1: -2.0,
            s2: 3.0,
            s: 5.0,
        };
        for x in grid() {
            assert!(f.act_d1(x) >= 0.0);
            let y = f.act(x);
            assert!((-2.0..=3.0).contains(&y), "f({x}) = {y} outside [s1, s2]");
        }
    }

    #[test]
    fn soft_clip_numeric_sup_confirms_constants() {
        // Dense numeric sup of |f'| and |f''| confirms M = 1 and L = s/4.
        let s = 4.0;
        let f = Activation::SoftClip {
            s1: -3.0,
            s2: 3.0,
            s,
        };
        let mut sup_d1: f64 = 0.0;
        let mut sup_d2: f64 = 0.0;
        for x in grid() {
            sup_d1 = sup_d1.max(f.act_d1(x).abs());
            sup_d2 = sup_d2.max(f.act_d2(x).abs());
        }
        // Wide clip interval: the derivative plateau actually reaches ~1 and
        // the curvature peak reaches ~s/4.
        assert!(sup_d1 <= 1.0 + 1e-12 && sup_d1 > 0.99, "sup|f'| = {sup_d1}");
        assert!(
            sup_d2 <= s / 4.0 + 1e-12 && sup_d2 > 0.9 * s / 4.0,
            "sup|f''| = {sup_d2}"
        );
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Activation::Celu(-1.0).validate().is_err());
        assert!(Activation::SoftClip {
            s1: 1.0,
            s2: 0.0,
            s: 5.0
        }
        .validate()
        .is_err());
        assert!(Activation::SoftClip {
            s1: 0.0,
            s2: 1.0,
            s: 0.0
        }
        .validate()
        .is_err());
    }
}

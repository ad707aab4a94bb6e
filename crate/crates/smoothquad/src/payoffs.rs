//! Payoff specifications and the scalar functions whose zeros locate the
//! payoff discontinuity along the smoothing coordinate.
//!
//! Every shipped payoff has the form `g(x) = max(φ(x), 0)` (calls) or
//! `g(x) = 1_{φ(x) ≥ 0}` (digitals) with affine inner function
//! `φ(x) = s · (Σ_i c_i x_i − K)`, where the sign `s` is an orientation flag
//! for decreasing payoffs (puts/spreads). Composed with a model's
//! affine-factor representation, `φ` along the smoothing coordinate becomes
//! the polynomial `P(y₁) = s · (Σ_i c_i x₀^{(i)} Π_n (a_{i,n} + b_{i,n} y₁) − K)`,
//! whose value and exact derivative [`RootFunction`] evaluates in one pass.

use crate::error::{Error, Result};
use crate::models::{PathEngine, PathFactors};

/// Payoff structure: how `g` post-processes the inner function `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    /// `g = max(φ, 0)` — continuous with a kink (calls).
    PositivePart,
    /// `g = 1_{φ ≥ 0}` — a jump (digitals).
    Indicator,
}

/// Smoothness class of the payoff along the discontinuity: the payoff is
/// `C^{η−1}` with a kink in the η-th derivative (η = 0 means a jump).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegularityOrder {
    pub eta: u32,
}

/// A payoff `g(x) = kind(φ(x))` with affine `φ(x) = orientation·(Σ c_i x_i − K)`.
#[derive(Debug, Clone)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    /// Strike `K`.
    pub strike: f64,
    /// Basket weights `c`, one per asset (a single 1.0 for vanilla payoffs).
    pub weights: Vec<f64>,
    /// `+1.0` for increasing `φ`, `−1.0` for decreasing (spread/put-style).
    pub orientation: f64,
    /// Raw coordinate index along which `φ` is strictly monotone.
    pub monotone_coord: usize,
}

impl PayoffSpec {
    fn new(kind: PayoffKind, weights: Vec<f64>, strike: f64) -> Result<Self> {
        if !(strike.is_finite() && strike > 0.0) {
            return Err(Error::parameter("strike", "must be positive"));
        }
        if weights.is_empty() {
            return Err(Error::parameter("weights", "need at least one asset weight"));
        }
        if weights.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::parameter("weights", "weights must be nonnegative"));
        }
        if weights.iter().all(|c| *c == 0.0) {
            return Err(Error::parameter("weights", "weights must not all be zero"));
        }
        Ok(PayoffSpec {
            kind,
            strike,
            weights,
            orientation: 1.0,
            monotone_coord: 0,
        })
    }

    /// Flip to the decreasing-φ variant (put/spread orientation).
    pub fn flipped(mut self) -> Self {
        self.orientation = -self.orientation;
        self
    }

    pub fn n_assets(&self) -> usize {
        self.weights.len()
    }

    /// The smoothness order η: 0 for a jump, 1 for a kink.
    pub fn regularity(&self) -> RegularityOrder {
        RegularityOrder {
            eta: match self.kind {
                PayoffKind::Indicator => 0,
                PayoffKind::PositivePart => 1,
            },
        }
    }

    /// Inner function `φ(x) = orientation · (Σ c_i x_i − K)`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        let basket: f64 = self.weights.iter().zip(x).map(|(c, xi)| c * xi).sum();
        self.orientation * (basket - self.strike)
    }

    /// Gradient of `φ` (constant for affine payoffs).
    pub fn phi_grad(&self) -> Vec<f64> {
        self.weights.iter().map(|c| self.orientation * c).collect()
    }

    /// Outer structure applied to a `φ` value.
    #[inline]
    pub fn g_of_phi(&self, phi: f64) -> f64 {
        match self.kind {
            PayoffKind::PositivePart => phi.max(0.0),
            PayoffKind::Indicator => {
                if phi >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Payoff at terminal prices.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.g_of_phi(self.phi(x))
    }
}

/// European call on a single asset: `g = max(x − K, 0)`.
pub fn make_call(strike: f64) -> Result<PayoffSpec> {
    PayoffSpec::new(PayoffKind::PositivePart, vec![1.0], strike)
}

/// Cash-or-nothing digital on a single asset: `g = 1_{x ≥ K}`.
pub fn make_digital(strike: f64) -> Result<PayoffSpec> {
    PayoffSpec::new(PayoffKind::Indicator, vec![1.0], strike)
}

/// Basket call: `g = max(Σ c_j x_j − K, 0)`.
pub fn make_basket_call(weights: Vec<f64>, strike: f64) -> Result<PayoffSpec> {
    PayoffSpec::new(PayoffKind::PositivePart, weights, strike)
}

/// `φ` composed with the path map, as a function of the smoothing coordinate
/// `y₁` with all other coordinates frozen: the payoff discontinuity sits at
/// its zeros.
#[derive(Debug)]
pub struct RootFunction {
    factors: PathFactors,
    x0: Vec<f64>,
    weights: Vec<f64>,
    strike: f64,
    orientation: f64,
    kind: PayoffKind,
}

impl RootFunction {
    /// `P(y₁) = φ(terminals(y₁))`.
    pub fn p(&self, y1: f64) -> f64 {
        let mut basket = 0.0;
        for (i, (c, x0)) in self.weights.iter().zip(&self.x0).enumerate() {
            if *c != 0.0 {
                basket += c * self.factors.terminal(i, *x0, y1);
            }
        }
        self.orientation * (basket - self.strike)
    }

    /// `(P, dP/dy₁)` with the derivative exact via the product rule.
    pub fn p_and_slope(&self, y1: f64) -> (f64, f64) {
        let mut basket = 0.0;
        let mut slope = 0.0;
        for (i, (c, x0)) in self.weights.iter().zip(&self.x0).enumerate() {
            if *c != 0.0 {
                let (v, s) = self.factors.terminal_and_slope(i, *x0, y1);
                basket += c * v;
                slope += c * s;
            }
        }
        (self.orientation * (basket - self.strike), self.orientation * slope)
    }

    /// Payoff value at `y₁`: `g(φ)` evaluated through `P`.
    pub fn payoff_at(&self, y1: f64) -> f64 {
        let phi = self.p(y1);
        match self.kind {
            PayoffKind::PositivePart => phi.max(0.0),
            PayoffKind::Indicator => {
                if phi >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Build the root function for one coordinate vector.
///
/// `w` supplies every coordinate except that `w[0]` is ignored — the factor
/// representation isolates `y₁` exactly, so the returned object is valid for
/// all `y₁` values.
pub fn root_function(payoff: &PayoffSpec, engine: &PathEngine, w: &[f64]) -> Result<RootFunction> {
    if payoff.n_assets() != engine.model().n_assets() {
        return Err(Error::Shape {
            context: "payoff weights vs model assets",
            expected: engine.model().n_assets(),
            actual: payoff.n_assets(),
        });
    }
    let factors = engine.factors(w)?;
    Ok(RootFunction {
        factors,
        x0: engine.model().initial_prices(),
        weights: payoff.weights.clone(),
        strike: payoff.strike,
        orientation: payoff.orientation,
        kind: payoff.kind,
    })
}

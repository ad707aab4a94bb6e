//! Numerical smoothing for option pricing under discretized dynamics.
//!
//! Payoffs with kinks or jumps (digitals, calls, basket calls) make
//! deterministic quadrature and quasi–Monte Carlo lose their rate advantage.
//! This crate restores smoothness by locating the payoff discontinuity along
//! one distinguished Gaussian coordinate with Newton's method and integrating
//! that coordinate out semi-analytically with tailored Gauss rules. The
//! smoothed integrand is then fed to adaptive sparse-grid quadrature,
//! randomized lattice rules, or plain Monte Carlo, optionally wrapped in
//! Richardson extrapolation of the time-stepping bias.
//!
//! Module map:
//!
//! * [`hierarchy`] — Brownian-bridge coordinates, the coarse-coordinate
//!   rotation, level indexing;
//! * [`models`] — GBM and Heston path discretizations and their terminal
//!   values as affine functions of the smoothing coordinate;
//! * [`payoffs`] — payoff specifications and the scalar root functions whose
//!   zeros are the discontinuity locations;
//! * [`smoothing`] — Newton root finding and one-dimensional preintegration;
//! * [`quadrature`] — Gauss rules, tensor grids, and dimension-adaptive
//!   sparse quadrature;
//! * [`sampling`] — Monte Carlo and randomized rank-1 lattice estimators;
//! * [`estimators`] — end-to-end pricing plans, Richardson extrapolation,
//!   error decomposition, and work-parameter advice;
//! * [`analysis`] — convergence studies and diagnostic probes.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod hierarchy;
pub mod lattice;
pub mod models;
pub mod par;
pub mod payoffs;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod smoothing;
pub mod special;

pub use error::{Error, Result};

/// A real-valued function of a fixed number of Gaussian coordinates.
///
/// Implementations must be cheap to call from multiple threads; all
/// estimators in this crate evaluate integrands behind a shared reference.
/// Evaluation is fallible so that non-finite intermediate states surface as
/// typed errors instead of propagating NaNs into quadrature sums.
pub trait Integrand: Sync {
    /// Number of coordinates consumed per evaluation.
    fn dim(&self) -> usize;

    /// Evaluate at one coordinate vector of length [`Self::dim`].
    fn eval(&self, x: &[f64]) -> Result<f64>;
}

/// Adapter turning a closure into an [`Integrand`].
pub struct FnIntegrand<F: Fn(&[f64]) -> Result<f64> + Sync> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> FnIntegrand<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnIntegrand { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> Integrand for FnIntegrand<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                context: "integrand evaluation point",
                expected: self.dim,
                actual: x.len(),
            });
        }
        (self.f)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fn_integrand_checks_shape() {
        let f = FnIntegrand::new(2, |x| Ok(x[0] + x[1]));
        assert_eq!(f.dim(), 2);
        assert_eq!(f.eval(&[1.0, 2.0]).unwrap(), 3.0);
        assert!(f.eval(&[1.0]).is_err());
    }
}

//! Monte Carlo and randomized rank-1 lattice estimators.
//!
//! Both estimators consume an [`Integrand`] over i.i.d. standard-normal
//! inputs. Monte Carlo draws its normals from per-batch ChaCha substreams;
//! the lattice rule lays down `n_points` deterministic points per random
//! shift and maps them through the inverse normal CDF, so its statistical
//! error comes from the spread across a handful of independent shifts
//! rather than from the points themselves.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::{generating_vector, lattice_point_into, validate_vector};
use crate::par::par_map_indexed;
use crate::rng::derive_rng;
pub use crate::special::inverse_normal_cdf;
use crate::Integrand;

/// Monte Carlo estimator parameters.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub n_samples: u64,
    pub seed: u64,
    /// Samples per derived RNG substream. The batch partition is part of the
    /// result's identity: it fixes which substream generates which sample,
    /// independent of thread count.
    pub batch_size: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_samples: 100_000,
            seed: 0,
            batch_size: 8_192,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::parameter("n_samples", "need at least two samples"));
        }
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Randomized rank-1 lattice estimator parameters.
#[derive(Debug, Clone)]
pub struct LatticeConfig {
    /// Lattice size per shift; a power of two.
    pub n_points: u64,
    pub n_shifts: u32,
    pub generating_vector: Vec<u32>,
    pub seed: u64,
}

impl LatticeConfig {
    /// Configuration backed by the embedded generating vector, truncated to
    /// `dim` components and reduced modulo `n_points`. Thirty shifts.
    pub fn embedded(dim: usize, n_points: u64, seed: u64) -> Result<Self> {
        Ok(LatticeConfig {
            n_points,
            n_shifts: 30,
            generating_vector: generating_vector(dim, n_points)?,
            seed,
        })
    }

    pub fn with_shifts(mut self, n_shifts: u32) -> Self {
        self.n_shifts = n_shifts;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        validate_vector(&self.generating_vector, self.n_points)?;
        if self.n_shifts < 2 {
            return Err(Error::parameter("n_shifts", "need at least two shifts"));
        }
        if dim == 0 {
            return Err(Error::parameter("integrand", "need at least one input dimension"));
        }
        if dim > self.generating_vector.len() {
            return Err(Error::parameter(
                "generating_vector",
                format!(
                    "integrand dimension {dim} exceeds the {}-component generating vector",
                    self.generating_vector.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Breakdown of an estimate's error into discretization bias, smoothing
/// error, and quadrature/statistical error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSplit {
    pub bias: f64,
    pub smoothing: f64,
    pub quadrature: f64,
}

/// The result of running an estimator: a value, an accompanying error
/// measure (95% CI half-width for sampling methods, adaptive-front residual
/// for sparse-grid quadrature), and the evaluation count spent.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    pub stat_error: f64,
    pub work: u64,
    pub components: Option<ErrorSplit>,
}

impl Estimate {
    pub fn new(value: f64, stat_error: f64, work: u64) -> Self {
        debug_assert!(stat_error >= 0.0);
        Estimate {
            value,
            stat_error,
            work,
            components: None,
        }
    }
}

pub(crate) fn mean_and_ci(sum: f64, sumsq: f64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, 1.96 * (var / nf).sqrt())
}

/// Plain Monte Carlo over i.i.d. standard-normal inputs.
///
/// Samples are generated in batches of `cfg.batch_size`, one derived RNG
/// substream per batch, evaluated in parallel and reduced in batch order, so
/// the estimate is bit-identical across thread counts.
pub fn mc_estimate(f: &(impl Integrand + ?Sized), cfg: &McConfig) -> Result<Estimate> {
    cfg.validate()?;
    let dim = f.dim();
    if dim == 0 {
        return Err(Error::parameter("integrand", "need at least one input dimension"));
    }
    let n = cfg.n_samples;
    let n_batches = n.div_ceil(cfg.batch_size);
    let partials = par_map_indexed(n_batches as usize, |b| -> Result<(f64, f64)> {
        let b = b as u64;
        let start = b * cfg.batch_size;
        let len = cfg.batch_size.min(n - start);
        let mut rng = derive_rng(cfg.seed, &format!("mc-batch-{b}"));
        let mut x = vec![0.0f64; dim];
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..len {
            for xi in x.iter_mut() {
                *xi = rng.sample(StandardNormal);
            }
            let v = f.eval(&x)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteSample { index: start + k });
            }
            sum += v;
            sumsq += v * v;
        }
        Ok((sum, sumsq))
    });
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for partial in partials {
        let (s, s2) = partial?;
        sum += s;
        sumsq += s2;
    }
    let (value, stat_error) = mean_and_ci(sum, sumsq, n);
    Ok(Estimate::new(value, stat_error, n))
}

/// Randomized lattice rule over i.i.d. standard-normal inputs.
///
/// For each of `n_shifts` independent uniform shifts Δ, averages `f` over
/// the points `Φ⁻¹(frac(i·z/n + Δ))`, `i = 0..n`. The reported value is the
/// mean of the per-shift averages and the error is the 95% CI half-width of
/// that mean across shifts.
pub fn rqmc_estimate(f: &(impl Integrand + ?Sized), cfg: &LatticeConfig) -> Result<Estimate> {
    let dim = f.dim();
    cfg.validate(dim)?;
    let n = cfg.n_points;
    let z = &cfg.generating_vector[..dim];
    let shift_means = par_map_indexed(cfg.n_shifts as usize, |s| -> Result<f64> {
        let mut rng = derive_rng(cfg.seed, &format!("rqmc-shift-{s}"));
        let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let mut u = vec![0.0f64; dim];
        let mut x = vec![0.0f64; dim];
        let mut sum = 0.0;
        for i in 0..n {
            lattice_point_into(i, z, n, &shift, &mut u);
            for j in 0..dim {
                x[j] = inverse_normal_cdf(u[j].max(f64::MIN_POSITIVE))?;
            }
            let v = f.eval(&x)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteSample {
                    index: s as u64 * n + i,
                });
            }
            sum += v;
        }
        Ok(sum / n as f64)
    });
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for partial in shift_means {
        let q = partial?;
        sum += q;
        sumsq += q * q;
    }
    let (value, stat_error) = mean_and_ci(sum, sumsq, u64::from(cfg.n_shifts));
    Ok(Estimate::new(value, stat_error, u64::from(cfg.n_shifts) * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FnIntegrand;

    #[test]
    fn constant_integrand_is_exact() {
        let f = FnIntegrand::new(3, |_| Ok(7.25));
        let mc = mc_estimate(&f, &McConfig { n_samples: 1000, ..Default::default() }).unwrap();
        assert_eq!(mc.value, 7.25);
        assert_eq!(mc.stat_error, 0.0);
        assert_eq!(mc.work, 1000);

        let cfg = LatticeConfig::embedded(3, 256, 5).unwrap();
        let rq = rqmc_estimate(&f, &cfg).unwrap();
        assert_eq!(rq.value, 7.25);
        assert_eq!(rq.stat_error, 0.0);
        assert_eq!(rq.work, 30 * 256);
    }

    #[test]
    fn mc_gaussian_second_moment() {
        let f = FnIntegrand::new(1, |x| Ok(x[0] * x[0]));
        let cfg = McConfig {
            n_samples: 1_000_000,
            seed: 11,
            ..Default::default()
        };
        let e = mc_estimate(&f, &cfg).unwrap();
        assert!(e.stat_error > 0.0);
        assert!(
            (e.value - 1.0).abs() <= 3.0 * e.stat_error,
            "value {} ± {}",
            e.value,
            e.stat_error
        );
    }

    #[test]
    fn rqmc_centered_sum_is_near_zero() {
        let f = FnIntegrand::new(8, |x| Ok(x.iter().sum::<f64>()));
        let cfg = LatticeConfig::embedded(8, 1024, 3).unwrap();
        let e = rqmc_estimate(&f, &cfg).unwrap();
        assert!(
            e.value.abs() <= 3.0 * e.stat_error.max(1e-12),
            "value {} ± {}",
            e.value,
            e.stat_error
        );
        assert!(e.value.abs() < 1e-2);
    }

    #[test]
    fn estimators_agree_on_lognormal_mean() {
        let f = FnIntegrand::new(4, |x| Ok((0.2 * x.iter().sum::<f64>()).exp()));
        let truth = (0.5 * 0.04 * 4.0f64).exp();
        let mc = mc_estimate(
            &f,
            &McConfig { n_samples: 400_000, seed: 2, ..Default::default() },
        )
        .unwrap();
        let rq = rqmc_estimate(&f, &LatticeConfig::embedded(4, 2048, 2).unwrap()).unwrap();
        assert!((mc.value - truth).abs() <= 3.0 * mc.stat_error);
        assert!((rq.value - truth).abs() <= 3.0 * rq.stat_error.max(1e-9));
        let combined = 3.0 * (mc.stat_error + rq.stat_error);
        assert!((mc.value - rq.value).abs() <= combined);
    }

    #[test]
    fn mc_confidence_interval_covers_known_mean() {
        let f = FnIntegrand::new(1, |x| Ok(x[0] * x[0]));
        let mut hits = 0;
        for rep in 0..100 {
            let cfg = McConfig {
                n_samples: 2_000,
                seed: 1000 + rep,
                ..Default::default()
            };
            let e = mc_estimate(&f, &cfg).unwrap();
            if (e.value - 1.0).abs() <= e.stat_error {
                hits += 1;
            }
        }
        assert!(hits >= 90, "coverage {hits}/100");
    }

    #[test]
    fn non_finite_sample_reports_index() {
        let f = FnIntegrand::new(1, |x| Ok(if x[0] > 0.0 { f64::NAN } else { 1.0 }));
        let err = mc_estimate(&f, &McConfig { n_samples: 100, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSample { .. }), "got {err:?}");
        let cfg = LatticeConfig::embedded(1, 64, 0).unwrap();
        let err = rqmc_estimate(&f, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSample { .. }), "got {err:?}");
    }

    #[test]
    fn config_validation() {
        let f = FnIntegrand::new(1, |_| Ok(0.0));
        assert!(mc_estimate(&f, &McConfig { n_samples: 1, ..Default::default() }).is_err());
        let zero_dim = FnIntegrand::new(0, |_| Ok(0.0));
        assert!(mc_estimate(&zero_dim, &McConfig::default()).is_err());

        assert!(LatticeConfig::embedded(200, 1024, 0).is_err());
        let cfg = LatticeConfig::embedded(2, 1024, 0).unwrap().with_shifts(1);
        let g = FnIntegrand::new(2, |_| Ok(0.0));
        assert!(rqmc_estimate(&g, &cfg).is_err());
        let cfg = LatticeConfig::embedded(2, 1024, 0).unwrap();
        let h = FnIntegrand::new(3, |_| Ok(0.0));
        assert!(rqmc_estimate(&h, &cfg).is_err());
    }

    #[test]
    fn estimates_are_bit_deterministic() {
        let f = FnIntegrand::new(2, |x| Ok((x[0] + 0.5 * x[1]).tanh()));
        let cfg = McConfig { n_samples: 10_000, seed: 9, ..Default::default() };
        let a = mc_estimate(&f, &cfg).unwrap();
        let b = mc_estimate(&f, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stat_error.to_bits(), b.stat_error.to_bits());

        let lc = LatticeConfig::embedded(2, 512, 7).unwrap();
        let a = rqmc_estimate(&f, &lc).unwrap();
        let b = rqmc_estimate(&f, &lc).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stat_error.to_bits(), b.stat_error.to_bits());
    }
}

//! Asset dynamics: multivariate GBM and Heston under several volatility
//! schemes, discretized by forward Euler.
//!
//! Two evaluation styles are provided.
//!
//! * Direct path maps ([`gbm_terminal`], [`heston_terminal`]) consume
//!   time-ordered Brownian increments — the natural interface for Monte
//!   Carlo and weak-error studies.
//! * A [`PathEngine`] consumes hierarchical coordinates (rotated coarse
//!   variables first, then Brownian-bridge refinements) and exposes each
//!   terminal price as an *affine-factor product* in the distinguished
//!   coordinate `y₁`:
//!
//!   `X_T^{(i)}(y₁) = x₀^{(i)} · Π_n (a_{i,n} + b_{i,n} · y₁)`,
//!
//!   with `a`, `b` depending only on the remaining coordinates. This holds
//!   for every model here because the volatility path never involves `y₁`:
//!   under GBM the rotation spreads `y₁` linearly into every increment, and
//!   under Heston the variance is driven by separate coordinate streams.
//!   Root finding and preintegration in the smoothing layer rely on this
//!   structure for exact derivatives along `y₁`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::hierarchy::{build_rotation, BridgeSchedule, PathGrid, RotationMatrix};
use crate::special::inverse_normal_cdf_unchecked;

/// Multivariate geometric Brownian motion parameters.
#[derive(Debug, Clone)]
pub struct GbmSpec {
    /// Asset count.
    pub d: usize,
    /// Initial prices, all positive.
    pub x0: Vec<f64>,
    /// Volatilities per unit √time, all positive.
    pub sigma: Vec<f64>,
    /// Correlation matrix, row-major `d×d`.
    pub corr: Vec<f64>,
    /// Drift rates (risk-neutral rate per asset).
    pub drift: Vec<f64>,
}

impl GbmSpec {
    /// Single-asset spec with trivial correlation.
    pub fn single(x0: f64, sigma: f64, drift: f64) -> Self {
        GbmSpec {
            d: 1,
            x0: vec![x0],
            sigma: vec![sigma],
            corr: vec![1.0],
            drift: vec![drift],
        }
    }

    /// Equal-parameter basket with constant off-diagonal correlation.
    pub fn equicorrelated(d: usize, x0: f64, sigma: f64, drift: f64, rho: f64) -> Self {
        let mut corr = vec![rho; d * d];
        for i in 0..d {
            corr[i * d + i] = 1.0;
        }
        GbmSpec {
            d,
            x0: vec![x0; d],
            sigma: vec![sigma; d],
            corr,
            drift: vec![drift; d],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::parameter("d", "need at least one asset"));
        }
        for (name, v) in [("x0", &self.x0), ("sigma", &self.sigma), ("drift", &self.drift)] {
            if v.len() != self.d {
                return Err(Error::Shape {
                    context: "GBM parameter vector",
                    expected: self.d,
                    actual: v.len(),
                });
            }
            let _ = name;
        }
        if self.x0.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::parameter("x0", "initial prices must be positive"));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::parameter("sigma", "volatilities must be positive"));
        }
        if self.corr.len() != self.d * self.d {
            return Err(Error::Shape {
                context: "correlation matrix",
                expected: self.d * self.d,
                actual: self.corr.len(),
            });
        }
        for i in 0..self.d {
            if (self.corr[i * self.d + i] - 1.0).abs() > 1e-12 {
                return Err(Error::parameter("corr", "diagonal must be 1"));
            }
            for j in 0..i {
                if (self.corr[i * self.d + j] - self.corr[j * self.d + i]).abs() > 1e-12 {
                    return Err(Error::parameter("corr", "matrix must be symmetric"));
                }
            }
        }
        self.cholesky()?;
        Ok(())
    }

    /// Lower-triangular Cholesky factor of the correlation matrix, row-major.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        let d = self.d;
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = self.corr[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if s <= 1e-12 {
                        return Err(Error::parameter(
                            "corr",
                            "correlation matrix is not positive definite",
                        ));
                    }
                    l[i * d + j] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        Ok(l)
    }
}

/// Variance discretization scheme for the Heston model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolScheme {
    /// Euler with `(f₁, f₂, f₃) = (v, v⁺, v⁺)`.
    FullTruncation,
    /// Euler with `(f₁, f₂, f₃) = (v, v, v⁺)`.
    PartialTruncation,
    /// Euler with `(f₁, f₂, f₃) = (|v|, |v|, |v|)`.
    Reflection,
    /// Moment-matched lognormal step (Andersen–Brotherton-Ratcliffe).
    Abr,
    /// Variance as a sum of squared Ornstein–Uhlenbeck processes.
    OuBased,
}

/// Heston model parameters.
#[derive(Debug, Clone, Copy)]
pub struct HestonSpec {
    pub s0: f64,
    pub v0: f64,
    pub mu: f64,
    /// Price–volatility correlation, in (−1, 1).
    pub rho: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub scheme: VolScheme,
}

impl HestonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(Error::parameter("s0", "initial price must be positive"));
        }
        if !(self.v0.is_finite() && self.v0 >= 0.0) {
            return Err(Error::parameter("v0", "initial variance must be nonnegative"));
        }
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return Err(Error::parameter("rho", "correlation must lie in (−1, 1)"));
        }
        for (name, v) in [("kappa", self.kappa), ("theta", self.theta), ("xi", self.xi)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parameter(name, "CIR parameters must be nonnegative"));
            }
        }
        if self.scheme == VolScheme::OuBased {
            self.ou_params()?;
        }
        Ok(())
    }

    /// Equivalent Ornstein–Uhlenbeck parameters (requires κ, θ, ξ > 0).
    pub fn ou_params(&self) -> Result<OuParams> {
        OuParams::new(self.kappa, self.theta, self.xi)
    }
}

/// Parameters of the OU processes whose sum of squares reproduces CIR
/// variance: `α = −κ/2`, `β = ξ/2`, process count `n* = 4θκ/ξ²`.
#[derive(Debug, Clone, Copy)]
pub struct OuParams {
    pub alpha: f64,
    pub beta: f64,
    pub n_star: f64,
    /// `⌊n*⌋`.
    pub n_low: usize,
    /// Fractional part of `n*`.
    pub p: f64,
}

impl OuParams {
    pub fn new(kappa: f64, theta: f64, xi: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::parameter("xi", "OU construction needs ξ > 0"));
        }
        if !(kappa > 0.0) {
            return Err(Error::parameter("kappa", "OU construction needs κ > 0"));
        }
        if !(theta > 0.0) {
            return Err(Error::parameter("theta", "OU construction needs θ > 0"));
        }
        let n_star = 4.0 * theta * kappa / (xi * xi);
        Ok(OuParams {
            alpha: -0.5 * kappa,
            beta: 0.5 * xi,
            n_star,
            n_low: n_star.floor() as usize,
            p: n_star.fract(),
        })
    }

    /// Process count when `n*` is an integer (within `tol`).
    pub fn integer_count(&self, tol: f64) -> Option<usize> {
        let rounded = self.n_star.round();
        if (self.n_star - rounded).abs() <= tol && rounded >= 0.0 {
            Some(rounded as usize)
        } else {
            None
        }
    }

    pub fn kappa(&self) -> f64 {
        -2.0 * self.alpha
    }

    pub fn xi(&self) -> f64 {
        2.0 * self.beta
    }

    pub fn theta(&self) -> f64 {
        -self.n_star * self.beta * self.beta / (2.0 * self.alpha)
    }
}

/// Counters for numerically notable path events. All methods are cheap and
/// thread-safe; the counters only grow.
#[derive(Debug, Default)]
pub struct PathDiagnostics {
    /// Euler price factors `1 + μΔt + σΔW` that came out negative.
    pub negative_euler_factors: AtomicU64,
    /// Variance values that went negative before scheme transforms.
    pub negative_variances: AtomicU64,
    /// Zero-variance fallbacks taken when reconstructing price increments.
    pub vol_zero_fallbacks: AtomicU64,
}

impl PathDiagnostics {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.negative_euler_factors.load(Ordering::Relaxed),
            self.negative_variances.load(Ordering::Relaxed),
            self.vol_zero_fallbacks.load(Ordering::Relaxed),
        )
    }
}

/// Terminal prices of the Euler-discretized GBM system.
///
/// `increments` is asset-major (`d×N` flat): entry `i·N + n` is the *already
/// correlated* Brownian increment of asset `i` over step `n`. Negative Euler
/// factors are legal (the scheme is signed) and counted in `diag`.
pub fn gbm_terminal(
    spec: &GbmSpec,
    grid: &PathGrid,
    increments: &[f64],
    diag: &PathDiagnostics,
) -> Vec<f64> {
    let d = spec.d;
    let n = grid.n_steps;
    debug_assert_eq!(increments.len(), d * n);
    let dt = grid.dt();
    let mut out = Vec::with_capacity(d);
    let mut negatives = 0u64;
    for i in 0..d {
        let base = 1.0 + spec.drift[i] * dt;
        let mut x = spec.x0[i];
        for k in 0..n {
            let factor = base + spec.sigma[i] * increments[i * n + k];
            if factor < 0.0 {
                negatives += 1;
            }
            x *= factor;
        }
        out.push(x);
    }
    if negatives > 0 {
        diag.negative_euler_factors.fetch_add(negatives, Ordering::Relaxed);
    }
    out
}

fn scheme_transforms(scheme: VolScheme, v: f64) -> (f64, f64, f64) {
    match scheme {
        VolScheme::FullTruncation => (v, v.max(0.0), v.max(0.0)),
        VolScheme::PartialTruncation => (v, v, v.max(0.0)),
        VolScheme::Reflection => (v.abs(), v.abs(), v.abs()),
        VolScheme::Abr | VolScheme::OuBased => {
            unreachable!("non-Euler schemes do not use the (f1, f2, f3) table")
        }
    }
}

/// One moment-matched lognormal variance step: the next variance is
/// `m · exp(−½Γ²Δt + Γ·ΔW_v)` with `m` the CIR conditional mean and `Γ`
/// chosen so the conditional second moment matches `m² + s²`, where
/// `s² = ½ξ²κ⁻¹ v (1 − e^{−2κΔt})`. Returns 0 when the mean is nonpositive.
pub fn abr_vol_step(spec: &HestonSpec, v: f64, dw_v: f64, dt: f64) -> f64 {
    let decay = (-spec.kappa * dt).exp();
    let m = decay * v + (1.0 - decay) * spec.theta;
    if m <= 0.0 {
        return 0.0;
    }
    let shrink = if spec.kappa == 0.0 {
        2.0 * dt
    } else {
        -(-2.0 * spec.kappa * dt).exp_m1() / spec.kappa
    };
    let s2 = 0.5 * spec.xi * spec.xi * v.max(0.0) * shrink;
    if s2 <= 0.0 {
        return m;
    }
    let gamma2 = (s2 / (m * m)).ln_1p() / dt;
    let gamma = gamma2.sqrt();
    m * (-0.5 * gamma2 * dt + gamma * dw_v).exp()
}

/// Terminal `(S_T, v_T)` of one discretized Heston path from time-ordered
/// Brownian increments (each of variance Δt).
///
/// The price–volatility correlation is applied inside:
/// `ΔW^S = ρ·ΔW^v + √(1−ρ²)·ΔW⁰` with `ΔW⁰ = z_price` independent of the
/// variance driver `ΔW^v = z_vol`. For [`VolScheme::OuBased`] this entry
/// point supports exactly one driving OU process (`n* = 1`); other branch
/// counts need the multi-stream [`PathEngine`] or [`ou_noninteger_price`].
pub fn heston_terminal(
    spec: &HestonSpec,
    grid: &PathGrid,
    z_price: &[f64],
    z_vol: &[f64],
    diag: &PathDiagnostics,
) -> Result<(f64, f64)> {
    let n = grid.n_steps;
    if z_price.len() != n || z_vol.len() != n {
        return Err(Error::Shape {
            context: "heston_terminal increments",
            expected: n,
            actual: z_price.len().min(z_vol.len()),
        });
    }
    let dt = grid.dt();
    let rho_bar = (1.0 - spec.rho * spec.rho).sqrt();
    let base = 1.0 + spec.mu * dt;
    let mut s = spec.s0;
    let mut negatives = 0u64;
    let mut neg_var = 0u64;
    let v_t;
    match spec.scheme {
        VolScheme::FullTruncation | VolScheme::PartialTruncation | VolScheme::Reflection => {
            let mut v = spec.v0;
            for k in 0..n {
                let (f1, f2, f3) = scheme_transforms(spec.scheme, v);
                let vol = f3.sqrt();
                let dw_s = spec.rho * z_vol[k] + rho_bar * z_price[k];
                let factor = base + vol * dw_s;
                if factor < 0.0 {
                    negatives += 1;
                }
                s *= factor;
                v = f1 + spec.kappa * (spec.theta - f2) * dt + spec.xi * vol * z_vol[k];
                if v < 0.0 {
                    neg_var += 1;
                }
            }
            v_t = v;
        }
        VolScheme::Abr => {
            let mut v = spec.v0;
            for k in 0..n {
                let vol = v.max(0.0).sqrt();
                let dw_s = spec.rho * z_vol[k] + rho_bar * z_price[k];
                let factor = base + vol * dw_s;
                if factor < 0.0 {
                    negatives += 1;
                }
                s *= factor;
                v = abr_vol_step(spec, v, z_vol[k], dt);
            }
            v_t = v;
        }
        VolScheme::OuBased => {
            let params = spec.ou_params()?;
            match params.integer_count(1e-9) {
                Some(1) => {}
                _ => {
                    return Err(Error::parameter(
                        "scheme",
                        format!(
                            "direct terminal evaluation needs exactly one OU process, got n* = {}",
                            params.n_star
                        ),
                    ))
                }
            }
            let dtv = dt;
            let mut x = spec.v0.sqrt();
            for k in 0..n {
                let y = x * x;
                let factor = base + spec.rho * x * z_vol[k] + (rho_bar * rho_bar * y).sqrt() * z_price[k];
                if factor < 0.0 {
                    negatives += 1;
                }
                s *= factor;
                x += params.alpha * x * dtv + params.beta * z_vol[k];
            }
            v_t = x * x;
        }
    }
    if negatives > 0 {
        diag.negative_euler_factors.fetch_add(negatives, Ordering::Relaxed);
    }
    if neg_var > 0 {
        diag.negative_variances.fetch_add(neg_var, Ordering::Relaxed);
    }
    Ok((s, v_t))
}

/// Output of [`ou_vol_path`]: the variance path and the price-driving
/// Brownian increments it induces.
#[derive(Debug, Clone)]
pub struct OuVolPath {
    /// Variance `Y_k = Σ_i (X_k^i)²` at grid times `0..=N`.
    pub y: Vec<f64>,
    /// Reconstructed increments `ΔW̃_k = (Σ_i X_k^i ΔW_k^i)/√Y_k`, with an
    /// independent hashed-fresh draw of variance Δt substituted where
    /// `Y_k = 0`.
    pub dw_tilde: Vec<f64>,
    /// How many steps took the zero-variance fallback.
    pub fallbacks: u32,
}

fn hashed_standard_normal(state: u64) -> f64 {
    let mut s = state;
    let x = crate::rng::splitmix64(&mut s);
    let u = ((x >> 11) as f64 + 0.5) / 9007199254740992.0;
    inverse_normal_cdf_unchecked(u)
}

/// Euler-discretize `n` OU processes and assemble the variance path
/// `Y = Σ X²` plus the price-driving increments.
///
/// `z` is process-major (`n×N` flat): entry `i·N + k` drives process `i`
/// over step `k`. Initial state: `X₀¹ = √v0`, all other processes at 0.
pub fn ou_vol_path(params: &OuParams, grid: &PathGrid, z: &[f64], v0: f64) -> Result<OuVolPath> {
    let n_steps = grid.n_steps;
    if n_steps == 0 || z.len() % n_steps != 0 {
        return Err(Error::Shape {
            context: "ou_vol_path increments",
            expected: n_steps,
            actual: z.len(),
        });
    }
    let n_proc = z.len() / n_steps;
    let dt = grid.dt();
    let mut x = vec![0.0; n_proc];
    if n_proc > 0 {
        x[0] = v0.sqrt();
    }
    let mut y = Vec::with_capacity(n_steps + 1);
    let mut dw_tilde = Vec::with_capacity(n_steps);
    let mut fallbacks = 0u32;
    let mut hash_state = 0xcbf29ce484222325u64;
    for zi in z {
        hash_state = (hash_state ^ zi.to_bits()).wrapping_mul(0x100000001b3);
    }
    for k in 0..n_steps {
        let yk: f64 = x.iter().map(|xi| xi * xi).sum();
        y.push(yk);
        if yk > 0.0 {
            let mixed: f64 = (0..n_proc).map(|i| x[i] * z[i * n_steps + k]).sum();
            dw_tilde.push(mixed / yk.sqrt());
        } else {
            fallbacks += 1;
            dw_tilde.push(dt.sqrt() * hashed_standard_normal(hash_state ^ k as u64));
        }
        for i in 0..n_proc {
            x[i] += params.alpha * x[i] * dt + params.beta * z[i * n_steps + k];
        }
    }
    y.push(x.iter().map(|xi| xi * xi).sum());
    Ok(OuVolPath { y, dw_tilde, fallbacks })
}

/// Price under the OU-based scheme for possibly noninteger `n* = 4θκ/ξ²`:
/// linear interpolation `(1−p)·estimate(⌊n*⌋) + p·estimate(⌊n*⌋+1)` between
/// the two adjacent integer process counts, or a single estimate when `n*`
/// is an integer.
pub fn ou_noninteger_price(
    spec: &HestonSpec,
    mut estimate: impl FnMut(usize) -> Result<f64>,
) -> Result<f64> {
    let params = spec.ou_params()?;
    if let Some(n) = params.integer_count(1e-9) {
        return estimate(n);
    }
    let low = estimate(params.n_low)?;
    let high = estimate(params.n_low + 1)?;
    Ok((1.0 - params.p) * low + params.p * high)
}

/// The model being priced.
#[derive(Debug, Clone)]
pub enum Model {
    Gbm(GbmSpec),
    Heston(HestonSpec),
}

impl Model {
    pub fn n_assets(&self) -> usize {
        match self {
            Model::Gbm(spec) => spec.d,
            Model::Heston(_) => 1,
        }
    }

    pub fn initial_prices(&self) -> Vec<f64> {
        match self {
            Model::Gbm(spec) => spec.x0.clone(),
            Model::Heston(spec) => vec![spec.s0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Gbm(spec) => spec.validate(),
            Model::Heston(spec) => spec.validate(),
        }
    }
}

/// Affine-factor representation of all terminal prices as functions of the
/// distinguished coordinate: asset `i` terminates at
/// `x₀^{(i)} · Π_n (a[i·N+n] + b[i·N+n] · y₁)`.
#[derive(Debug, Clone)]
pub struct PathFactors {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub n_assets: usize,
    pub n_steps: usize,
}

impl PathFactors {
    fn with_capacity(n_assets: usize, n_steps: usize) -> Self {
        PathFactors {
            a: vec![0.0; n_assets * n_steps],
            b: vec![0.0; n_assets * n_steps],
            n_assets,
            n_steps,
        }
    }

    /// Terminal price of `asset` at smoothing coordinate `y1`.
    pub fn terminal(&self, asset: usize, x0: f64, y1: f64) -> f64 {
        let lo = asset * self.n_steps;
        let mut prod = x0;
        for n in 0..self.n_steps {
            prod *= self.a[lo + n] + self.b[lo + n] * y1;
        }
        prod
    }

    /// Terminal price and its exact `∂/∂y₁`, by forward-mode accumulation of
    /// the product rule (no division, so zero factors are harmless).
    pub fn terminal_and_slope(&self, asset: usize, x0: f64, y1: f64) -> (f64, f64) {
        let lo = asset * self.n_steps;
        let mut prod = x0;
        let mut slope = 0.0;
        for n in 0..self.n_steps {
            let f = self.a[lo + n] + self.b[lo + n] * y1;
            slope = slope * f + prod * self.b[lo + n];
            prod *= f;
        }
        (prod, slope)
    }
}

/// Precomputed machinery mapping hierarchical coordinate vectors to terminal
/// prices and affine factors.
///
/// Coordinate layout (`coord_dim() = n_streams · N` entries):
/// * entries `0..n_streams`: coarse coordinates. For GBM these are the
///   *rotated* per-asset coarse variables (entry 0 is `y₁`); for Heston,
///   entry 0 is the price stream's coarse variable (the rotation is trivial
///   for one asset) and the rest drive the volatility stream(s).
/// * entries `n_streams..`: bridge refinements, slot-major with streams
///   innermost, so coarser refinement levels occupy a prefix.
///
/// Under the standard Gaussian law on the full vector the induced path law
/// is the model's, because the rotation is orthonormal and the bridge maps
/// iid normals to Brownian increments.
pub struct PathEngine {
    model: Model,
    grid: PathGrid,
    rotation: RotationMatrix,
    chol: Vec<f64>,
    schedule: BridgeSchedule,
    ou: Option<OuParams>,
    n_ou: usize,
    /// Per-asset `∂(correlated increment)/∂y₁` scale, times σ (GBM only).
    b_coef: Vec<f64>,
    diagnostics: PathDiagnostics,
}

impl PathEngine {
    pub fn new(model: Model, grid: PathGrid) -> Result<Self> {
        Self::build(model, grid, None)
    }

    /// Build with an explicit OU process count (the noninteger-`n*` branches).
    pub fn with_ou_processes(model: Model, grid: PathGrid, n_ou: usize) -> Result<Self> {
        Self::build(model, grid, Some(n_ou))
    }

    fn build(model: Model, grid: PathGrid, ou_override: Option<usize>) -> Result<Self> {
        model.validate()?;
        if grid.d != model.n_assets() {
            return Err(Error::Shape {
                context: "grid asset count",
                expected: model.n_assets(),
                actual: grid.d,
            });
        }
        let d = model.n_assets();
        let rotation = build_rotation(d)?;
        let schedule = BridgeSchedule::new(&grid);
        let coarse_scale = grid.horizon.sqrt() / grid.n_steps as f64;
        let (chol, b_coef, ou, n_ou) = match &model {
            Model::Gbm(spec) => {
                let chol = spec.cholesky()?;
                let mut b_coef = vec![0.0; d];
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += chol[i * d + j] * rotation.entry(0, j);
                    }
                    b_coef[i] = spec.sigma[i] * coarse_scale * s;
                }
                (chol, b_coef, None, 0)
            }
            Model::Heston(spec) => match spec.scheme {
                VolScheme::OuBased => {
                    let params = spec.ou_params()?;
                    let n_ou = match ou_override {
                        Some(n) => n,
                        None => params.integer_count(1e-9).ok_or_else(|| {
                            Error::parameter(
                                "scheme",
                                format!(
                                    "n* = {} is not an integer; price the two adjacent branches via ou_noninteger_price",
                                    params.n_star
                                ),
                            )
                        })?,
                    };
                    (Vec::new(), Vec::new(), Some(params), n_ou)
                }
                _ => {
                    if ou_override.is_some() {
                        return Err(Error::parameter(
                            "n_ou",
                            "process-count override only applies to the OU-based scheme",
                        ));
                    }
                    (Vec::new(), Vec::new(), None, 0)
                }
            },
        };
        Ok(PathEngine {
            model,
            grid,
            rotation,
            chol,
            schedule,
            ou,
            n_ou,
            b_coef,
            diagnostics: PathDiagnostics::default(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn diagnostics(&self) -> &PathDiagnostics {
        &self.diagnostics
    }

    /// Independent coordinate streams: one per asset (GBM); price plus
    /// volatility driver(s) (Heston).
    pub fn n_streams(&self) -> usize {
        match &self.model {
            Model::Gbm(spec) => spec.d,
            Model::Heston(spec) => match spec.scheme {
                VolScheme::OuBased => 1 + self.n_ou,
                _ => 2,
            },
        }
    }

    /// Total Gaussian coordinates per evaluation.
    pub fn coord_dim(&self) -> usize {
        self.n_streams() * self.grid.n_steps
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.coord_dim() {
            return Err(Error::Shape {
                context: "path coordinates",
                expected: self.coord_dim(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    fn gather_fines(&self, w: &[f64], stream: usize, out: &mut Vec<f64>) {
        let streams = self.n_streams();
        let n = self.grid.n_steps;
        out.clear();
        for slot in 0..n - 1 {
            out.push(w[streams + slot * streams + stream]);
        }
    }

    /// Affine factors of every asset terminal as a function of `w[0] = y₁`.
    /// Only `w[1..]` influence the result.
    pub fn factors(&self, w: &[f64]) -> Result<PathFactors> {
        self.check_dim(w)?;
        let n = self.grid.n_steps;
        let dt = self.grid.dt();
        let coarse_scale = self.grid.horizon.sqrt() / n as f64;
        let mut fines = Vec::with_capacity(n.saturating_sub(1));
        let mut path = vec![0.0; n + 1];
        match &self.model {
            Model::Gbm(spec) => {
                let d = spec.d;
                let mut factors = PathFactors::with_capacity(d, n);
                let mut dw = vec![0.0; d * n];
                for i in 0..d {
                    let mut r = 0.0;
                    for k in 1..d {
                        r += self.rotation.entry(k, i) * w[k];
                    }
                    self.gather_fines(w, i, &mut fines);
                    self.schedule
                        .increments_into(r, &fines, &mut path, &mut dw[i * n..(i + 1) * n]);
                }
                for i in 0..d {
                    let base = 1.0 + spec.drift[i] * dt;
                    for step in 0..n {
                        let mut corr_dw = 0.0;
                        for j in 0..d {
                            corr_dw += self.chol[i * d + j] * dw[j * n + step];
                        }
                        factors.a[i * n + step] = base + spec.sigma[i] * corr_dw;
                        factors.b[i * n + step] = self.b_coef[i];
                    }
                }
                Ok(factors)
            }
            Model::Heston(spec) => {
                let mut factors = PathFactors::with_capacity(1, n);
                let base = 1.0 + spec.mu * dt;
                let rho_bar2 = 1.0 - spec.rho * spec.rho;
                let mut price_fine = vec![0.0; n];
                self.gather_fines(w, 0, &mut fines);
                self.schedule.increments_into(0.0, &fines, &mut path, &mut price_fine);
                match spec.scheme {
                    VolScheme::OuBased => {
                        let params = self.ou.as_ref().expect("OU params present for OU scheme");
                        let mut z = vec![0.0; self.n_ou * n];
                        for i in 0..self.n_ou {
                            self.gather_fines(w, 1 + i, &mut fines);
                            self.schedule.increments_into(
                                w[1 + i],
                                &fines,
                                &mut path,
                                &mut z[i * n..(i + 1) * n],
                            );
                        }
                        let vol = ou_vol_path(params, &self.grid, &z, spec.v0)?;
                        if vol.fallbacks > 0 {
                            self.diagnostics
                                .vol_zero_fallbacks
                                .fetch_add(vol.fallbacks as u64, Ordering::Relaxed);
                        }
                        let mut x = vec![0.0; self.n_ou];
                        if self.n_ou > 0 {
                            x[0] = spec.v0.sqrt();
                        }
                        for step in 0..n {
                            let mut mixed = 0.0;
                            for i in 0..self.n_ou {
                                mixed += x[i] * z[i * n + step];
                            }
                            let spread = (rho_bar2 * vol.y[step]).sqrt();
                            factors.a[step] = base + spec.rho * mixed + spread * price_fine[step];
                            factors.b[step] = spread * coarse_scale;
                            for i in 0..self.n_ou {
                                x[i] += params.alpha * x[i] * dt + params.beta * z[i * n + step];
                            }
                        }
                    }
                    _ => {
                        let mut dw_v = vec![0.0; n];
                        self.gather_fines(w, 1, &mut fines);
                        self.schedule.increments_into(w[1], &fines, &mut path, &mut dw_v);
                        let mut v = spec.v0;
                        for step in 0..n {
                            let vol = match spec.scheme {
                                VolScheme::Abr => {
                                    let sq = v.max(0.0).sqrt();
                                    v = abr_vol_step(spec, v, dw_v[step], dt);
                                    sq
                                }
                                _ => {
                                    let (f1, f2, f3) = scheme_transforms(spec.scheme, v);
                                    let sq = f3.sqrt();
                                    v = f1 + spec.kappa * (spec.theta - f2) * dt
                                        + spec.xi * sq * dw_v[step];
                                    sq
                                }
                            };
                            let spread = vol * rho_bar2.sqrt();
                            factors.a[step] =
                                base + vol * spec.rho * dw_v[step] + spread * price_fine[step];
                            factors.b[step] = spread * coarse_scale;
                        }
                    }
                }
                Ok(factors)
            }
        }
    }

    /// Terminal prices at the full coordinate vector (including `w[0]`).
    pub fn terminals(&self, w: &[f64]) -> Result<Vec<f64>> {
        let factors = self.factors(w)?;
        let x0 = self.model.initial_prices();
        Ok((0..factors.n_assets)
            .map(|i| factors.terminal(i, x0[i], w[0]))
            .collect())
    }
}

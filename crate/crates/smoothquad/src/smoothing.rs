//! Numerical smoothing: locate the payoff discontinuity along the
//! distinguished coordinate and integrate that coordinate out.
//!
//! Step 1 ([`find_root`], [`find_all_roots`]): Newton iteration from the
//! origin, backed by a sign-change scan plus bisection over the bracket
//! `[−bh, bh]`. The payoff's inner function along `y₁` either has simple
//! roots or none (monotonicity/growth), so the located zeros `ȳ*` split ℝ
//! into pieces on which the integrand is smooth.
//!
//! Step 2 ([`preintegrate`]): integrate `G(y)·φ(y)` piecewise — Gaussian
//! quadrature tailored to the weight `φ` on each tail beyond the outermost
//! roots, Gauss–Legendre (with `φ` folded into the integrand) on interior
//! intervals between consecutive roots, and a plain Gauss–Hermite rule when
//! no root exists.
//!
//! Two tail-node constructions are available. The default builds, per tail,
//! a Gauss rule for the exact weight `u ↦ φ(ȳ* ± u)` on `[0, hi]` via a
//! dense Legendre-panel discretization compressed by Lanczos
//! ([`crate::quadrature::lanczos_coefficients`]); it integrates tail pieces
//! with polynomial `G` to machine precision. The alternative shifts standard
//! Gauss–Laguerre points, `ζ_k = ȳ* ± u_k`, folding the Gaussian density and
//! the `e^{+u}` Jacobian into the weights; it converges spectrally but
//! carries the `e^{−u}`-vs-Gaussian mismatch visible at small `m_lag`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::models::PathEngine;
use crate::payoffs::{root_function, PayoffKind, PayoffSpec, RootFunction};
use crate::quadrature::{gauss_rule, lanczos_coefficients, rule_from_recurrence, Family, Rule1D};
use crate::special::{normal_cdf, normal_pdf};
use crate::Integrand;

/// Tail-node construction for the preintegration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRule {
    /// Gauss rule for the exact Gaussian tail weight (default).
    GaussianTail,
    /// Shifted standard Gauss–Laguerre nodes.
    ShiftedLaguerre,
}

/// Parameters of the smoothing step.
#[derive(Debug, Clone, Copy)]
pub struct SmoothingConfig {
    /// Quadrature points per tail (and half the size of the no-root rule).
    pub m_lag: usize,
    /// Newton acceptance threshold on `|P(ȳ*)|`.
    pub tol_newton: f64,
    pub max_newton_iters: usize,
    /// Root search bracket, in `y₁` standard deviations.
    pub bracket_halfwidth: f64,
    /// Uniform sign-scan resolution across the bracket.
    pub multi_root_scan_points: usize,
    /// Gauss–Legendre points per interior interval (multi-root case).
    pub m_leg: usize,
    pub node_rule: NodeRule,
    /// Artificial offset added to every located root — a diagnostic knob for
    /// studying how root accuracy propagates into the smoothed value. Leave
    /// at 0 for production use; nonzero offsets intentionally break the
    /// root-residual contract.
    pub root_offset: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            m_lag: 32,
            tol_newton: 1e-10,
            max_newton_iters: 100,
            bracket_halfwidth: 10.0,
            multi_root_scan_points: 64,
            m_leg: 32,
            node_rule: NodeRule::GaussianTail,
            root_offset: 0.0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_lag < 1 || self.m_lag > 128 {
            return Err(Error::parameter("m_lag", "tail rule size must be in 1..=128"));
        }
        if self.m_leg < 1 || self.m_leg > 128 {
            return Err(Error::parameter("m_leg", "interior rule size must be in 1..=128"));
        }
        if !(self.tol_newton > 0.0 && self.tol_newton.is_finite()) {
            return Err(Error::parameter("tol_newton", "tolerance must be positive"));
        }
        if self.max_newton_iters < 1 {
            return Err(Error::parameter("max_newton_iters", "need at least one iteration"));
        }
        if !(self.bracket_halfwidth > 0.0 && self.bracket_halfwidth.is_finite()) {
            return Err(Error::parameter("bracket_halfwidth", "must be positive"));
        }
        if self.multi_root_scan_points < 2 {
            return Err(Error::parameter(
                "multi_root_scan_points",
                "need at least two scan points",
            ));
        }
        Ok(())
    }
}

/// Outcome of the discontinuity search along `y₁`.
#[derive(Debug, Clone, Default)]
pub struct RootResult {
    /// Strictly increasing root locations (empty when `P` never changes sign).
    pub roots: Vec<f64>,
    /// `|P(ȳ*)|` at each reported root.
    pub residuals: Vec<f64>,
    /// Total Newton iterations spent.
    pub newton_iters: usize,
}

const EFFECTIVE_SUPPORT: f64 = 8.0;
const ROOT_DEDUPE_TOL: f64 = 1e-8;
const INTERVAL_COLLAPSE_TOL: f64 = 1e-6;

fn check_finite(v: f64, y: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            context: "root function evaluation",
            at: y,
        })
    }
}

struct NewtonOutcome {
    root: Option<(f64, f64)>,
    iters: usize,
}

fn newton_from(
    start: f64,
    p: &impl Fn(f64) -> f64,
    dp: &impl Fn(f64) -> f64,
    cfg: &SmoothingConfig,
) -> Result<NewtonOutcome> {
    let mut y = start;
    for iter in 0..cfg.max_newton_iters {
        let v = check_finite(p(y), y)?;
        if v.abs() <= cfg.tol_newton {
            return Ok(NewtonOutcome {
                root: Some((y, v.abs())),
                iters: iter,
            });
        }
        let d = dp(y);
        if !d.is_finite() || d == 0.0 {
            return Ok(NewtonOutcome { root: None, iters: iter });
        }
        y -= v / d;
        if !y.is_finite() || y.abs() > cfg.bracket_halfwidth {
            return Ok(NewtonOutcome { root: None, iters: iter });
        }
    }
    Ok(NewtonOutcome {
        root: None,
        iters: cfg.max_newton_iters,
    })
}

fn bisect_bracket(
    mut lo: f64,
    mut hi: f64,
    p: &impl Fn(f64) -> f64,
    dp: &impl Fn(f64) -> f64,
    cfg: &SmoothingConfig,
) -> Result<(f64, f64, usize)> {
    let mut v_lo = check_finite(p(lo), lo)?;
    let mut iters = 0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v_mid = check_finite(p(mid), mid)?;
        iters += 1;
        if v_mid.abs() <= cfg.tol_newton || hi - lo < 1e-15 * (1.0 + mid.abs()) {
            break;
        }
        if (v_lo < 0.0) == (v_mid < 0.0) {
            lo = mid;
            v_lo = v_mid;
        } else {
            hi = mid;
        }
    }
    let mut y = 0.5 * (lo + hi);
    let mut v = check_finite(p(y), y)?;
    for _ in 0..8 {
        if v.abs() <= cfg.tol_newton {
            break;
        }
        let d = dp(y);
        if !d.is_finite() || d == 0.0 {
            break;
        }
        let next = y - v / d;
        if !next.is_finite() || next < lo - 1e-12 || next > hi + 1e-12 {
            break;
        }
        y = next;
        v = check_finite(p(y), y)?;
        iters += 1;
    }
    Ok((y, v.abs(), iters))
}

/// Locate a single root of `P` (the discontinuity of the payoff along `y₁`).
///
/// Newton from `y = 0`, accepting once `|P| ≤ tol_newton`; if it diverges,
/// leaves the bracket, or hits a flat spot, a uniform sign-change scan of
/// the bracket followed by bisection takes over. Empty result means `P` has
/// constant sign on the bracket (payoff smooth in `y₁` — no discontinuity).
pub fn find_root(
    p: impl Fn(f64) -> f64,
    dp: impl Fn(f64) -> f64,
    cfg: &SmoothingConfig,
) -> Result<RootResult> {
    cfg.validate()?;
    let newton = newton_from(0.0, &p, &dp, cfg)?;
    let mut result = RootResult {
        roots: Vec::new(),
        residuals: Vec::new(),
        newton_iters: newton.iters,
    };
    if let Some((root, residual)) = newton.root {
        result.roots.push(root);
        result.residuals.push(residual);
    } else if let Some((lo, hi)) = first_sign_change(&p, cfg)? {
        let (root, residual, iters) = bisect_bracket(lo, hi, &p, &dp, cfg)?;
        result.roots.push(root);
        result.residuals.push(residual);
        result.newton_iters += iters;
    }
    finalize_roots(&mut result, &p, cfg)?;
    Ok(result)
}

fn scan_values(p: &impl Fn(f64) -> f64, cfg: &SmoothingConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = cfg.multi_root_scan_points;
    let bh = cfg.bracket_halfwidth;
    let mut ys = Vec::with_capacity(s + 1);
    let mut vals = Vec::with_capacity(s + 1);
    for i in 0..=s {
        let y = -bh + 2.0 * bh * i as f64 / s as f64;
        ys.push(y);
        vals.push(check_finite(p(y), y)?);
    }
    Ok((ys, vals))
}

fn first_sign_change(p: &impl Fn(f64) -> f64, cfg: &SmoothingConfig) -> Result<Option<(f64, f64)>> {
    let (ys, vals) = scan_values(p, cfg)?;
    for i in 0..vals.len() - 1 {
        if vals[i] == 0.0 {
            return Ok(Some((ys[i], ys[i])));
        }
        if (vals[i] < 0.0) != (vals[i + 1] < 0.0) {
            return Ok(Some((ys[i], ys[i + 1])));
        }
    }
    if *vals.last().unwrap() == 0.0 {
        let y = *ys.last().unwrap();
        return Ok(Some((y, y)));
    }
    Ok(None)
}

fn finalize_roots(result: &mut RootResult, p: &impl Fn(f64) -> f64, cfg: &SmoothingConfig) -> Result<()> {
    let mut pairs: Vec<(f64, f64)> = result
        .roots
        .iter()
        .zip(&result.residuals)
        .map(|(r, e)| (*r, *e))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut deduped: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for pair in pairs {
        match deduped.last_mut() {
            Some(last) if (pair.0 - last.0).abs() <= ROOT_DEDUPE_TOL => {
                if pair.1 < last.1 {
                    *last = pair;
                }
            }
            _ => deduped.push(pair),
        }
    }
    let mut pairs = deduped;
    pairs.retain(|(r, _)| r.abs() <= EFFECTIVE_SUPPORT);
    let mut collapsed: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for pair in pairs {
        match collapsed.last() {
            Some(last) if pair.0 - last.0 < INTERVAL_COLLAPSE_TOL => {}
            _ => collapsed.push(pair),
        }
    }
    if cfg.root_offset != 0.0 {
        for pair in collapsed.iter_mut() {
            pair.0 += cfg.root_offset;
            pair.1 = check_finite(p(pair.0), pair.0)?.abs();
        }
        collapsed.retain(|(r, _)| r.abs() <= cfg.bracket_halfwidth);
    }
    result.roots = collapsed.iter().map(|(r, _)| *r).collect();
    result.residuals = collapsed.iter().map(|(_, e)| *e).collect();
    Ok(())
}

/// Locate all sign changes of `P` on the bracket.
///
/// Newton from the origin first (it resolves the common at-the-money root
/// exactly at 0 that a sign-product scan misses), then a uniform scan whose
/// exact zeros and sign flips are polished by bisection + Newton. Roots are
/// deduplicated within 1e-8, roots beyond the effective Gaussian support
/// (|ȳ*| > 8) are dropped into tail handling, and interior intervals
/// narrower than 1e-6 are collapsed.
pub fn find_all_roots(
    p: impl Fn(f64) -> f64,
    dp: impl Fn(f64) -> f64,
    cfg: &SmoothingConfig,
) -> Result<RootResult> {
    cfg.validate()?;
    let mut result = RootResult::default();
    let newton = newton_from(0.0, &p, &dp, cfg)?;
    result.newton_iters = newton.iters;
    if let Some((root, residual)) = newton.root {
        result.roots.push(root);
        result.residuals.push(residual);
    }
    let (ys, vals) = scan_values(&p, cfg)?;
    for i in 0..vals.len() - 1 {
        if vals[i] == 0.0 {
            result.roots.push(ys[i]);
            result.residuals.push(0.0);
            continue;
        }
        if (vals[i] < 0.0) != (vals[i + 1] < 0.0) {
            let (root, residual, iters) = bisect_bracket(ys[i], ys[i + 1], &p, &dp, cfg)?;
            result.roots.push(root);
            result.residuals.push(residual);
            result.newton_iters += iters;
        }
    }
    if *vals.last().unwrap() == 0.0 {
        result.roots.push(*ys.last().unwrap());
        result.residuals.push(0.0);
    }
    finalize_roots(&mut result, &p, cfg)?;
    Ok(result)
}

fn panel_rule() -> &'static Rule1D {
    static PANEL: OnceLock<Rule1D> = OnceLock::new();
    PANEL.get_or_init(|| gauss_rule(Family::Legendre, 24).expect("static 24-point Legendre rule"))
}

/// Gauss rule of (up to) `m` points for the weight `u ↦ φ(root + side·u)` on
/// `[0, hi]`: discretize the weight on composite Legendre panels, compress
/// to Jacobi coefficients by Lanczos, and run Golub–Welsch. `side` is ±1.
fn gaussian_tail_rule(root: f64, side: f64, m: usize, hi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let npanels = (hi.ceil() as usize).max((m + 11) / 12).max(1);
    let panel = panel_rule();
    let n = npanels * panel.len();
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    let step = hi / npanels as f64;
    for k in 0..npanels {
        let mapped = panel.mapped_to(k as f64 * step, (k + 1) as f64 * step);
        for (x, w) in mapped.nodes.iter().zip(&mapped.weights) {
            xs.push(*x);
            ws.push(w * normal_pdf(root + side * x));
        }
    }
    let (mut alpha, mut beta) = lanczos_coefficients(&xs, &ws, m.min(n))?;
    if let Some(cut) = beta.iter().skip(1).position(|b| *b <= 0.0) {
        alpha.truncate(cut + 1);
        beta.truncate(cut + 1);
    }
    rule_from_recurrence(&alpha, &beta)
}

fn tail_quadrature(
    g: &impl Fn(f64) -> f64,
    root: f64,
    side: f64,
    cfg: &SmoothingConfig,
) -> Result<f64> {
    match cfg.node_rule {
        NodeRule::GaussianTail => {
            let hi = (8.5 - side * root).clamp(4.0, 20.0);
            let (nodes, weights) = gaussian_tail_rule(root, side, cfg.m_lag, hi)?;
            let mut sum = 0.0;
            for (u, w) in nodes.iter().zip(&weights) {
                let y = root + side * u;
                sum += w * check_finite(g(y), y)?;
            }
            Ok(sum)
        }
        NodeRule::ShiftedLaguerre => {
            let rule = gauss_rule(Family::Laguerre, cfg.m_lag)?;
            let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
            let mut sum = 0.0;
            for (u, w) in rule.nodes.iter().zip(&rule.weights) {
                if *w == 0.0 {
                    continue;
                }
                let y = root + side * u;
                let weight = (w.ln() + u - 0.5 * y * y - ln_sqrt_2pi).exp();
                if weight == 0.0 {
                    continue;
                }
                sum += weight * check_finite(g(y), y)?;
            }
            Ok(sum)
        }
    }
}

/// Integrate `y ↦ G(y)·φ(y)` over ℝ given the discontinuity locations of `G`.
///
/// With no roots a single `2·m_lag`-point Gauss–Hermite rule integrates the
/// (smooth) integrand. With roots `ȳ₁* < … < ȳ_R*`, each tail beyond the
/// outermost roots gets a tail rule per [`SmoothingConfig::node_rule`] and
/// each interior interval an `m_leg`-point Gauss–Legendre rule with the
/// Gaussian density folded into the integrand.
pub fn preintegrate(g: impl Fn(f64) -> f64, roots: &RootResult, cfg: &SmoothingConfig) -> Result<f64> {
    cfg.validate()?;
    if roots.roots.is_empty() {
        let rule = gauss_rule(Family::Hermite, 2 * cfg.m_lag)?;
        let mut sum = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            sum += w * check_finite(g(*x), *x)?;
        }
        return Ok(sum);
    }
    let first = roots.roots[0];
    let last = *roots.roots.last().unwrap();
    let mut total = tail_quadrature(&g, first, -1.0, cfg)?;
    total += tail_quadrature(&g, last, 1.0, cfg)?;
    if roots.roots.len() > 1 {
        let rule = gauss_rule(Family::Legendre, cfg.m_leg)?;
        for pair in roots.roots.windows(2) {
            let mapped = rule.mapped_to(pair[0], pair[1]);
            for (y, w) in mapped.nodes.iter().zip(&mapped.weights) {
                total += w * normal_pdf(*y) * check_finite(g(*y), *y)?;
            }
        }
    }
    Ok(total)
}

/// Exact preintegral of an indicator payoff.
///
/// Between consecutive roots the indicator is constant, so the integral of
/// `G(y)·φ(y)` telescopes into `Φ` differences over the segments where a
/// sign probe reports `P ≥ 0`. No quadrature rule is involved, making the
/// result independent of `m_lag`, `m_leg`, and the node rule.
fn indicator_preintegral(rf: &RootFunction, roots: &RootResult) -> Result<f64> {
    if roots.roots.is_empty() {
        return Ok(rf.payoff_at(0.0));
    }
    let rs = &roots.roots;
    let mut total = 0.0;
    let mut lo_cdf = 0.0;
    for (i, r) in rs.iter().enumerate() {
        let hi_cdf = normal_cdf(*r);
        let probe = if i == 0 { r - 1.0 } else { 0.5 * (rs[i - 1] + r) };
        if check_finite(rf.p(probe), probe)? >= 0.0 {
            total += hi_cdf - lo_cdf;
        }
        lo_cdf = hi_cdf;
    }
    let probe = rs[rs.len() - 1] + 1.0;
    if check_finite(rf.p(probe), probe)? >= 0.0 {
        total += 1.0 - lo_cdf;
    }
    Ok(total)
}

/// Evaluation counters of a [`SmoothedIntegrand`].
#[derive(Debug, Default)]
pub struct SmoothingDiagnostics {
    pub evaluations: AtomicU64,
    pub roots_found: AtomicU64,
    pub rootless_evaluations: AtomicU64,
    pub newton_iterations: AtomicU64,
}

impl SmoothingDiagnostics {
    pub fn snapshot(&self) -> (u64, u64, u64, u64) {
        (
            self.evaluations.load(Ordering::Relaxed),
            self.roots_found.load(Ordering::Relaxed),
            self.rootless_evaluations.load(Ordering::Relaxed),
            self.newton_iterations.load(Ordering::Relaxed),
        )
    }
}

/// The smoothed integrand `Ī`: a function of every coordinate except `y₁`,
/// returning the exact-in-`y₁` preintegrated payoff expectation.
///
/// Indicator payoffs bypass the quadrature rules entirely — their
/// preintegral is a closed-form sum of `Φ` differences — so the node-rule
/// settings only shape payoffs with nonconstant branches.
///
/// Deterministic given coordinates and configuration; evaluation from
/// multiple threads is the intended parallelism.
pub struct SmoothedIntegrand<'a> {
    payoff: PayoffSpec,
    engine: &'a PathEngine,
    cfg: SmoothingConfig,
    diagnostics: SmoothingDiagnostics,
}

impl<'a> SmoothedIntegrand<'a> {
    pub fn diagnostics(&self) -> &SmoothingDiagnostics {
        &self.diagnostics
    }

    pub fn config(&self) -> &SmoothingConfig {
        &self.cfg
    }

    /// The root search + preintegration pipeline at one coordinate vector
    /// (length `coord_dim`; entry 0 unused), also returning the roots.
    pub fn eval_with_roots(&self, w: &[f64]) -> Result<(f64, RootResult)> {
        let rf = root_function(&self.payoff, self.engine, w)?;
        let roots = find_all_roots(|y| rf.p(y), |y| rf.p_and_slope(y).1, &self.cfg)?;
        self.diagnostics.evaluations.fetch_add(1, Ordering::Relaxed);
        self.diagnostics
            .roots_found
            .fetch_add(roots.roots.len() as u64, Ordering::Relaxed);
        self.diagnostics
            .newton_iterations
            .fetch_add(roots.newton_iters as u64, Ordering::Relaxed);
        if roots.roots.is_empty() {
            self.diagnostics.rootless_evaluations.fetch_add(1, Ordering::Relaxed);
        }
        let value = match self.payoff.kind {
            PayoffKind::Indicator => indicator_preintegral(&rf, &roots)?,
            PayoffKind::PositivePart => preintegrate(|y| rf.payoff_at(y), &roots, &self.cfg)?,
        };
        Ok((value, roots))
    }
}

/// Compose root location and preintegration into an [`Integrand`] over the
/// remaining `coord_dim − 1` coordinates.
pub fn smooth<'a>(
    payoff: &PayoffSpec,
    engine: &'a PathEngine,
    cfg: SmoothingConfig,
) -> Result<SmoothedIntegrand<'a>> {
    cfg.validate()?;
    if payoff.n_assets() != engine.model().n_assets() {
        return Err(Error::Shape {
            context: "payoff weights vs model assets",
            expected: engine.model().n_assets(),
            actual: payoff.n_assets(),
        });
    }
    Ok(SmoothedIntegrand {
        payoff: payoff.clone(),
        engine,
        cfg,
        diagnostics: SmoothingDiagnostics::default(),
    })
}

impl Integrand for SmoothedIntegrand<'_> {
    fn dim(&self) -> usize {
        self.engine.coord_dim() - 1
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                context: "smoothed integrand coordinates",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mut w = Vec::with_capacity(x.len() + 1);
        w.push(0.0);
        w.extend_from_slice(x);
        self.eval_with_roots(&w).map(|(v, _)| v)
    }
}

/// Convenience: evaluate one fully specified scalar case — root search on
/// `p` with derivative `dp`, then preintegration of `g` — returning the
/// smoothed value. This is the single-coordinate-vector building block that
/// [`SmoothedIntegrand::eval`] applies at every quadrature/sampling node.
pub fn smooth_scalar(
    p: impl Fn(f64) -> f64,
    dp: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    cfg: &SmoothingConfig,
) -> Result<f64> {
    let roots = find_all_roots(&p, &dp, cfg)?;
    preintegrate(g, &roots, cfg)
}

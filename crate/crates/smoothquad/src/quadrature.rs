//! Gaussian quadrature rules and dimension-adaptive sparse-grid quadrature.
//!
//! One-dimensional rules are built by the Golub–Welsch procedure: the nodes
//! are the eigenvalues of the symmetric tridiagonal Jacobi matrix of the
//! weight's orthogonal polynomials, and the weights are proportional to the
//! squared first components of its eigenvectors. For measures known only
//! through a discretization, the Jacobi coefficients are recovered first with
//! the Gragg–Harrod rotation-based Lanczos reduction
//! ([`lanczos_coefficients`]), which is numerically stable where the naive
//! Stieltjes procedure loses orthogonality.
//!
//! The sparse-grid driver ([`asgq`]) is the Gerstner–Griebel
//! dimension-adaptive loop over tensor products of Gauss–Hermite rules with
//! the level-to-points map `m(1) = 1`, `m(k) = 2^{k−1} + 1`: a set of
//! accepted multi-indices grows by repeatedly expanding the active-front
//! index with the largest first-difference contribution `|ΔQ^β|`. The sum of
//! front contributions serves as the error indicator.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::par::par_map_indexed;
use crate::Integrand;

/// Weight families with closed-form Jacobi recurrences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Probabilists' Hermite: weight `φ(x) = e^{−x²/2}/√(2π)` on ℝ, mass 1.
    Hermite,
    /// Laguerre: weight `e^{−x}` on `[0, ∞)`, mass 1.
    Laguerre,
    /// Legendre: weight 1 on `[−1, 1]`, mass 2.
    Legendre,
}

/// A one-dimensional Gaussian quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule1D {
    /// Nodes in ascending order.
    pub nodes: Vec<f64>,
    /// Positive weights; they sum to the weight function's total mass.
    pub weights: Vec<f64>,
    pub family: Family,
}

impl Rule1D {
    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply a quadrature sum to `f`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    /// Affine image of a Legendre rule on `[a, b]` (weights scale by `(b−a)/2`).
    pub fn mapped_to(&self, a: f64, b: f64) -> Rule1D {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        Rule1D {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
            family: self.family,
        }
    }
}

/// Largest admissible rule size.
pub const MAX_RULE_SIZE: usize = 256;

/// Build the `m`-point Gauss rule for `family`.
pub fn gauss_rule(family: Family, m: usize) -> Result<Rule1D> {
    if m < 1 || m > MAX_RULE_SIZE {
        return Err(Error::parameter(
            "m",
            format!("rule size must be in 1..={MAX_RULE_SIZE}, got {m}"),
        ));
    }
    let mut alpha = vec![0.0; m];
    let mut beta = vec![0.0; m];
    match family {
        Family::Hermite => {
            beta[0] = 1.0;
            for k in 1..m {
                beta[k] = k as f64;
            }
        }
        Family::Laguerre => {
            beta[0] = 1.0;
            for k in 0..m {
                alpha[k] = 2.0 * k as f64 + 1.0;
                if k > 0 {
                    beta[k] = (k as f64) * (k as f64);
                }
            }
        }
        Family::Legendre => {
            beta[0] = 2.0;
            for k in 1..m {
                let kf = k as f64;
                beta[k] = kf * kf / (4.0 * kf * kf - 1.0);
            }
        }
    }
    let (nodes, weights) = rule_from_recurrence(&alpha, &beta)?;
    Ok(Rule1D { nodes, weights, family })
}

/// Gauss nodes and weights from monic three-term recurrence coefficients.
///
/// `alpha[k]`, `beta[k]` are the coefficients in
/// `p_{k+1}(x) = (x − α_k) p_k(x) − β_k p_{k−1}(x)`, with `beta[0]` holding
/// the measure's total mass. Returns nodes ascending.
pub fn rule_from_recurrence(alpha: &[f64], beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = alpha.len();
    if m == 0 || beta.len() != m {
        return Err(Error::Shape {
            context: "recurrence coefficients",
            expected: m.max(1),
            actual: beta.len(),
        });
    }
    if beta[0] <= 0.0 {
        return Err(Error::parameter("beta", "total mass must be positive"));
    }
    let mut diag = alpha.to_vec();
    let mut off = vec![0.0; m];
    for k in 1..m {
        if beta[k] <= 0.0 {
            return Err(Error::parameter(
                "beta",
                format!("recurrence coefficient beta[{k}] must be positive, got {}", beta[k]),
            ));
        }
        off[k - 1] = beta[k].sqrt();
    }
    let mut z = vec![0.0; m];
    z[0] = 1.0;
    tridiag_eigen_first_component(&mut diag, &mut off, &mut z)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let nodes: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let weights: Vec<f64> = order.iter().map(|&i| beta[0] * z[i] * z[i]).collect();
    Ok((nodes, weights))
}

/// Symmetric tridiagonal eigenvalue solver (implicit-shift QL) that tracks
/// only the first row of the eigenvector matrix.
///
/// On return `diag` holds the (unsorted) eigenvalues and `z[i]` the first
/// component of the corresponding normalized eigenvector. `off` holds the
/// subdiagonal in entries `0..n−1` and is destroyed.
fn tridiag_eigen_first_component(diag: &mut [f64], off: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 1 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        'restart: loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::Domain(
                    "tridiagonal QL iteration failed to converge".into(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    continue 'restart;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Recover monic Jacobi coefficients of a discrete measure `Σ w_i δ_{x_i}`.
///
/// Gragg–Harrod rotation-based Lanczos reduction; returns the first `m`
/// `(α, β)` pairs with `β[0] = Σ w_i`. Feed the result to
/// [`rule_from_recurrence`] to obtain a Gauss rule for the discretized
/// measure. Requires `m ≤ len(x)` and nonnegative weights with positive sum.
pub fn lanczos_coefficients(x: &[f64], w: &[f64], m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    if w.len() != n {
        return Err(Error::Shape {
            context: "lanczos weights",
            expected: n,
            actual: w.len(),
        });
    }
    if m == 0 || m > n {
        return Err(Error::parameter(
            "m",
            format!("need 1 ≤ m ≤ {n} recurrence coefficients, got {m}"),
        ));
    }
    if w.iter().any(|wi| !wi.is_finite() || *wi < 0.0) {
        return Err(Error::parameter("w", "weights must be finite and nonnegative"));
    }
    let mut p0 = x.to_vec();
    let mut p1 = vec![0.0; n];
    p1[0] = w[0];
    for k in 0..n - 1 {
        let mut pi = w[k + 1];
        let mut gam = 1.0;
        let mut sig = 0.0;
        let mut t = 0.0;
        let xlam = x[k + 1];
        for j in 0..=k + 1 {
            let rho = p1[j] + pi;
            let tmp = gam * rho;
            let tsig = sig;
            if rho <= 0.0 {
                gam = 1.0;
                sig = 0.0;
            } else {
                gam = p1[j] / rho;
                sig = pi / rho;
            }
            let tk = sig * (p0[j] - xlam) - gam * t;
            p0[j] -= tk - t;
            t = tk;
            pi = if sig <= 0.0 { tsig * p1[j] } else { t * t / sig };
            p1[j] = tmp;
        }
    }
    p0.truncate(m);
    p1.truncate(m);
    if p1[0] <= 0.0 {
        return Err(Error::parameter("w", "weights must have positive total mass"));
    }
    Ok((p0, p1))
}

/// Multi-index of per-dimension quadrature levels (entries ≥ 1).
pub type MultiIndex = Vec<u8>;

/// Highest level whose point count fits the [`MAX_RULE_SIZE`] rule cap.
pub const MAX_LEVEL: u8 = 8;

/// Level-to-points map: `m(1) = 1`, `m(k) = 2^{k−1} + 1`.
#[inline]
pub fn level_points(k: u8) -> usize {
    debug_assert!(k >= 1);
    if k == 1 {
        1
    } else {
        (1usize << (k - 1)) + 1
    }
}

fn tensor_cost(beta: &[u8]) -> usize {
    beta.iter().map(|&b| level_points(b)).product()
}

/// Full tensor-product Gauss–Hermite quadrature at levels `beta`.
pub fn tensor_quadrature(f: &dyn Integrand, beta: &[u8]) -> Result<f64> {
    if beta.len() != f.dim() {
        return Err(Error::Shape {
            context: "tensor_quadrature multi-index",
            expected: f.dim(),
            actual: beta.len(),
        });
    }
    if let Some(&bad) = beta.iter().find(|&&b| b < 1) {
        return Err(Error::parameter("beta", format!("levels must be ≥ 1, got {bad}")));
    }
    let rules: Vec<Rule1D> = beta
        .iter()
        .map(|&b| gauss_rule(Family::Hermite, level_points(b)))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = rules.iter().map(Rule1D::len).collect();
    let total: usize = sizes.iter().product();
    let dim = beta.len();
    let terms = par_map_indexed(total, |flat| {
        let mut rem = flat;
        let mut x = vec![0.0; dim];
        let mut w = 1.0;
        for j in 0..dim {
            let idx = rem % sizes[j];
            rem /= sizes[j];
            x[j] = rules[j].nodes[idx];
            w *= rules[j].weights[idx];
        }
        f.eval(&x).map(|v| w * v)
    });
    let mut sum = 0.0;
    for term in terms {
        sum += term?;
    }
    Ok(sum)
}

/// State of one dimension-adaptive sparse-grid run.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    /// Accepted (expanded) multi-indices, in acceptance order. Downward-closed
    /// together with nothing else: every `β − e_i` of an accepted `β` with
    /// `β_i > 1` was accepted earlier.
    pub accepted: Vec<MultiIndex>,
    /// Active front: computed but not yet expanded, in insertion order.
    pub front: Vec<MultiIndex>,
    /// First-difference contribution `ΔQ^β` for every index ever computed.
    pub contributions: HashMap<MultiIndex, f64>,
    /// Total integrand evaluations spent.
    pub n_evals: usize,
    /// The budget stopped the loop before the tolerance was met.
    pub budget_exhausted: bool,
    /// The front residual fell below the tolerance.
    pub converged: bool,
    memo: HashMap<MultiIndex, f64>,
}

impl AdaptiveState {
    fn new(dim: usize) -> Self {
        let _ = dim;
        AdaptiveState {
            accepted: Vec::new(),
            front: Vec::new(),
            contributions: HashMap::new(),
            n_evals: 0,
            budget_exhausted: false,
            converged: false,
            memo: HashMap::new(),
        }
    }

    /// Σ over the active front of `|ΔQ^β|` — the adaptive error indicator.
    pub fn front_residual(&self) -> f64 {
        self.front.iter().map(|b| self.contributions[b].abs()).sum()
    }

    /// `β` is admissible if every backward neighbor lies in the accepted set.
    pub fn is_admissible(&self, beta: &[u8]) -> bool {
        let mut probe = beta.to_vec();
        for i in 0..beta.len() {
            if beta[i] > 1 {
                probe[i] -= 1;
                let ok = self.accepted.iter().any(|a| a[..] == probe[..]);
                probe[i] += 1;
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    fn memoized_tensor(&mut self, f: &dyn Integrand, beta: &[u8]) -> Result<f64> {
        if let Some(v) = self.memo.get(beta) {
            return Ok(*v);
        }
        let v = tensor_quadrature(f, beta)?;
        self.n_evals += tensor_cost(beta);
        self.memo.insert(beta.to_vec(), v);
        Ok(v)
    }

    /// Evaluations a [`delta_q`] call for `beta` would add, given the memo.
    fn missing_cost(&self, beta: &[u8]) -> usize {
        let mut cost = 0;
        for_each_corner(beta, |corner, _| {
            if !self.memo.contains_key(corner) {
                cost += tensor_cost(corner);
            }
        });
        cost
    }
}

fn for_each_corner(beta: &[u8], mut visit: impl FnMut(&[u8], f64)) {
    let active: Vec<usize> = (0..beta.len()).filter(|&i| beta[i] > 1).collect();
    let mut corner = beta.to_vec();
    for mask in 0u32..1 << active.len() {
        corner.copy_from_slice(beta);
        let mut sign = 1.0;
        for (t, &dim) in active.iter().enumerate() {
            if mask & (1 << t) != 0 {
                corner[dim] -= 1;
                sign = -sign;
            }
        }
        visit(&corner, sign);
    }
}

/// First-difference tensorization `ΔQ^β = (Π_i Δ_i) Q^β` by
/// inclusion–exclusion over the corners `{β − c : c ∈ {0,1}^d, c ≤ β − 1}`.
/// Tensor values are memoized in `state`.
pub fn delta_q(f: &dyn Integrand, beta: &[u8], state: &mut AdaptiveState) -> Result<f64> {
    let active: Vec<usize> = (0..beta.len()).filter(|&i| beta[i] > 1).collect();
    let mut corner = beta.to_vec();
    let mut sum = 0.0;
    for mask in 0u32..1 << active.len() {
        corner.copy_from_slice(beta);
        let mut sign = 1.0;
        for (t, &dim) in active.iter().enumerate() {
            if mask & (1 << t) != 0 {
                corner[dim] -= 1;
                sign = -sign;
            }
        }
        sum += sign * state.memoized_tensor(f, &corner)?;
    }
    Ok(sum)
}

/// Controls for the dimension-adaptive loop.
#[derive(Debug, Clone, Copy)]
pub struct AsgqConfig {
    /// Maximum total integrand evaluations.
    pub budget: usize,
    /// Stop once the front residual drops below this.
    pub tol: f64,
    /// Divide profits by the index's evaluation cost when selecting.
    pub work_normalized_profit: bool,
    /// Per-dimension level cap (points stay within [`MAX_RULE_SIZE`]).
    pub max_level: u8,
}

impl Default for AsgqConfig {
    fn default() -> Self {
        AsgqConfig {
            budget: 10_000,
            tol: 0.0,
            work_normalized_profit: false,
            max_level: MAX_LEVEL,
        }
    }
}

/// Dimension-adaptive sparse-grid quadrature of `f` over the Gaussian measure.
///
/// Gerstner–Griebel loop: start from the all-ones index, repeatedly expand
/// the front index with the largest `|ΔQ^β|`, and admit forward neighbors
/// that keep the accepted set downward-closed. Stops when the front residual
/// falls below `cfg.tol`, when a needed expansion would exceed `cfg.budget`
/// evaluations (sets `budget_exhausted`), or when no admissible expansion
/// remains. The estimate is `Σ ΔQ^β` over every computed index.
pub fn asgq_with(f: &dyn Integrand, cfg: &AsgqConfig) -> Result<(f64, AdaptiveState)> {
    let dim = f.dim();
    if dim < 1 {
        return Err(Error::parameter("dim", "integrand must have at least one dimension"));
    }
    let mut state = AdaptiveState::new(dim);
    let base: MultiIndex = vec![1; dim];
    let mut estimate = delta_q(f, &base, &mut state)?;
    state.contributions.insert(base.clone(), estimate);
    state.front.push(base);
    'drive: loop {
        if state.front_residual() <= cfg.tol {
            state.converged = true;
            break;
        }
        let Some(best_pos) = select_front(&state, cfg) else {
            break;
        };
        let chosen = state.front.remove(best_pos);
        state.accepted.push(chosen.clone());
        for i in 0..dim {
            if chosen[i] >= cfg.max_level {
                continue;
            }
            let mut cand = chosen.clone();
            cand[i] += 1;
            if !state.is_admissible(&cand) || state.contributions.contains_key(&cand) {
                continue;
            }
            let cost = state.missing_cost(&cand);
            if state.n_evals + cost > cfg.budget {
                state.budget_exhausted = true;
                break 'drive;
            }
            let dq = delta_q(f, &cand, &mut state)?;
            estimate += dq;
            state.contributions.insert(cand.clone(), dq);
            state.front.push(cand);
        }
    }
    Ok((estimate, state))
}

fn select_front(state: &AdaptiveState, cfg: &AsgqConfig) -> Option<usize> {
    let mut best: Option<(usize, f64, &MultiIndex)> = None;
    for (pos, beta) in state.front.iter().enumerate() {
        let mut profit = state.contributions[beta].abs();
        if cfg.work_normalized_profit {
            profit /= tensor_cost(beta) as f64;
        }
        let better = match &best {
            None => true,
            Some((_, bp, bb)) => profit > *bp || (profit == *bp && beta > *bb),
        };
        if better {
            best = Some((pos, profit, beta));
        }
    }
    best.map(|(pos, _, _)| pos)
}

/// [`asgq_with`] under a plain budget/tolerance pair.
pub fn asgq(f: &dyn Integrand, budget: usize, tol: f64) -> Result<(f64, AdaptiveState)> {
    asgq_with(
        f,
        &AsgqConfig {
            budget,
            tol,
            ..AsgqConfig::default()
        },
    )
}

/// `|ΔQ|` along one coordinate axis: contributions of `1 + k·e_i` for
/// `k = 1..=k_max`, all other levels held at 1.
pub fn first_difference_profile(f: &dyn Integrand, direction: usize, k_max: u8) -> Result<Vec<f64>> {
    let dim = f.dim();
    if direction >= dim {
        return Err(Error::parameter(
            "direction",
            format!("axis {direction} out of range for {dim} dimensions"),
        ));
    }
    let mut state = AdaptiveState::new(dim);
    let mut profile = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let mut beta: MultiIndex = vec![1; dim];
        beta[direction] = 1 + k;
        profile.push(delta_q(f, &beta, &mut state)?.abs());
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FnIntegrand;

    fn hermite_moment(p: u32) -> f64 {
        if p % 2 == 1 {
            0.0
        } else {
            (1..=p as u64).filter(|k| k % 2 == 1).map(|k| k as f64).product()
        }
    }

    #[test]
    fn hermite_small_rules_closed_form() {
        let r = gauss_rule(Family::Hermite, 1).unwrap();
        assert!((r.nodes[0]).abs() < 1e-14 && (r.weights[0] - 1.0).abs() < 1e-14);
        let r = gauss_rule(Family::Hermite, 2).unwrap();
        assert!((r.nodes[0] + 1.0).abs() < 1e-12 && (r.nodes[1] - 1.0).abs() < 1e-12);
        assert!((r.weights[0] - 0.5).abs() < 1e-12 && (r.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn legendre_three_point_closed_form() {
        let r = gauss_rule(Family::Legendre, 3).unwrap();
        let s = (3.0f64 / 5.0).sqrt();
        assert!((r.nodes[0] + s).abs() < 1e-12);
        assert!(r.nodes[1].abs() < 1e-12);
        assert!((r.nodes[2] - s).abs() < 1e-12);
        assert!((r.weights[0] - 5.0 / 9.0).abs() < 1e-12);
        assert!((r.weights[1] - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn laguerre_two_point_closed_form() {
        let r = gauss_rule(Family::Laguerre, 2).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        assert!((r.nodes[0] - (2.0 - s2)).abs() < 1e-12);
        assert!((r.nodes[1] - (2.0 + s2)).abs() < 1e-12);
        assert!((r.weights[0] - (2.0 + s2) / 4.0).abs() < 1e-12);
        assert!((r.weights[1] - (2.0 - s2) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn rule_mass_and_size_bounds() {
        for m in [1usize, 2, 5, 16, 64, 129, 256] {
            let h = gauss_rule(Family::Hermite, m).unwrap();
            assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "Hermite m={m}");
            let l = gauss_rule(Family::Legendre, m).unwrap();
            assert!((l.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12, "Legendre m={m}");
            let g = gauss_rule(Family::Laguerre, m).unwrap();
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-11, "Laguerre m={m}");
        }
        assert!(gauss_rule(Family::Hermite, 0).is_err());
        assert!(gauss_rule(Family::Hermite, 257).is_err());
    }

    #[test]
    fn polynomial_exactness_to_degree_2m_minus_1() {
        for m in 1..=20usize {
            let h = gauss_rule(Family::Hermite, m).unwrap();
            for p in 0..2 * m as u32 {
                let got = h.integrate(|x| x.powi(p as i32));
                let want = hermite_moment(p);
                let scale = h.integrate(|x| x.abs().powi(p as i32)).max(1.0);
                assert!(
                    (got - want).abs() / scale < 1e-12,
                    "Hermite m={m} degree {p}: {got} vs {want}"
                );
            }
            let l = gauss_rule(Family::Legendre, m).unwrap();
            for p in 0..2 * m as u32 {
                let got = l.integrate(|x| x.powi(p as i32));
                let want = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((got - want).abs() < 1e-12, "Legendre m={m} degree {p}");
            }
            let g = gauss_rule(Family::Laguerre, m).unwrap();
            for p in 0..2 * m as u32 {
                let got = g.integrate(|x| x.powi(p as i32));
                let want: f64 = (1..=p as u64).map(|k| k as f64).product();
                let scale = want.abs().max(1.0);
                assert!(
                    (got - want).abs() / scale < 1e-10,
                    "Laguerre m={m} degree {p}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn mapped_legendre_mass() {
        let r = gauss_rule(Family::Legendre, 8).unwrap().mapped_to(1.5, 4.0);
        assert!((r.weights.iter().sum::<f64>() - 2.5).abs() < 1e-12);
        assert!((r.integrate(|x| x) - 0.5 * (16.0 - 2.25)).abs() < 1e-12);
    }

    #[test]
    fn lanczos_recovers_hermite_recurrence() {
        let dense = gauss_rule(Family::Hermite, 60).unwrap();
        let (alpha, beta) = lanczos_coefficients(&dense.nodes, &dense.weights, 20).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12);
        for k in 0..20 {
            assert!(alpha[k].abs() < 1e-9, "alpha[{k}] = {}", alpha[k]);
            if k > 0 {
                assert!((beta[k] - k as f64).abs() < 1e-8, "beta[{k}] = {}", beta[k]);
            }
        }
        let (nodes, weights) = rule_from_recurrence(&alpha[..10], &beta[..10]).unwrap();
        let direct = gauss_rule(Family::Hermite, 10).unwrap();
        for i in 0..10 {
            assert!((nodes[i] - direct.nodes[i]).abs() < 1e-9);
            assert!((weights[i] - direct.weights[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lanczos_rejects_bad_input() {
        assert!(lanczos_coefficients(&[0.0, 1.0], &[0.5], 1).is_err());
        assert!(lanczos_coefficients(&[0.0, 1.0], &[0.5, -0.1], 1).is_err());
        assert!(lanczos_coefficients(&[0.0, 1.0], &[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn level_map_values() {
        assert_eq!(level_points(1), 1);
        assert_eq!(level_points(2), 3);
        assert_eq!(level_points(3), 5);
        assert_eq!(level_points(8), 129);
        assert!(level_points(MAX_LEVEL) <= MAX_RULE_SIZE);
    }

    #[test]
    fn tensor_constant_and_moments() {
        let c = FnIntegrand::new(3, |_| Ok(2.5));
        assert!((tensor_quadrature(&c, &[1, 1, 1]).unwrap() - 2.5).abs() < 1e-14);
        let prod = FnIntegrand::new(3, |x| Ok(x[0] * x[0] * x[1] * x[1] * x[2] * x[2]));
        assert!((tensor_quadrature(&prod, &[2, 2, 2]).unwrap() - 1.0).abs() < 1e-12);
        let quartic = FnIntegrand::new(2, |x| Ok(x[0].powi(4)));
        assert!((tensor_quadrature(&quartic, &[3, 1]).unwrap() - 3.0).abs() < 1e-12);
        assert!(tensor_quadrature(&quartic, &[3]).is_err());
        assert!(tensor_quadrature(&quartic, &[3, 0]).is_err());
    }

    #[test]
    fn delta_q_base_case_and_vanishing() {
        let f = FnIntegrand::new(2, |x| Ok(1.0 + x[0] * x[0]));
        let mut state = AdaptiveState::new(2);
        let base = delta_q(&f, &[1, 1], &mut state).unwrap();
        assert!((base - 1.0).abs() < 1e-14);
        let d2 = delta_q(&f, &[2, 1], &mut state).unwrap();
        assert!((d2 - 1.0).abs() < 1e-12);
        let d3 = delta_q(&f, &[3, 1], &mut state).unwrap();
        assert!(d3.abs() < 1e-13);
        let dy = delta_q(&f, &[1, 2], &mut state).unwrap();
        assert!(dy.abs() < 1e-13);
    }

    #[test]
    fn delta_q_telescopes_to_full_tensor() {
        let f = FnIntegrand::new(3, |x| {
            Ok((0.3 * x[0] + 0.1).exp() * (1.0 + x[1] * x[1]) * (0.2 * x[2]).cos())
        });
        let b = [3u8, 2, 3];
        let mut state = AdaptiveState::new(3);
        let mut sum = 0.0;
        for i in 1..=b[0] {
            for j in 1..=b[1] {
                for k in 1..=b[2] {
                    sum += delta_q(&f, &[i, j, k], &mut state).unwrap();
                }
            }
        }
        let full = tensor_quadrature(&f, &b).unwrap();
        assert!((sum - full).abs() < 1e-12, "telescoped {sum} vs tensor {full}");
    }

    #[test]
    fn asgq_constant_recovered_exactly() {
        let c = FnIntegrand::new(4, |_| Ok(7.25));
        let (est, state) = asgq(&c, 100, 1e-12).unwrap();
        assert!((est - 7.25).abs() < 1e-12);
        assert!(state.n_evals <= 13, "one expansion round at most, got {}", state.n_evals);
        assert!(state.converged);
    }

    #[test]
    fn asgq_separable_quartic_exact_cheaply() {
        let f = FnIntegrand::new(5, |x| {
            Ok(x.iter().map(|z| z.powi(4) + z.powi(3) + z * z + z + 1.0).sum())
        });
        let exact = 5.0 * (3.0 + 1.0 + 1.0);
        let (est, state) = asgq(&f, 10_000, 1e-13).unwrap();
        assert!((est - exact).abs() < 1e-12, "estimate {est} vs {exact}");
        let full_tensor_level3 = 5usize.pow(5);
        assert!(
            state.n_evals * 20 < full_tensor_level3,
            "used {} evaluations",
            state.n_evals
        );
        assert!(state.converged);
    }

    #[test]
    fn asgq_accepted_set_stays_downward_closed() {
        let f = FnIntegrand::new(3, |x| {
            Ok((0.8 * x[0]).exp() * (1.0 + 0.5 * x[1]).powi(2) * (0.3 * x[2]).cos())
        });
        let (_, state) = asgq(&f, 2_000, 0.0).unwrap();
        assert!(state.budget_exhausted);
        for beta in &state.accepted {
            let mut probe = beta.clone();
            for i in 0..probe.len() {
                if probe[i] > 1 {
                    probe[i] -= 1;
                    assert!(
                        state.accepted.iter().any(|a| a[..] == probe[..]),
                        "missing backward neighbor of {beta:?}"
                    );
                    probe[i] += 1;
                }
            }
        }
    }

    #[test]
    fn asgq_is_deterministic() {
        let f = FnIntegrand::new(4, |x| Ok((x[0] + 0.3 * x[1] * x[2]).exp() + x[3] * x[3]));
        let (a, sa) = asgq(&f, 3_000, 0.0).unwrap();
        let (b, sb) = asgq(&f, 3_000, 0.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(sa.n_evals, sb.n_evals);
        assert_eq!(sa.accepted, sb.accepted);
    }

    #[test]
    fn asgq_budget_flag_and_estimate_validity() {
        let f = FnIntegrand::new(6, |x| Ok((x.iter().sum::<f64>() + 0.3).tanh()));
        let (est, state) = asgq(&f, 50, 1e-12).unwrap();
        assert!(state.budget_exhausted);
        assert!(!state.converged);
        assert!(state.n_evals <= 50);
        assert!(est.is_finite());
    }

    #[test]
    fn first_difference_profile_decays_for_analytic_integrand() {
        let f = FnIntegrand::new(2, |x| Ok(x[0].exp()));
        let prof = first_difference_profile(&f, 0, 5).unwrap();
        assert_eq!(prof.len(), 5);
        for k in 1..prof.len() {
            assert!(
                prof[k] < prof[k - 1],
                "profile should decay: {:?}",
                prof
            );
        }
        let c = FnIntegrand::new(2, |_| Ok(3.0));
        let prof = first_difference_profile(&c, 1, 4).unwrap();
        for v in &prof {
            assert!(v.abs() < 1e-13);
        }
        assert!(first_difference_profile(&f, 2, 3).is_err());
    }
}

//! Hierarchical Gaussian coordinates for Brownian paths.
//!
//! Three pieces live here:
//!
//! * a Brownian-bridge construction that turns one *coarse* standard normal
//!   (the terminal value of the motion) and `N−1` *fine* standard normals
//!   (midpoint refinements, consumed coarsest level first) into the `N`
//!   increments of a discrete Brownian path;
//! * the orthonormal rotation `A` whose first row is the normalized all-ones
//!   vector, used to expose one distinguished coordinate `y₁` among the
//!   per-asset coarse variables — the direction along which a payoff
//!   discontinuity is later integrated out;
//! * the level/position indexing of the fine coordinates, which orders them
//!   by their dyadic time support.

use crate::error::{Error, Result};

/// Uniform time grid for a discretized path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGrid {
    /// Number of time steps `N`.
    pub n_steps: usize,
    /// Horizon `T`.
    pub horizon: f64,
    /// Number of assets `d` (coarse coordinates subject to the rotation).
    pub d: usize,
}

impl PathGrid {
    pub fn new(n_steps: usize, horizon: f64, d: usize) -> Result<Self> {
        if n_steps < 1 {
            return Err(Error::parameter("n_steps", "need at least one time step"));
        }
        if d < 1 {
            return Err(Error::parameter("d", "need at least one asset"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::parameter("horizon", format!("must be positive, got {horizon}")));
        }
        Ok(PathGrid { n_steps, horizon, d })
    }

    /// Step size Δt = T/N.
    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Grid with the same horizon and half the steps (N must be even).
    pub fn coarsened(&self) -> Result<Self> {
        if self.n_steps < 2 || self.n_steps % 2 != 0 {
            return Err(Error::parameter(
                "n_steps",
                format!("halving the grid needs an even step count, got {}", self.n_steps),
            ));
        }
        PathGrid::new(self.n_steps / 2, self.horizon, self.d)
    }
}

/// Level/position index of a fine bridge coordinate.
///
/// Level `n ≥ 0` splits the horizon into `2ⁿ` spans; position `k` selects
/// one. The coordinate with index `(n, k)` refines the midpoint of
/// `[k·2⁻ⁿT, (k+1)·2⁻ⁿT]` and influences no increment outside that span.
/// `n = −1` denotes the global coarse coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaarLevelIndex {
    pub n: i32,
    pub k: usize,
}

impl HaarLevelIndex {
    pub fn new(n: i32, k: usize) -> Result<Self> {
        if n >= 0 && k >= (1usize << n) {
            return Err(Error::parameter("k", format!("position {k} out of range for level {n}")));
        }
        Ok(HaarLevelIndex { n, k })
    }

    /// Index of fine slot `slot` (0-based consumption order) on a dyadic grid.
    pub fn of_slot(slot: usize) -> Self {
        let pos = slot + 1;
        let n = usize::BITS - 1 - pos.leading_zeros();
        HaarLevelIndex {
            n: n as i32,
            k: pos - (1usize << n),
        }
    }
}

/// Orthonormal rotation of the coarse coordinates with fixed first row
/// `(1/√d, …, 1/√d)`.
#[derive(Debug, Clone)]
pub struct RotationMatrix {
    d: usize,
    /// Row-major `d×d` entries.
    a: Vec<f64>,
}

/// Build the rotation for `d` assets.
///
/// The first row is the normalized all-ones vector; the remaining rows come
/// from Gram–Schmidt over the standard basis vectors `e₂, …, e_d` (candidates
/// whose projection norm falls below 1e-10 would be dropped, which cannot
/// happen for this seed set). The result is deterministic and orthonormal,
/// and equals its own inverse transpose.
pub fn build_rotation(d: usize) -> Result<RotationMatrix> {
    if d < 1 {
        return Err(Error::parameter("d", "need at least one asset"));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    rows.push(vec![inv_sqrt_d; d]);
    for cand in 1..d {
        let mut v = vec![0.0; d];
        v[cand] = 1.0;
        for row in &rows {
            let dot: f64 = row.iter().zip(&v).map(|(r, x)| r * x).sum();
            for (vi, ri) in v.iter_mut().zip(row) {
                *vi -= dot * ri;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            rows.push(v);
        }
    }
    debug_assert_eq!(rows.len(), d);
    let mut a = Vec::with_capacity(d * d);
    for row in rows {
        a.extend(row);
    }
    Ok(RotationMatrix { d, a })
}

impl RotationMatrix {
    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Entry `A[i][j]`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    /// `y = A·z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.d);
        (0..self.d)
            .map(|i| {
                let row = &self.a[i * self.d..(i + 1) * self.d];
                row.iter().zip(z).map(|(a, zj)| a * zj).sum()
            })
            .collect()
    }

    /// `z = Aᵀ·y` (the inverse, since `A` is orthonormal).
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.d);
        let mut z = vec![0.0; self.d];
        for (i, yi) in y.iter().enumerate() {
            let row = &self.a[i * self.d..(i + 1) * self.d];
            for (zj, aij) in z.iter_mut().zip(row) {
                *zj += aij * yi;
            }
        }
        z
    }
}

/// One fill step of the bridge: interpolate between two already-known path
/// values and add an independent Gaussian kick.
#[derive(Debug, Clone, Copy)]
struct BridgeStep {
    /// Time index being filled.
    idx: usize,
    left: usize,
    right: usize,
    weight_left: f64,
    weight_right: f64,
    stddev: f64,
}

/// Precomputed fill order and conditional laws for bridging one stream.
///
/// Intervals are always split longest-first (ties resolved leftmost), which
/// on a dyadic grid reproduces the level-major order of [`HaarLevelIndex`]:
/// the fine coordinate consumed at slot `s` is exactly `HaarLevelIndex::of_slot(s)`.
/// Non-power-of-two step counts are supported by the same rule, splitting at
/// the integer midpoint.
#[derive(Debug, Clone)]
pub struct BridgeSchedule {
    n_steps: usize,
    sqrt_horizon: f64,
    steps: Vec<BridgeStep>,
}

impl BridgeSchedule {
    pub fn new(grid: &PathGrid) -> Self {
        let n = grid.n_steps;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * grid.dt()).collect();
        let mut steps = Vec::with_capacity(n.saturating_sub(1));
        // Generation-ordered worklist: longest interval first, leftmost on ties.
        let mut intervals = vec![(0usize, n)];
        while !intervals.is_empty() {
            intervals.sort_by(|x, y| {
                let lx = x.1 - x.0;
                let ly = y.1 - y.0;
                ly.cmp(&lx).then(x.0.cmp(&y.0))
            });
            let (l, r) = intervals.remove(0);
            if r - l < 2 {
                continue;
            }
            let m = l + (r - l) / 2;
            let (tl, tm, tr) = (times[l], times[m], times[r]);
            let span = tr - tl;
            steps.push(BridgeStep {
                idx: m,
                left: l,
                right: r,
                weight_left: (tr - tm) / span,
                weight_right: (tm - tl) / span,
                stddev: ((tm - tl) * (tr - tm) / span).sqrt(),
            });
            intervals.push((l, m));
            intervals.push((m, r));
        }
        BridgeSchedule {
            n_steps: n,
            sqrt_horizon: grid.horizon.sqrt(),
            steps,
        }
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Fill `increments` (length `N`) from one coarse and `N−1` fine normals.
    ///
    /// `path` is scratch of length `N+1`. The resulting increments satisfy
    /// `Σ ΔW = √T·z_coarse`, and fine coordinate `s` only touches increments
    /// inside the time support of its schedule entry.
    pub fn increments_into(
        &self,
        z_coarse: f64,
        z_fine: &[f64],
        path: &mut [f64],
        increments: &mut [f64],
    ) {
        debug_assert_eq!(z_fine.len(), self.n_steps - 1);
        debug_assert_eq!(path.len(), self.n_steps + 1);
        debug_assert_eq!(increments.len(), self.n_steps);
        path[0] = 0.0;
        path[self.n_steps] = self.sqrt_horizon * z_coarse;
        for (step, z) in self.steps.iter().zip(z_fine) {
            path[step.idx] =
                step.weight_left * path[step.left] + step.weight_right * path[step.right] + step.stddev * z;
        }
        for k in 0..self.n_steps {
            increments[k] = path[k + 1] - path[k];
        }
    }
}

/// Brownian increments over `grid` from hierarchical coordinates.
///
/// Validating wrapper around [`BridgeSchedule::increments_into`]; callers on
/// hot paths should build the schedule once and reuse it.
pub fn bridge_increments(grid: &PathGrid, z_coarse: f64, z_fine: &[f64]) -> Result<Vec<f64>> {
    if z_fine.len() + 1 != grid.n_steps {
        return Err(Error::Shape {
            context: "bridge_increments fine coordinates",
            expected: grid.n_steps - 1,
            actual: z_fine.len(),
        });
    }
    let schedule = BridgeSchedule::new(grid);
    let mut path = vec![0.0; grid.n_steps + 1];
    let mut increments = vec![0.0; grid.n_steps];
    schedule.increments_into(z_coarse, z_fine, &mut path, &mut increments);
    Ok(increments)
}

/// Hierarchical coordinates of one multi-asset path, after the rotation.
#[derive(Debug, Clone)]
pub struct HierarchicalCoords {
    /// The distinguished (smoothing) coordinate: first rotated coarse entry.
    pub y1: f64,
    /// Remaining rotated coarse coordinates, length `d−1`.
    pub y_rest: Vec<f64>,
    /// Fine bridge coordinates, one vector of length `N−1` per asset.
    pub z_rest: Vec<Vec<f64>>,
}

/// Split a flat coordinate vector of length `d·N` into rotated coarse and
/// per-asset fine parts.
///
/// Layout of `all_gaussians`: the first `d` entries are the per-asset coarse
/// coordinates; the remaining `d·(N−1)` entries hold the fine coordinates in
/// level-major slot order with assets innermost, so halving the step count
/// truncates the vector to a prefix.
pub fn split_coords(
    all_gaussians: &[f64],
    rot: &RotationMatrix,
    grid: &PathGrid,
) -> Result<HierarchicalCoords> {
    let d = grid.d;
    let n = grid.n_steps;
    if all_gaussians.len() != d * n {
        return Err(Error::Shape {
            context: "split_coords input",
            expected: d * n,
            actual: all_gaussians.len(),
        });
    }
    if rot.dim() != d {
        return Err(Error::Shape {
            context: "split_coords rotation",
            expected: d,
            actual: rot.dim(),
        });
    }
    let y = rot.apply(&all_gaussians[0..d]);
    let mut z_rest = vec![Vec::with_capacity(n - 1); d];
    for slot in 0..n - 1 {
        for (asset, fine) in z_rest.iter_mut().enumerate() {
            fine.push(all_gaussians[d + slot * d + asset]);
        }
    }
    Ok(HierarchicalCoords {
        y1: y[0],
        y_rest: y[1..].to_vec(),
        z_rest,
    })
}

/// Inverse of [`split_coords`]: rebuild the flat coordinate vector.
pub fn merge_coords(coords: &HierarchicalCoords, rot: &RotationMatrix, grid: &PathGrid) -> Vec<f64> {
    let d = grid.d;
    let mut y = Vec::with_capacity(d);
    y.push(coords.y1);
    y.extend(&coords.y_rest);
    let mut all = rot.apply_transpose(&y);
    for slot in 0..grid.n_steps - 1 {
        for fine in &coords.z_rest {
            all.push(fine[slot]);
        }
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn rotation_first_row_and_orthonormality() {
        for d in 1..=20 {
            let rot = build_rotation(d).unwrap();
            for j in 0..d {
                assert!((rot.entry(0, j) - 1.0 / (d as f64).sqrt()).abs() < 1e-12);
            }
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = (0..d).map(|k| rot.entry(i, k) * rot.entry(j, k)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (dot - expect).abs() < 1e-12,
                        "d={d} row dot ({i},{j}) = {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_round_trip() {
        let rot = build_rotation(5).unwrap();
        let z = [0.3, -1.2, 2.0, 0.05, -0.7];
        let y = rot.apply(&z);
        let back = rot.apply_transpose(&y);
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_d4_applies_first_row() {
        let rot = build_rotation(4).unwrap();
        // Coarse vector e1 has rotated first coordinate 1/2.
        let y = rot.apply(&[1.0, 0.0, 0.0, 0.0]);
        assert!((y[0] - 0.5).abs() < 1e-12);
        // Symmetric all-ones input lands entirely on y1.
        let y = rot.apply(&[1.0, 1.0, 1.0, 1.0]);
        assert!((y[0] - 2.0).abs() < 1e-12);
        assert!(max_abs(&y[1..]) < 1e-12);
    }

    #[test]
    fn bridge_zero_and_linear_inputs() {
        let grid = PathGrid::new(4, 1.0, 1).unwrap();
        let inc = bridge_increments(&grid, 0.0, &[0.0, 0.0, 0.0]).unwrap();
        assert!(max_abs(&inc) == 0.0);
        let inc = bridge_increments(&grid, 1.0, &[0.0, 0.0, 0.0]).unwrap();
        for dw in &inc {
            assert!((dw - 0.25).abs() < 1e-15);
        }
        assert!((inc.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bridge_two_step_closed_form() {
        // N=2, T=1: W(1) = z_coarse, W(1/2) = z_coarse/2 + z_fine/2.
        let grid = PathGrid::new(2, 1.0, 1).unwrap();
        let (a, b) = (0.8, -1.3);
        let inc = bridge_increments(&grid, a, &[b]).unwrap();
        assert!((inc[0] - (0.5 * a + 0.5 * b)).abs() < 1e-15);
        assert!((inc[1] - (0.5 * a - 0.5 * b)).abs() < 1e-15);
    }

    /// The bridge is a linear map L from coordinates to increments; its Gram
    /// matrix must equal the Brownian increment covariance diag(Δt).
    #[test]
    fn bridge_covariance_matches_brownian_law() {
        for n in [1usize, 2, 3, 4, 6, 8, 16] {
            let grid = PathGrid::new(n, 2.0, 1).unwrap();
            let mut columns = Vec::new();
            for j in 0..n {
                let mut coords = vec![0.0; n];
                coords[j] = 1.0;
                let inc = bridge_increments(&grid, coords[0], &coords[1..]).unwrap();
                columns.push(inc);
            }
            let dt = grid.dt();
            for r in 0..n {
                for s in 0..n {
                    let cov: f64 = columns.iter().map(|c| c[r] * c[s]).sum();
                    let expect = if r == s { dt } else { 0.0 };
                    assert!(
                        (cov - expect).abs() < 1e-12,
                        "N={n} cov({r},{s}) = {cov}, want {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn fine_coordinate_locality() {
        let grid = PathGrid::new(8, 1.0, 1).unwrap();
        for slot in 0..7 {
            let idx = HaarLevelIndex::of_slot(slot);
            let mut fine = vec![0.0; 7];
            fine[slot] = 1.0;
            let inc = bridge_increments(&grid, 0.0, &fine).unwrap();
            let span = 1.0 / f64::from(1 << idx.n as u32);
            let (lo, hi) = (idx.k as f64 * span, (idx.k + 1) as f64 * span);
            for (step, dw) in inc.iter().enumerate() {
                let (t0, t1) = (step as f64 / 8.0, (step + 1) as f64 / 8.0);
                let inside = t0 >= lo - 1e-12 && t1 <= hi + 1e-12;
                if !inside {
                    assert_eq!(*dw, 0.0, "slot {slot} leaked into step {step}");
                }
            }
        }
    }

    #[test]
    fn haar_slot_indexing() {
        let expect = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (2, 3)];
        for (slot, (n, k)) in expect.iter().enumerate() {
            let idx = HaarLevelIndex::of_slot(slot);
            assert_eq!((idx.n, idx.k), (*n, *k));
        }
        assert!(HaarLevelIndex::new(2, 4).is_err());
    }

    #[test]
    fn split_and_merge_round_trip() {
        let grid = PathGrid::new(4, 1.0, 3).unwrap();
        let rot = build_rotation(3).unwrap();
        let all: Vec<f64> = (0..12).map(|i| (i as f64) * 0.17 - 1.0).collect();
        let coords = split_coords(&all, &rot, &grid).unwrap();
        assert_eq!(coords.y_rest.len(), 2);
        assert_eq!(coords.z_rest.len(), 3);
        assert_eq!(coords.z_rest[0].len(), 3);
        let back = merge_coords(&coords, &rot, &grid);
        for (a, b) in all.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_coords_symmetry_d2() {
        let grid = PathGrid::new(1, 1.0, 2).unwrap();
        let rot = build_rotation(2).unwrap();
        let coords = split_coords(&[1.0, 1.0], &rot, &grid).unwrap();
        assert!((coords.y1 - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(coords.y_rest[0].abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let grid = PathGrid::new(4, 1.0, 2).unwrap();
        let rot = build_rotation(2).unwrap();
        assert!(split_coords(&[0.0; 7], &rot, &grid).is_err());
        assert!(bridge_increments(&grid, 0.0, &[0.0; 2]).is_err());
        assert!(PathGrid::new(0, 1.0, 1).is_err());
        assert!(PathGrid::new(4, -1.0, 1).is_err());
    }

    #[test]
    fn non_dyadic_bridge_still_brownian() {
        // Same covariance identity on a non-power-of-two grid.
        let grid = PathGrid::new(5, 1.0, 1).unwrap();
        let mut columns = Vec::new();
        for j in 0..5 {
            let mut coords = vec![0.0; 5];
            coords[j] = 1.0;
            columns.push(bridge_increments(&grid, coords[0], &coords[1..]).unwrap());
        }
        let dt = grid.dt();
        for r in 0..5 {
            for s in 0..5 {
                let cov: f64 = columns.iter().map(|c| c[r] * c[s]).sum();
                let expect = if r == s { dt } else { 0.0 };
                assert!((cov - expect).abs() < 1e-12);
            }
        }
    }
}

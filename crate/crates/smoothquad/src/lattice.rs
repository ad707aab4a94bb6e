//! Rank-1 lattice rule: embedded generating vector and point generation.

use crate::error::{Error, Result};

/// Modulus the embedded vector was constructed for.
pub const EMBEDDED_MODULUS: u64 = 65_536;

/// Maximum dimension the embedded vector covers.
pub const EMBEDDED_DIM: usize = 128;

// Component-by-component construction modulo 2^16 minimizing the order-2
// weighted Korobov worst-case error with coordinate weights γ_j = 1/j²,
// searching 1024 random odd candidates per component for the first 16
// dimensions and 384 per component beyond, search seed 20240817.
pub static EMBEDDED_VECTOR: [u32; EMBEDDED_DIM] = [
    9723, 64137, 22997, 6361, 53143, 39251, 45199, 52757,
    20509, 12073, 38701, 40977, 25451, 54113, 48411, 22347,
    10347, 27883, 27941, 36269, 3975, 54965, 47343, 35369,
    28541, 48311, 8095, 21099, 2503, 26993, 60281, 61939,
    12405, 2843, 22705, 26425, 48585, 3331, 47299, 9181,
    2213, 47485, 52595, 41163, 2615, 24949, 49795, 19927,
    4457, 16129, 3931, 5681, 47533, 40563, 64413, 54503,
    13113, 911, 43709, 53675, 22465, 35177, 63357, 18657,
    48875, 5549, 32301, 8185, 8847, 11209, 10355, 35251,
    51695, 5733, 3745, 9277, 55283, 31683, 4551, 47353,
    54463, 29673, 49721, 45749, 10807, 60085, 19421, 2979,
    15305, 11541, 22863, 16011, 40923, 60537, 5839, 43409,
    39901, 28581, 23979, 22117, 861, 48075, 37291, 64489,
    52729, 59503, 62545, 56297, 33547, 26803, 57381, 55175,
    17543, 12623, 50897, 18473, 36957, 7333, 32407, 65109,
    20739, 58419, 7133, 16907, 36251, 38801, 7933, 55751,
];

/// First `dim` components of the embedded vector, reduced modulo `n_points`.
///
/// Reduction preserves oddness because `n_points` is a power of two, so the
/// one-dimensional projections of the reduced lattice stay full.
pub fn generating_vector(dim: usize, n_points: u64) -> Result<Vec<u32>> {
    if dim == 0 {
        return Err(Error::parameter("dim", "need at least one dimension"));
    }
    if dim > EMBEDDED_DIM {
        return Err(Error::parameter(
            "dim",
            format!("embedded generating vector covers {EMBEDDED_DIM} dimensions, requested {dim}"),
        ));
    }
    validate_point_count(n_points)?;
    Ok(EMBEDDED_VECTOR[..dim]
        .iter()
        .map(|z| (u64::from(*z) % n_points) as u32)
        .collect())
}

pub fn validate_point_count(n_points: u64) -> Result<()> {
    if n_points < 2 || !n_points.is_power_of_two() || n_points > EMBEDDED_MODULUS {
        return Err(Error::parameter(
            "n_points",
            format!("lattice size must be a power of two in 2..={EMBEDDED_MODULUS}, got {n_points}"),
        ));
    }
    Ok(())
}

pub fn validate_vector(z: &[u32], n_points: u64) -> Result<()> {
    validate_point_count(n_points)?;
    if z.is_empty() {
        return Err(Error::parameter("generating_vector", "must be nonempty"));
    }
    for (j, entry) in z.iter().enumerate() {
        if entry % 2 == 0 || u64::from(*entry) >= n_points {
            return Err(Error::parameter(
                "generating_vector",
                format!("entry {j} = {entry} must be odd and below n_points = {n_points}"),
            ));
        }
    }
    Ok(())
}

/// Write the `index`-th point of the shifted lattice into `out`:
/// `out[j] = frac(index·z_j/n + shift_j)`, each component in `[0, 1)`.
pub fn lattice_point_into(index: u64, z: &[u32], n_points: u64, shift: &[f64], out: &mut [f64]) {
    debug_assert_eq!(z.len(), out.len());
    debug_assert_eq!(shift.len(), out.len());
    let inv_n = 1.0 / n_points as f64;
    for j in 0..z.len() {
        let base = (index.wrapping_mul(u64::from(z[j])) % n_points) as f64 * inv_n;
        let mut u = base + shift[j];
        if u >= 1.0 {
            u -= 1.0;
        }
        out[j] = u;
    }
}

#![allow(dead_code)]

use covfree::linalg::{hstack, null_space_basis, Tolerances};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn tol() -> Tolerances {
    Tolerances::default()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Well-conditioned positive definite matrix.
pub fn spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian(n, n, rng);
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n)
}

pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(n, n, rng).qr().q()
}

/// Penalty `Q diag(d, 0) Qᵀ` of the given rank, with the orthonormal basis
/// of its null space.
pub fn penalty_with_rank(k: usize, rank: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = orthogonal(k, rng);
    let d = DMatrix::from_fn(k, k, |i, j| if i == j && i < rank { 0.5 + rng.random::<f64>() } else { 0.0 });
    let kmat = &q * d * q.transpose();
    let null = q.columns(rank, k - rank).into_owned();
    (kmat, null)
}

/// `Ω = XΓXᵀ + ZΔZᵀ` with `Γ = (XᵀX)⁻¹ + NSNᵀ`, which satisfies
/// `XᵀΩZ = 0` and `XᵀXΓK = K` for every `K` whose null space contains
/// `𝒞(N)`.
pub fn coinciding_omega(x: &DMatrix<f64>, null_k: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let z = null_space_basis(x, &tol()).unwrap();
    let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
    let gamma = xtx_inv + null_k * spd(null_k.ncols(), rng) * null_k.transpose();
    let delta = spd(n - k, rng);
    let mut omega = x * gamma * x.transpose() + &z * delta * z.transpose();
    covfree::linalg::symmetrize(&mut omega);
    omega
}

/// Positive definite `Ω` with `XᵀΩZ = 0` but `XᵀXΓ ≠ I` on the range of `K`.
pub fn blocked_but_failing_omega(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let z = null_space_basis(x, &tol()).unwrap();
    let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
    let gamma = &xtx_inv * spd(k, rng) * &xtx_inv * 3.0;
    let delta = spd(n - k, rng);
    let mut omega = x * gamma * x.transpose() + &z * delta * z.transpose();
    covfree::linalg::symmetrize(&mut omega);
    omega
}

/// Weight matrix that is block diagonal with respect to `𝒞(X) ⊕ 𝒞(X)^⊥`.
pub fn invariant_weights(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let qx = x.clone().qr().q();
    let z = null_space_basis(x, &tol()).unwrap();
    let u = hstack(&qx, &z);
    let mut b = DMatrix::zeros(n, n);
    b.view_mut((0, 0), (k, k)).copy_from(&gaussian(k, k, rng));
    b.view_mut((k, k), (n - k, n - k)).copy_from(&gaussian(n - k, n - k, rng));
    scale_to_unit_norm(&u * b * u.transpose())
}

/// Weight matrix acting only inside `𝒞(X)^⊥`, so `WX = WᵀX = 0`.
pub fn annihilating_weights(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let z = null_space_basis(x, &tol()).unwrap();
    scale_to_unit_norm(&z * gaussian(z.ncols(), z.ncols(), rng) * z.transpose())
}

pub fn generic_weights(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    scale_to_unit_norm(gaussian(n, n, rng))
}

/// Scales to spectral norm one, so `I + ρW` is nonsingular for `|ρ| < 1`.
pub fn scale_to_unit_norm(w: DMatrix<f64>) -> DMatrix<f64> {
    let s = w.clone().svd(false, false).singular_values.max();
    if s == 0.0 { w } else { w / s }
}

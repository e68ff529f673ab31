//! Dense linear-algebra aliases and the few helpers the oracles need.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Spectral norm of an arbitrary matrix.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Draws a symmetric matrix with off-diagonal entries N(0, 1) and diagonal
/// entries N(0, 2), i.e. (G + Gᵀ)/√2 for a standard Gaussian G.
pub fn goe_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let z: f64 = rng.sample(StandardNormal);
            if i == j {
                m[(i, i)] = std::f64::consts::SQRT_2 * z;
            } else {
                m[(i, j)] = z;
                m[(j, i)] = z;
            }
        }
    }
    m
}

/// Uniform point in the Euclidean ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vector {
    let mut dir = gaussian_vector(d, rng);
    let n = dir.norm();
    if n > 0.0 {
        dir /= n;
    }
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / d as f64))
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    loop {
        let v = gaussian_vector(d, rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Haar-distributed orthogonal matrix from the QR factorisation of a
/// Gaussian matrix with sign correction.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

//! Running moments and least-squares slope for Monte-Carlo summaries.

use crate::linalg::Vector;

/// Welford accumulator for a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Coordinate-wise Welford accumulator for vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorMoments {
    n: u64,
    mean: Vector,
    m2: Vector,
}

impl VectorMoments {
    pub fn new(d: usize) -> Self {
        VectorMoments {
            n: 0,
            mean: Vector::zeros(d),
            m2: Vector::zeros(d),
        }
    }

    pub fn push(&mut self, x: &Vector) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    /// Per-coordinate variance of the mean estimate.
    pub fn mean_variance(&self) -> Vector {
        if self.n < 2 {
            return Vector::zeros(self.mean.len());
        }
        let n = self.n as f64;
        &self.m2 / ((n - 1.0) * n)
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

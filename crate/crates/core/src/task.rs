//! Synthetic task families with analytic oracles.
//!
//! Three families are provided:
//!
//! * quadratic: `l(w) = ½wᵀAw + bᵀw`,
//! * trig: `l(w) = c(1 − cos(aᵀw + φ)) + (λ/2)‖w‖²`, which is nonconvex
//!   and has a nonzero Hessian-Lipschitz constant,
//! * finite-sum MSE: linear regression with fixed support and query sets.
//!
//! Resampling tasks expose per-sample losses `l(w; τ) = l(w) + ε_τᵀw +
//! ½wᵀE_τw`. Every [`TaskDistribution`] carries a [`SmoothnessProfile`]
//! whose constants are certified on the ball `‖w‖ ≤ R`.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    gaussian_vector, goe_matrix, random_orthogonal, sym_norm, unit_vector, Matrix, Vector,
};
use crate::rng::{Role, Stream};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Resampling,
    FiniteSum,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Resampling => "resampling",
            Case::FiniteSum => "finite-sum",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    Trig,
    FiniteSumMse,
    /// Resampling tasks of more than one kind.
    Mixed,
}

/// Calibrated per-sample noise.
///
/// `ε_τ ~ N(0, linear_var·I)` and `E_τ = s(G + Gᵀ)/√2` with `s =
/// curvature_scale`, so that `E‖E_τ‖_F² = s²d(d+1)` and
/// `E‖E_τw‖² = s²(d+1)‖w‖²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub linear_var: f64,
    pub curvature_scale: f64,
}

impl NoiseModel {
    pub const ZERO: NoiseModel = NoiseModel {
        linear_var: 0.0,
        curvature_scale: 0.0,
    };

    /// Noise whose gradient and Hessian variances are exactly `sigma_g²`
    /// and `sigma_h²` at the boundary of the ball of the given radius.
    pub fn calibrated(d: usize, sigma_g: f64, sigma_h: f64, radius: f64) -> Result<Self> {
        nonneg("sigma_g", sigma_g)?;
        nonneg("sigma_h", sigma_h)?;
        positive("radius", radius)?;
        let d_f = d as f64;
        let s2 = sigma_h * sigma_h / (d_f * (d_f + 1.0));
        let curvature_part = sigma_h * sigma_h * radius * radius / d_f;
        let total = sigma_g * sigma_g;
        if curvature_part > total * (1.0 + 1e-12) {
            return Err(Error::param(
                "sigma_g",
                format!(
                    "sigma_H²R²/d = {curvature_part} exceeds sigma_g² = {total}; \
                     Hessian noise alone would break the gradient-variance bound"
                ),
            ));
        }
        Ok(NoiseModel {
            linear_var: (total - curvature_part).max(0.0) / d_f,
            curvature_scale: s2.sqrt(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.linear_var == 0.0 && self.curvature_scale == 0.0
    }

    /// `E‖∇l(w;τ) − ∇l(w)‖²` at a point with the given norm.
    pub fn gradient_variance(&self, d: usize, w_norm: f64) -> f64 {
        let d = d as f64;
        let s2 = self.curvature_scale * self.curvature_scale;
        self.linear_var * d + s2 * (d + 1.0) * w_norm * w_norm
    }

    /// `E‖E_τ‖_F²`, an upper bound on the spectral second moment.
    pub fn hessian_variance(&self, d: usize) -> f64 {
        let d = d as f64;
        self.curvature_scale * self.curvature_scale * d * (d + 1.0)
    }

    fn validate(&self) -> Result<()> {
        nonneg("linear_var", self.linear_var)?;
        nonneg("curvature_scale", self.curvature_scale)
    }
}

/// Fixed regression data `(x, y)` with cached moments.
///
/// The loss is `(1/n)Σ(y − wᵀx)²`, its gradient `Gw − m` with
/// `G = (2/n)Σxxᵀ` and `m = (2/n)Σyx`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    inputs: Vec<Vector>,
    targets: Vec<f64>,
    gram: Matrix,
    moment: Vector,
}

impl LeastSquares {
    pub fn new(inputs: Vec<Vector>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("least-squares sample set"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        let n = inputs.len() as f64;
        let mut gram = Matrix::zeros(d, d);
        let mut moment = Vector::zeros(d);
        for (x, &y) in inputs.iter().zip(&targets) {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: x.len(),
                });
            }
            if !x.iter().all(|v| v.is_finite()) || !y.is_finite() {
                return Err(Error::param("data", "non-finite sample"));
            }
            gram.ger(2.0 / n, x, x, 1.0);
            moment.axpy(2.0 * y / n, x, 1.0);
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        Ok(LeastSquares {
            inputs,
            targets,
            gram,
            moment,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn moment(&self) -> &Vector {
        &self.moment
    }

    fn loss(&self, w: &Vector) -> f64 {
        let total: f64 = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, y)| {
                let r = y - w.dot(x);
                r * r
            })
            .sum();
        total / self.inputs.len() as f64
    }

    fn grad(&self, w: &Vector) -> Vector {
        &self.gram * w - &self.moment
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Quadratic {
        a: Matrix,
        b: Vector,
        noise: NoiseModel,
    },
    Trig {
        c: f64,
        a: Vector,
        phase: f64,
        lambda: f64,
        noise: NoiseModel,
    },
    FiniteSum {
        support: LeastSquares,
        query: LeastSquares,
    },
}

/// One task with exact oracles.
///
/// `loss`, `grad` and `hess` refer to the inner-loop objective (`lᵢ` or
/// `l_S`); the `query_*` methods refer to the objective evaluated after
/// adaptation (`lᵢ` again, or `l_T`).
#[derive(Clone, Debug)]
pub struct Task {
    index: usize,
    dim: usize,
    kind: Kind,
}

impl Task {
    pub fn quadratic(a: Matrix, b: Vector, noise: NoiseModel) -> Result<Self> {
        let d = b.len();
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: a.nrows().max(a.ncols()),
            });
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::param("A, b", "non-finite coefficient"));
        }
        let scale = a.abs().max().max(1.0);
        if crate::linalg::asymmetry(&a) > 1e-12 * scale {
            return Err(Error::param("A", "must be symmetric"));
        }
        noise.validate()?;
        let a = (&a + a.transpose()) * 0.5;
        Ok(Task {
            index: 0,
            dim: d,
            kind: Kind::Quadratic { a, b, noise },
        })
    }

    pub fn trig(c: f64, a: Vector, phase: f64, lambda: f64, noise: NoiseModel) -> Result<Self> {
        let d = a.len();
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if !c.is_finite() || !phase.is_finite() || !a.iter().all(|v| v.is_finite()) {
            return Err(Error::param("c, a, phase", "non-finite coefficient"));
        }
        nonneg("lambda", lambda)?;
        noise.validate()?;
        Ok(Task {
            index: 0,
            dim: d,
            kind: Kind::Trig {
                c,
                a,
                phase,
                lambda,
                noise,
            },
        })
    }

    pub fn finite_sum(support: LeastSquares, query: LeastSquares) -> Result<Self> {
        if support.dim() != query.dim() {
            return Err(Error::DimensionMismatch {
                expected: support.dim(),
                actual: query.dim(),
            });
        }
        Ok(Task {
            index: 0,
            dim: support.dim(),
            kind: Kind::FiniteSum { support, query },
        })
    }

    /// Position of the task inside its distribution.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        match self.kind {
            Kind::Quadratic { .. } => Family::Quadratic,
            Kind::Trig { .. } => Family::Trig,
            Kind::FiniteSum { .. } => Family::FiniteSumMse,
        }
    }

    pub fn case(&self) -> Case {
        match self.kind {
            Kind::FiniteSum { .. } => Case::FiniteSum,
            _ => Case::Resampling,
        }
    }

    pub fn noise(&self) -> Option<NoiseModel> {
        match self.kind {
            Kind::Quadratic { noise, .. } | Kind::Trig { noise, .. } => Some(noise),
            Kind::FiniteSum { .. } => None,
        }
    }

    /// Support and query sets of a finite-sum task.
    pub fn data(&self) -> Option<(&LeastSquares, &LeastSquares)> {
        match &self.kind {
            Kind::FiniteSum { support, query } => Some((support, query)),
            _ => None,
        }
    }

    pub(crate) fn check(&self, w: &Vector) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: w.len(),
            });
        }
        Ok(())
    }

    pub fn loss(&self, w: &Vector) -> Result<f64> {
        self.check(w)?;
        Ok(match &self.kind {
            Kind::Quadratic { a, b, .. } => 0.5 * w.dot(&(a * w)) + b.dot(w),
            Kind::Trig {
                c,
                a,
                phase,
                lambda,
                ..
            } => c * (1.0 - (a.dot(w) + phase).cos()) + 0.5 * lambda * w.norm_squared(),
            Kind::FiniteSum { support, .. } => support.loss(w),
        })
    }

    pub fn grad(&self, w: &Vector) -> Result<Vector> {
        self.check(w)?;
        Ok(match &self.kind {
            Kind::Quadratic { a, b, .. } => a * w + b,
            Kind::Trig {
                c,
                a,
                phase,
                lambda,
                ..
            } => a * (c * (a.dot(w) + phase).sin()) + w * *lambda,
            Kind::FiniteSum { support, .. } => support.grad(w),
        })
    }

    pub fn hess(&self, w: &Vector) -> Result<Matrix> {
        self.check(w)?;
        Ok(match &self.kind {
            Kind::Quadratic { a, .. } => a.clone(),
            Kind::Trig {
                c,
                a,
                phase,
                lambda,
                ..
            } => {
                let mut h = Matrix::identity(self.dim, self.dim) * *lambda;
                h.ger(c * (a.dot(w) + phase).cos(), a, a, 1.0);
                h
            }
            Kind::FiniteSum { support, .. } => support.gram.clone(),
        })
    }

    pub fn query_loss(&self, w: &Vector) -> Result<f64> {
        match &self.kind {
            Kind::FiniteSum { query, .. } => {
                self.check(w)?;
                Ok(query.loss(w))
            }
            _ => self.loss(w),
        }
    }

    pub fn query_grad(&self, w: &Vector) -> Result<Vector> {
        match &self.kind {
            Kind::FiniteSum { query, .. } => {
                self.check(w)?;
                Ok(query.grad(w))
            }
            _ => self.grad(w),
        }
    }

    pub fn query_hess(&self, w: &Vector) -> Result<Matrix> {
        match &self.kind {
            Kind::FiniteSum { query, .. } => {
                self.check(w)?;
                Ok(query.gram.clone())
            }
            _ => self.hess(w),
        }
    }

    /// Global gradient-Lipschitz constant of this task's losses.
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            Kind::Quadratic { a, .. } => sym_norm(a),
            Kind::Trig { c, a, lambda, .. } => c.abs() * a.norm_squared() + lambda,
            Kind::FiniteSum { support, query } => sym_norm(&support.gram).max(sym_norm(&query.gram)),
        }
    }

    /// Global Hessian-Lipschitz constant of this task's losses.
    pub fn hessian_lipschitz(&self) -> f64 {
        match &self.kind {
            Kind::Trig { c, a, .. } => c.abs() * a.norm().powi(3),
            _ => 0.0,
        }
    }

    /// Query gradient written as `Gw − m + h(w)` with `‖h(w)‖ ≤ η`.
    fn gradient_decomposition(&self) -> (Matrix, Vector, f64) {
        let d = self.dim;
        match &self.kind {
            Kind::Quadratic { a, b, .. } => (a.clone(), -b, 0.0),
            Kind::Trig { c, a, lambda, .. } => (
                Matrix::identity(d, d) * *lambda,
                Vector::zeros(d),
                c.abs() * a.norm(),
            ),
            Kind::FiniteSum { query, .. } => (query.gram.clone(), query.moment.clone(), 0.0),
        }
    }

    /// `max_{‖w‖≤R} ‖∇l_S(w) − ∇l_T(w)‖`, bounded by `‖G_S−G_T‖R + ‖m_S−m_T‖`.
    fn support_query_gap(&self, radius: f64) -> f64 {
        match &self.kind {
            Kind::FiniteSum { support, query } => {
                sym_norm(&(&support.gram - &query.gram)) * radius
                    + (&support.moment - &query.moment).norm()
            }
            _ => 0.0,
        }
    }

    /// Draws `size` per-sample noise realisations from `stream`.
    pub fn sample_batch(&self, size: usize, stream: &Stream) -> Result<SampleBatch> {
        let noise = self.noise().ok_or(Error::WrongCase {
            op: "sample_batch",
            case: "finite-sum",
        })?;
        if size == 0 {
            return Err(Error::param("batch size", "must be at least 1"));
        }
        let d = self.dim;
        let packed = d * (d + 1) / 2;
        let lin_sd = noise.linear_var.sqrt();
        let s = noise.curvature_scale;
        let mut linear = Vec::new();
        let mut curvature = Vec::new();
        if lin_sd > 0.0 {
            linear.reserve(size * d);
        }
        if s > 0.0 {
            curvature.reserve(size * packed);
        }
        let mut rng = stream.rng();
        for _ in 0..size {
            if lin_sd > 0.0 {
                for _ in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    linear.push(lin_sd * z);
                }
            }
            if s > 0.0 {
                for i in 0..d {
                    for j in 0..=i {
                        let z: f64 = rng.sample(StandardNormal);
                        let scale = if i == j { std::f64::consts::SQRT_2 * s } else { s };
                        curvature.push(scale * z);
                    }
                }
            }
        }
        Ok(SampleBatch {
            task_index: self.index,
            size,
            dim: d,
            linear,
            curvature,
        })
    }

    fn check_batch(&self, w: &Vector, batch: &SampleBatch, op: &'static str) -> Result<()> {
        if self.case() == Case::FiniteSum {
            return Err(Error::WrongCase {
                op,
                case: "finite-sum",
            });
        }
        self.check(w)?;
        if batch.task_index != self.index {
            return Err(Error::ForeignBatch {
                task: self.index,
                batch_task: batch.task_index,
            });
        }
        if batch.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: batch.dim,
            });
        }
        Ok(())
    }

    /// Mini-batch gradient `(1/|Ω|)Σ_τ ∇l(w;τ)`.
    pub fn stoch_grad(&self, w: &Vector, batch: &SampleBatch) -> Result<Vector> {
        self.check_batch(w, batch, "stoch_grad")?;
        let mut g = self.grad(w)?;
        if let Some(e) = batch.mean_linear() {
            g += e;
        }
        if let Some(m) = batch.mean_curvature() {
            g += m * w;
        }
        Ok(g)
    }

    /// Mini-batch Hessian `(1/|Ω|)Σ_τ ∇²l(w;τ)`.
    pub fn stoch_hess(&self, w: &Vector, batch: &SampleBatch) -> Result<Matrix> {
        self.check_batch(w, batch, "stoch_hess")?;
        let mut h = self.hess(w)?;
        if let Some(m) = batch.mean_curvature() {
            h += m;
        }
        Ok(h)
    }

    fn to_document(&self) -> TaskDocument {
        match &self.kind {
            Kind::Quadratic { a, b, noise } => TaskDocument::Quadratic {
                a: rows(a),
                b: b.iter().copied().collect(),
                noise: *noise,
            },
            Kind::Trig {
                c,
                a,
                phase,
                lambda,
                noise,
            } => TaskDocument::Trig {
                c: *c,
                a: a.iter().copied().collect(),
                phase: *phase,
                lambda: *lambda,
                noise: *noise,
            },
            Kind::FiniteSum { support, query } => TaskDocument::FiniteSumMse {
                support: DataDocument::from(support),
                query: DataDocument::from(query),
            },
        }
    }
}

/// Realised per-sample noise for one stochastic batch.
///
/// Components that are identically zero under the task's noise model are
/// not materialised. Curvature perturbations are stored as packed lower
/// triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    task_index: usize,
    size: usize,
    dim: usize,
    linear: Vec<f64>,
    curvature: Vec<f64>,
}

impl SampleBatch {
    pub fn task_index(&self) -> usize {
        self.task_index
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `ε_τ` of sample `i`, if the linear noise is nonzero.
    pub fn linear_sample(&self, i: usize) -> Option<&[f64]> {
        if self.linear.is_empty() || i >= self.size {
            return None;
        }
        Some(&self.linear[i * self.dim..(i + 1) * self.dim])
    }

    /// `E_τ` of sample `i`, if the curvature noise is nonzero.
    pub fn curvature_sample(&self, i: usize) -> Option<Matrix> {
        if self.curvature.is_empty() || i >= self.size {
            return None;
        }
        let packed = self.dim * (self.dim + 1) / 2;
        Some(unpack(&self.curvature[i * packed..(i + 1) * packed], self.dim))
    }

    fn mean_linear(&self) -> Option<Vector> {
        if self.linear.is_empty() {
            return None;
        }
        let mut acc = Vector::zeros(self.dim);
        for chunk in self.linear.chunks_exact(self.dim) {
            for (a, v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        Some(acc / self.size as f64)
    }

    fn mean_curvature(&self) -> Option<Matrix> {
        if self.curvature.is_empty() {
            return None;
        }
        let packed = self.dim * (self.dim + 1) / 2;
        let mut acc = vec![0.0; packed];
        for chunk in self.curvature.chunks_exact(packed) {
            for (a, v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        let n = self.size as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(unpack(&acc, self.dim))
    }
}

fn unpack(packed: &[f64], d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    let mut idx = 0;
    for i in 0..d {
        for j in 0..=i {
            m[(i, j)] = packed[idx];
            m[(j, i)] = packed[idx];
            idx += 1;
        }
    }
    m
}

/// Assumption constants of a task distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    #[serde(rename = "L")]
    pub l: f64,
    pub rho: f64,
    pub sigma: f64,
    pub sigma_g: f64,
    #[serde(rename = "sigma_H")]
    pub sigma_h: f64,
    pub b: f64,
    pub b_tilde: f64,
}

impl SmoothnessProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.fields() {
            nonneg(name, v)?;
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("L", self.l),
            ("rho", self.rho),
            ("sigma", self.sigma),
            ("sigma_g", self.sigma_g),
            ("sigma_H", self.sigma_h),
            ("b", self.b),
            ("b_tilde", self.b_tilde),
        ]
    }

    /// True if every constant is at least the corresponding one in `other`,
    /// up to a relative rounding tolerance.
    pub fn dominates(&self, other: &SmoothnessProfile) -> bool {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .all(|((_, a), (_, b))| *a >= *b - 1e-9 * b.abs().max(1e-300))
    }
}

/// Finite family of tasks with sampling weights and certified constants.
#[derive(Clone, Debug)]
pub struct TaskDistribution {
    family: Family,
    case: Case,
    radius: f64,
    tasks: Vec<Task>,
    weights: Vec<f64>,
    profile: SmoothnessProfile,
    seed: Option<u64>,
    generator: Option<FamilySpec>,
}

impl TaskDistribution {
    /// Builds a distribution and certifies its profile on the ball of
    /// radius `radius`.
    pub fn new(tasks: Vec<Task>, weights: Vec<f64>, radius: f64) -> Result<Self> {
        positive("radius", radius)?;
        if tasks.is_empty() {
            return Err(Error::Empty("task list"));
        }
        if weights.len() != tasks.len() {
            return Err(Error::DimensionMismatch {
                expected: tasks.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("weights", "must be nonnegative and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::param(
                "weights",
                format!("sum to {total}, expected 1"),
            ));
        }
        let d = tasks[0].dim;
        let case = tasks[0].case();
        let mut family = tasks[0].family();
        for t in &tasks {
            if t.dim != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: t.dim,
                });
            }
            if t.case() != case {
                return Err(Error::param(
                    "tasks",
                    "resampling and finite-sum tasks cannot be mixed",
                ));
            }
            if t.family() != family {
                family = Family::Mixed;
            }
        }
        let tasks: Vec<Task> = tasks
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.index = i;
                t
            })
            .collect();
        let profile = certify(&tasks, &weights, radius);
        Ok(TaskDistribution {
            family,
            case,
            radius,
            tasks,
            weights,
            profile,
            seed: None,
            generator: None,
        })
    }

    pub fn uniform(tasks: Vec<Task>, radius: f64) -> Result<Self> {
        let m = tasks.len().max(1);
        let weights = vec![1.0 / m as f64; tasks.len()];
        Self::new(tasks, weights, radius)
    }

    /// Replaces the profile with a looser one. Any constant may be raised;
    /// none may drop below its certified value.
    pub fn with_profile(mut self, profile: SmoothnessProfile) -> Result<Self> {
        profile.validate()?;
        let certified = self.certified_profile();
        if !profile.dominates(&certified) {
            return Err(Error::param(
                "profile",
                format!("{profile:?} is tighter than the certified {certified:?}"),
            ));
        }
        self.profile = profile;
        Ok(self)
    }

    pub fn certified_profile(&self) -> SmoothnessProfile {
        certify(&self.tasks, &self.weights, self.radius)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn case(&self) -> Case {
        self.case
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, i: usize) -> &Task {
        &self.tasks[i]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn profile(&self) -> &SmoothnessProfile {
        &self.profile
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn generator(&self) -> Option<&FamilySpec> {
        self.generator.as_ref()
    }

    /// `count` i.i.d. task indices drawn according to the weights.
    pub fn sample_task_indices(&self, count: usize, stream: &Stream) -> Vec<usize> {
        let mut rng = stream.rng();
        if self.tasks.len() == 1 {
            return vec![0; count];
        }
        let dist = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        (0..count).map(|_| dist.sample(&mut rng)).collect()
    }

    /// Exact `E_i‖∇lᵢ(w) − E_j∇l_j(w)‖²` over the family (query losses).
    pub fn gradient_variance_at(&self, w: &Vector) -> Result<f64> {
        let grads = self
            .tasks
            .iter()
            .map(|t| t.query_grad(w))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = Vector::zeros(self.dim());
        for (g, p) in grads.iter().zip(&self.weights) {
            mean.axpy(*p, g, 1.0);
        }
        Ok(grads
            .iter()
            .zip(&self.weights)
            .map(|(g, p)| p * (g - &mean).norm_squared())
            .sum())
    }

    pub fn to_document(&self) -> FamilyDocument {
        FamilyDocument {
            family: self.family,
            case: self.case,
            d: self.dim(),
            seed: self.seed,
            radius: self.radius,
            generator: self.generator.clone(),
            weights: self.weights.clone(),
            tasks: self.tasks.iter().map(Task::to_document).collect(),
            profile: self.profile,
        }
    }

    pub fn from_document(doc: FamilyDocument) -> Result<Self> {
        let tasks = doc
            .tasks
            .into_iter()
            .map(TaskDocument::into_task)
            .collect::<Result<Vec<_>>>()?;
        let mut dist = TaskDistribution::new(tasks, doc.weights, doc.radius)?;
        if dist.dim() != doc.d {
            return Err(Error::DimensionMismatch {
                expected: doc.d,
                actual: dist.dim(),
            });
        }
        if dist.family != doc.family || dist.case != doc.case {
            return Err(Error::param(
                "family",
                format!(
                    "document declares {:?}/{:?} but tasks are {:?}/{:?}",
                    doc.family, doc.case, dist.family, dist.case
                ),
            ));
        }
        dist = dist.with_profile(doc.profile)?;
        dist.seed = doc.seed;
        dist.generator = doc.generator;
        Ok(dist)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn certify(tasks: &[Task], weights: &[f64], radius: f64) -> SmoothnessProfile {
    let d = tasks[0].dim;
    let l = tasks.iter().map(Task::lipschitz).fold(0.0, f64::max);
    let rho = tasks.iter().map(Task::hessian_lipschitz).fold(0.0, f64::max);

    // Affine part: E‖δG w − δm‖² ≤ ‖E δG²‖R² + 2‖E δG δm‖R + E‖δm‖².
    // Bounded part: E‖h − E h‖² ≤ E η². Minkowski combines the two.
    let parts: Vec<_> = tasks.iter().map(Task::gradient_decomposition).collect();
    let mut g_bar = Matrix::zeros(d, d);
    let mut m_bar = Vector::zeros(d);
    for ((g, m, _), p) in parts.iter().zip(weights) {
        g_bar += g * *p;
        m_bar.axpy(*p, m, 1.0);
    }
    let mut second = Matrix::zeros(d, d);
    let mut cross = Vector::zeros(d);
    let mut offset = 0.0;
    let mut eta2 = 0.0;
    for ((g, m, eta), p) in parts.iter().zip(weights) {
        let dg = g - &g_bar;
        let dm = m - &m_bar;
        second += (&dg * &dg) * *p;
        cross.axpy(*p, &(&dg * &dm), 1.0);
        offset += p * dm.norm_squared();
        eta2 += p * eta * eta;
    }
    let affine =
        (sym_norm(&second) * radius * radius + 2.0 * cross.norm() * radius + offset).max(0.0);
    let sigma = affine.sqrt() + eta2.sqrt();

    let mut sigma_g2: f64 = 0.0;
    let mut sigma_h2: f64 = 0.0;
    for t in tasks {
        if let Some(noise) = t.noise() {
            sigma_g2 = sigma_g2.max(noise.gradient_variance(d, radius));
            sigma_h2 = sigma_h2.max(noise.hessian_variance(d));
        }
    }

    let (mut b, mut b_tilde) = (0.0, 0.0);
    for (t, p) in tasks.iter().zip(weights) {
        let gap = t.support_query_gap(radius);
        b += p * gap;
        b_tilde += p * gap * gap;
    }

    SmoothnessProfile {
        l,
        rho,
        sigma,
        sigma_g: sigma_g2.sqrt(),
        sigma_h: sigma_h2.sqrt(),
        b,
        b_tilde,
    }
}

fn nonneg(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::param(name, format!("must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::param(name, format!("must be finite and positive, got {v}")));
    }
    Ok(())
}

fn at_least_one(name: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::param(name, "must be at least 1"));
    }
    Ok(())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn loosen_rho(dist: TaskDistribution, rho: Option<f64>) -> Result<TaskDistribution> {
    match rho {
        Some(r) => {
            let mut p = *dist.profile();
            p.rho = p.rho.max(r);
            dist.with_profile(p)
        }
        None => Ok(dist),
    }
}

fn stamp(mut dist: TaskDistribution, seed: u64, spec: FamilySpec) -> TaskDistribution {
    dist.seed = Some(seed);
    dist.generator = Some(spec);
    dist
}

/// Quadratic family `lᵢ(w) = ½wᵀAᵢw + bᵢᵀw`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub d: usize,
    pub num_tasks: usize,
    pub l_target: f64,
    pub sigma: f64,
    pub sigma_g: f64,
    pub sigma_h: f64,
    pub radius: f64,
    pub seed: u64,
    /// Declared Hessian-Lipschitz constant; any value is valid for quadratics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl QuadraticSpec {
    pub fn build(&self) -> Result<TaskDistribution> {
        let &QuadraticSpec {
            d,
            num_tasks,
            l_target,
            sigma,
            radius,
            seed,
            ..
        } = self;
        at_least_one("d", d)?;
        at_least_one("num_tasks", num_tasks)?;
        positive("l_target", l_target)?;
        positive("radius", radius)?;
        nonneg("sigma", sigma)?;
        let noise = NoiseModel::calibrated(d, self.sigma_g, self.sigma_h, radius)?;

        let root = Stream::root(seed);
        let mut rng = root.role(Role::Init).rng();
        let q = random_orthogonal(d, &mut rng);
        let eig = Vector::from_fn(d, |_, _| l_target * (0.25 + 0.5 * rng.random::<f64>()));
        let a_bar = &q * Matrix::from_diagonal(&eig) * q.transpose();
        let a_bar = (&a_bar + a_bar.transpose()) * 0.5;
        let b_bar = gaussian_vector(d, &mut rng) * (0.05 * l_target * radius / (d as f64).sqrt());

        let m = num_tasks as f64;
        let mut da: Vec<Matrix> = Vec::with_capacity(num_tasks);
        let mut db: Vec<Vector> = Vec::with_capacity(num_tasks);
        for i in 0..num_tasks {
            let mut trng = root.slot(i).rng();
            da.push(goe_matrix(d, &mut trng) / (d as f64).sqrt());
            db.push(gaussian_vector(d, &mut trng) / (d as f64).sqrt());
        }
        let da_mean = da.iter().fold(Matrix::zeros(d, d), |acc, x| acc + x) / m;
        let db_mean = db.iter().fold(Vector::zeros(d), |acc, x| acc + x) / m;
        da.iter_mut().for_each(|x| *x -= &da_mean);
        db.iter_mut().for_each(|x| *x -= &db_mean);

        let mut second = Matrix::zeros(d, d);
        let mut cross = Vector::zeros(d);
        let mut offset = 0.0;
        for (x, y) in da.iter().zip(&db) {
            second += (x * x) / m;
            cross += (x * y) / m;
            offset += y.norm_squared() / m;
        }
        let second_n = sym_norm(&second);
        let cross_n = cross.norm();
        let headroom = l_target - sym_norm(&a_bar);
        let max_da = da.iter().map(sym_norm).fold(0.0, f64::max);
        let s_a = if second_n > 0.0 && max_da > 0.0 && sigma > 0.0 {
            (sigma / (radius * (2.0 * second_n).sqrt())).min(headroom / max_da)
        } else {
            0.0
        };
        let a0 = s_a * s_a * second_n * radius * radius;
        let beta = s_a * cross_n * radius;
        let s_b = if offset > 0.0 {
            (-beta + (beta * beta + offset * (sigma * sigma - a0).max(0.0)).sqrt()) / offset
        } else {
            0.0
        };

        let tasks = da
            .iter()
            .zip(&db)
            .map(|(x, y)| {
                let a = &a_bar + x * s_a;
                let a = (&a + a.transpose()) * 0.5;
                Task::quadratic(a, &b_bar + y * s_b, noise)
            })
            .collect::<Result<Vec<_>>>()?;
        let dist = TaskDistribution::uniform(tasks, radius)?;
        let dist = loosen_rho(dist, self.rho)?;
        Ok(stamp(dist, seed, FamilySpec::Quadratic(self.clone())))
    }
}

/// Trigonometric family `lᵢ(w) = cᵢ(1 − cos(aᵢᵀw + φᵢ)) + (λ/2)‖w‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSpec {
    pub d: usize,
    pub num_tasks: usize,
    pub c_max: f64,
    pub a_max: f64,
    pub lambda: f64,
    pub radius: f64,
    pub sigma_g: f64,
    pub sigma_h: f64,
    pub seed: u64,
}

impl TrigSpec {
    /// Task 0 attains `c_max` and `a_max`; the others draw `cᵢ` and `‖aᵢ‖`
    /// uniformly from the upper half of their ranges.
    pub fn build(&self) -> Result<TaskDistribution> {
        let &TrigSpec {
            d,
            num_tasks,
            c_max,
            a_max,
            lambda,
            radius,
            seed,
            ..
        } = self;
        at_least_one("d", d)?;
        at_least_one("num_tasks", num_tasks)?;
        positive("c_max", c_max)?;
        positive("a_max", a_max)?;
        nonneg("lambda", lambda)?;
        positive("radius", radius)?;
        let noise = NoiseModel::calibrated(d, self.sigma_g, self.sigma_h, radius)?;

        let root = Stream::root(seed);
        let tasks = (0..num_tasks)
            .map(|i| {
                let mut rng = root.slot(i).rng();
                let dir = unit_vector(d, &mut rng);
                let (c, norm) = if i == 0 {
                    (c_max, a_max)
                } else {
                    (
                        c_max * (0.5 + 0.5 * rng.random::<f64>()),
                        a_max * (0.5 + 0.5 * rng.random::<f64>()),
                    )
                };
                let phase = std::f64::consts::TAU * rng.random::<f64>();
                Task::trig(c, dir * norm, phase, lambda, noise)
            })
            .collect::<Result<Vec<_>>>()?;
        let dist = TaskDistribution::uniform(tasks, radius)?;
        let mut p = *dist.profile();
        p.l = p.l.max(c_max * a_max * a_max + lambda);
        p.rho = p.rho.max(c_max * a_max.powi(3));
        let dist = dist.with_profile(p)?;
        Ok(stamp(dist, seed, FamilySpec::Trig(self.clone())))
    }
}

/// Linear-regression tasks with fixed support and query sets.
///
/// Task parameters are `θᵢ ~ N(0, I/d)`, inputs `x ~ N(0, I)` and targets
/// `y = θᵢᵀx + noise_std·z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseSpec {
    pub d: usize,
    pub num_tasks: usize,
    pub support_size: usize,
    pub query_size: usize,
    pub noise_std: f64,
    pub radius: f64,
    pub seed: u64,
    /// Declared Hessian-Lipschitz constant; any value is valid for MSE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl MseSpec {
    pub fn build(&self) -> Result<TaskDistribution> {
        let &MseSpec {
            d,
            num_tasks,
            support_size,
            query_size,
            noise_std,
            radius,
            seed,
            ..
        } = self;
        at_least_one("d", d)?;
        at_least_one("num_tasks", num_tasks)?;
        at_least_one("support_size", support_size)?;
        at_least_one("query_size", query_size)?;
        nonneg("noise_std", noise_std)?;
        positive("radius", radius)?;

        let root = Stream::root(seed);
        let draw = |theta: &Vector, n: usize, stream: Stream| -> Result<LeastSquares> {
            let mut rng = stream.rng();
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x = gaussian_vector(d, &mut rng);
                let z: f64 = rng.sample(StandardNormal);
                ys.push(theta.dot(&x) + noise_std * z);
                xs.push(x);
            }
            LeastSquares::new(xs, ys)
        };
        let tasks = (0..num_tasks)
            .map(|i| {
                let slot = root.slot(i);
                let mut rng = slot.role(Role::Init).rng();
                let theta = gaussian_vector(d, &mut rng) / (d as f64).sqrt();
                let support = draw(&theta, support_size, slot.role(Role::Support))?;
                let query = draw(&theta, query_size, slot.role(Role::Query))?;
                Task::finite_sum(support, query)
            })
            .collect::<Result<Vec<_>>>()?;
        let dist = TaskDistribution::uniform(tasks, radius)?;
        let dist = loosen_rho(dist, self.rho)?;
        Ok(stamp(dist, seed, FamilySpec::FiniteSumMse(self.clone())))
    }
}

/// Generator parameters for any family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    Quadratic(QuadraticSpec),
    Trig(TrigSpec),
    FiniteSumMse(MseSpec),
}

impl FamilySpec {
    pub fn build(&self) -> Result<TaskDistribution> {
        match self {
            FamilySpec::Quadratic(s) => s.build(),
            FamilySpec::Trig(s) => s.build(),
            FamilySpec::FiniteSumMse(s) => s.build(),
        }
    }
}

/// Serialised form of a [`TaskDistribution`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDocument {
    pub family: Family,
    pub case: Case,
    pub d: usize,
    pub seed: Option<u64>,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<FamilySpec>,
    pub weights: Vec<f64>,
    pub tasks: Vec<TaskDocument>,
    pub profile: SmoothnessProfile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskDocument {
    Quadratic {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        noise: NoiseModel,
    },
    Trig {
        c: f64,
        a: Vec<f64>,
        phase: f64,
        lambda: f64,
        noise: NoiseModel,
    },
    FiniteSumMse {
        support: DataDocument,
        query: DataDocument,
    },
}

impl TaskDocument {
    fn into_task(self) -> Result<Task> {
        match self {
            TaskDocument::Quadratic { a, b, noise } => {
                let d = b.len();
                if a.len() != d || a.iter().any(|r| r.len() != d) {
                    return Err(Error::param("A", "must be a d×d array"));
                }
                let m = Matrix::from_fn(d, d, |i, j| a[i][j]);
                Task::quadratic(m, Vector::from_vec(b), noise)
            }
            TaskDocument::Trig {
                c,
                a,
                phase,
                lambda,
                noise,
            } => Task::trig(c, Vector::from_vec(a), phase, lambda, noise),
            TaskDocument::FiniteSumMse { support, query } => {
                Task::finite_sum(support.into_data()?, query.into_data()?)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataDocument {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl From<&LeastSquares> for DataDocument {
    fn from(data: &LeastSquares) -> Self {
        DataDocument {
            x: data.inputs.iter().map(|v| v.iter().copied().collect()).collect(),
            y: data.targets.clone(),
        }
    }
}

impl DataDocument {
    fn into_data(self) -> Result<LeastSquares> {
        LeastSquares::new(self.x.into_iter().map(Vector::from_vec).collect(), self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn trig_at_origin() {
        let t = Task::trig(1.0, v(&[1.0, 0.0]), 0.0, 0.0, NoiseModel::ZERO).unwrap();
        let w = Vector::zeros(2);
        assert_eq!(t.loss(&w).unwrap(), 0.0);
        assert_eq!(t.grad(&w).unwrap(), Vector::zeros(2));
        let h = t.hess(&w).unwrap();
        assert_eq!(h, Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn trig_hessian_at_quarter_turn_is_ridge() {
        let a = v(&[0.5, -1.0, 2.0]);
        let t = Task::trig(1.3, a.clone(), 0.2, 0.7, NoiseModel::ZERO).unwrap();
        let target = std::f64::consts::FRAC_PI_2 - 0.2;
        let w = &a * (target / a.norm_squared());
        let h = t.hess(&w).unwrap();
        let diff = (&h - Matrix::identity(3, 3) * 0.7).abs().max();
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn quadratic_oracles() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = v(&[1.0, -1.0]);
        let t = Task::quadratic(a.clone(), b.clone(), NoiseModel::ZERO).unwrap();
        let w = v(&[0.3, -0.7]);
        assert_eq!(t.grad(&w).unwrap(), &a * &w + &b);
        assert_eq!(t.hess(&w).unwrap(), a);
    }

    #[test]
    fn rejects_bad_dimension() {
        let t = Task::trig(1.0, v(&[1.0, 0.0]), 0.0, 0.0, NoiseModel::ZERO).unwrap();
        assert!(matches!(
            t.grad(&Vector::zeros(3)),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn one_point_mse() {
        let data = LeastSquares::new(vec![v(&[1.0, 0.0])], vec![1.0]).unwrap();
        let t = Task::finite_sum(data.clone(), data).unwrap();
        let w = Vector::zeros(2);
        assert_eq!(t.loss(&w).unwrap(), 1.0);
        assert_eq!(t.grad(&w).unwrap(), v(&[-2.0, 0.0]));
    }

    #[test]
    fn finite_sum_rejects_stochastic_oracles() {
        let data = LeastSquares::new(vec![v(&[1.0])], vec![0.0]).unwrap();
        let t = Task::finite_sum(data.clone(), data).unwrap();
        assert!(matches!(
            t.sample_batch(3, &Stream::root(0)),
            Err(Error::WrongCase { .. })
        ));
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(matches!(
            LeastSquares::new(vec![], vec![]),
            Err(Error::Empty(_))
        ));
        let spec = MseSpec {
            d: 2,
            num_tasks: 2,
            support_size: 0,
            query_size: 3,
            noise_std: 0.1,
            radius: 1.0,
            seed: 0,
            rho: None,
        };
        assert!(spec.build().is_err());
    }

    #[test]
    fn foreign_batches_rejected() {
        let spec = TrigSpec {
            d: 3,
            num_tasks: 2,
            c_max: 1.0,
            a_max: 1.0,
            lambda: 0.1,
            radius: 1.0,
            sigma_g: 0.5,
            sigma_h: 0.2,
            seed: 2,
        };
        let dist = spec.build().unwrap();
        let batch = dist.task(1).sample_batch(4, &Stream::root(1)).unwrap();
        let w = Vector::zeros(3);
        assert!(matches!(
            dist.task(0).stoch_grad(&w, &batch),
            Err(Error::ForeignBatch { task: 0, batch_task: 1 })
        ));
        assert!(dist.task(1).stoch_grad(&w, &batch).is_ok());
    }

    #[test]
    fn noise_calibration_rejects_infeasible_pair() {
        assert!(NoiseModel::calibrated(2, 0.1, 1.0, 5.0).is_err());
        let n = NoiseModel::calibrated(4, 0.5, 0.2, 2.0).unwrap();
        assert!((n.gradient_variance(4, 2.0) - 0.25).abs() < 1e-15);
        assert!((n.hessian_variance(4) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn trig_profile_formulas() {
        let spec = TrigSpec {
            d: 4,
            num_tasks: 5,
            c_max: 1.0,
            a_max: 2.0,
            lambda: 0.1,
            radius: 1.0,
            sigma_g: 0.0,
            sigma_h: 0.0,
            seed: 11,
        };
        let p = *spec.build().unwrap().profile();
        assert!((p.l - 4.1).abs() < 1e-12);
        assert!((p.rho - 8.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_quadratic_family() {
        let spec = QuadraticSpec {
            d: 1,
            num_tasks: 1,
            l_target: 2.0,
            sigma: 0.0,
            sigma_g: 0.0,
            sigma_h: 0.0,
            radius: 1.0,
            seed: 7,
            rho: None,
        };
        let dist = spec.build().unwrap();
        let p = dist.profile();
        assert_eq!(dist.len(), 1);
        assert_eq!((p.rho, p.sigma, p.sigma_g, p.sigma_h), (0.0, 0.0, 0.0, 0.0));
        assert!(p.l <= 2.0 && p.l > 0.0);
    }

    #[test]
    fn zero_hessian_family() {
        let tasks = vec![
            Task::quadratic(Matrix::zeros(2, 2), v(&[1.0, 2.0]), NoiseModel::ZERO).unwrap(),
            Task::quadratic(Matrix::zeros(2, 2), v(&[-1.0, 0.0]), NoiseModel::ZERO).unwrap(),
        ];
        let dist = TaskDistribution::uniform(tasks, 1.0).unwrap();
        assert_eq!(dist.profile().l, 0.0);
        let g0 = dist.task(0).grad(&v(&[0.0, 0.0])).unwrap();
        let g1 = dist.task(0).grad(&v(&[5.0, -3.0])).unwrap();
        assert_eq!(g0, g1);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let t = Task::trig(1.0, v(&[1.0]), 0.0, 0.0, NoiseModel::ZERO).unwrap();
        assert!(TaskDistribution::new(vec![t.clone(), t.clone()], vec![0.5, 0.6], 1.0).is_err());
        assert!(TaskDistribution::new(vec![t.clone(), t], vec![0.5, 0.5], 1.0).is_ok());
    }

    #[test]
    fn tighter_profile_rejected() {
        let dist = TrigSpec {
            d: 2,
            num_tasks: 3,
            c_max: 1.0,
            a_max: 1.0,
            lambda: 0.0,
            radius: 1.0,
            sigma_g: 0.0,
            sigma_h: 0.0,
            seed: 3,
        }
        .build()
        .unwrap();
        let mut p = *dist.profile();
        p.l *= 0.5;
        assert!(dist.with_profile(p).is_err());
    }

    #[test]
    fn identical_sets_have_zero_gap() {
        let xs = vec![v(&[1.0, 2.0]), v(&[0.5, -1.0]), v(&[0.0, 3.0])];
        let ys = vec![1.0, 0.0, -2.0];
        let data = LeastSquares::new(xs, ys).unwrap();
        let t = Task::finite_sum(data.clone(), data).unwrap();
        let dist = TaskDistribution::uniform(vec![t], 3.0).unwrap();
        assert_eq!(dist.profile().b, 0.0);
        assert_eq!(dist.profile().b_tilde, 0.0);
    }
}

//! Exact meta-gradients and their stochastic estimators.
//!
//! For a path `w̃₀ … w̃_N` the meta-gradient is
//! `(I − αH₀)(I − αH₁)…(I − αH_{N−1})·g` with `Hⱼ` the Hessian at `w̃ⱼ`
//! and `g` the outer gradient at `w̃_N`. The product is never formed:
//! factors are applied to `g` from `j = N−1` down to `j = 0`, so the
//! `j = 0` factor ends up leftmost as the chain rule dictates.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner::{inner_gd, inner_gd_finite, inner_sgd, InnerPath};
use crate::linalg::{Matrix, Vector};
use crate::rng::{Role, Stream};
use crate::task::{Case, Task, TaskDistribution};

/// Per-sample oracle evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCount {
    pub grad_evals: u64,
    pub hess_evals: u64,
}

impl Add for WorkCount {
    type Output = WorkCount;
    fn add(self, o: WorkCount) -> WorkCount {
        WorkCount {
            grad_evals: self.grad_evals + o.grad_evals,
            hess_evals: self.hess_evals + o.hess_evals,
        }
    }
}

impl AddAssign for WorkCount {
    fn add_assign(&mut self, o: WorkCount) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSizes {
    pub s: usize,
    pub d: usize,
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct MetaGradEstimate {
    pub value: Vector,
    pub task_index: usize,
    /// `None` for the finite-sum estimator.
    pub batch_sizes: Option<BatchSizes>,
    pub path: InnerPath,
    pub work: WorkCount,
}

/// Computes `(I − αH₀)…(I − αH_{N−1})·g` by successive matrix–vector
/// products, applying `H_{N−1}` first.
pub fn apply_factors(hessians: &[Matrix], alpha: f64, g: Vector) -> Vector {
    hessians.iter().rev().fold(g, |v, h| {
        let hv = h * &v;
        v - hv * alpha
    })
}

fn finite(v: Vector, step: usize) -> Result<Vector> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Diverged { step })
    }
}

/// Gradient of `w ↦ l_query(w̃_N(w))` where `w̃` is the exact inner path.
pub fn exact_task_meta_grad(task: &Task, w: &Vector, alpha: f64, n: usize) -> Result<Vector> {
    let path = inner_gd(task, w, alpha, n)?;
    exact_meta_grad_on_path(task, &path)
}

/// Meta-gradient along a precomputed path, using exact Hessians.
pub fn exact_meta_grad_on_path(task: &Task, path: &InnerPath) -> Result<Vector> {
    let n = path.steps();
    let hessians = path.iterates[..n]
        .iter()
        .map(|x| task.hess(x))
        .collect::<Result<Vec<_>>>()?;
    let g = task.query_grad(path.last())?;
    finite(apply_factors(&hessians, path.alpha, g), n)
}

/// `l_query(w̃_N(w))`.
pub fn exact_task_meta_loss(task: &Task, w: &Vector, alpha: f64, n: usize) -> Result<f64> {
    let path = inner_gd(task, w, alpha, n)?;
    task.query_loss(path.last())
}

/// `∇𝓛(w) = Σᵢ pᵢ ∇𝓛ᵢ(w)` over the finite family.
pub fn exact_meta_grad(dist: &TaskDistribution, w: &Vector, alpha: f64, n: usize) -> Result<Vector> {
    let mut acc = Vector::zeros(dist.dim());
    for (task, p) in dist.tasks().iter().zip(dist.weights()) {
        acc.axpy(*p, &exact_task_meta_grad(task, w, alpha, n)?, 1.0);
    }
    Ok(acc)
}

/// Per-task exact meta-gradients, in task order.
pub fn exact_task_meta_grads(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
) -> Result<Vec<Vector>> {
    dist.tasks()
        .iter()
        .map(|t| exact_task_meta_grad(t, w, alpha, n))
        .collect()
}

/// `𝓛(w) = Σᵢ pᵢ l_query,i(w̃_N(w))`.
pub fn exact_meta_loss(dist: &TaskDistribution, w: &Vector, alpha: f64, n: usize) -> Result<f64> {
    let mut acc = 0.0;
    for (task, p) in dist.tasks().iter().zip(dist.weights()) {
        acc += p * exact_task_meta_loss(task, w, alpha, n)?;
    }
    Ok(acc)
}

/// Resampling estimator with Hessian batches of size `d` and outer batch
/// of size `t` evaluated along the given iterates.
///
/// Hessian batch `j` comes from `stream.step(j).role(Role::Hessian)` and
/// the outer batch from `stream.role(Role::Query)`. Evaluating the same
/// stream along two different paths yields common random numbers.
pub fn resample_estimate_on_path(
    task: &Task,
    iterates: &[Vector],
    alpha: f64,
    d: usize,
    t: usize,
    stream: &Stream,
) -> Result<Vector> {
    let n = iterates.len() - 1;
    let mut hessians = Vec::with_capacity(n);
    for (j, x) in iterates[..n].iter().enumerate() {
        let batch = task.sample_batch(d, &stream.step(j).role(Role::Hessian))?;
        hessians.push(task.stoch_hess(x, &batch)?);
    }
    let batch = task.sample_batch(t, &stream.role(Role::Query))?;
    let g = task.stoch_grad(&iterates[n], &batch)?;
    finite(apply_factors(&hessians, alpha, g), n)
}

/// Stochastic meta-gradient of a resampling task.
#[allow(clippy::too_many_arguments)]
pub fn stoch_meta_grad_resample(
    task: &Task,
    w: &Vector,
    alpha: f64,
    n: usize,
    s: usize,
    d: usize,
    t: usize,
    stream: &Stream,
) -> Result<MetaGradEstimate> {
    if task.case() != Case::Resampling {
        return Err(Error::WrongCase {
            op: "stoch_meta_grad_resample",
            case: "finite-sum",
        });
    }
    if d == 0 || t == 0 {
        return Err(Error::param("D, T", "batch sizes must be at least 1"));
    }
    let path = inner_sgd(task, w, alpha, n, s, stream)?;
    let value = resample_estimate_on_path(task, &path.iterates, alpha, d, t, stream)?;
    let n64 = n as u64;
    Ok(MetaGradEstimate {
        value,
        task_index: task.index(),
        batch_sizes: Some(BatchSizes { s, d, t }),
        path,
        work: WorkCount {
            grad_evals: n64 * s as u64 + t as u64,
            hess_evals: n64 * d as u64,
        },
    })
}

/// Finite-sum estimator: support-loss path and Hessians, query gradient.
pub fn meta_grad_finite_sum(
    task: &Task,
    w: &Vector,
    alpha: f64,
    n: usize,
) -> Result<MetaGradEstimate> {
    let path = inner_gd_finite(task, w, alpha, n)?;
    let value = exact_meta_grad_on_path(task, &path)?;
    let (support, query) = task.data().expect("finite-sum task has data");
    let n64 = n as u64;
    let (s, t) = (support.len() as u64, query.len() as u64);
    Ok(MetaGradEstimate {
        value,
        task_index: task.index(),
        batch_sizes: None,
        path,
        work: WorkCount {
            grad_evals: n64 * s + t,
            hess_evals: n64 * s,
        },
    })
}

//! Monte-Carlo and deterministic checks of the intermediate inequalities.
//!
//! Stochastic checks pass when `mean + 3·SE ≤ bound` (or `mean − 3·SE ≥
//! bound` for lower bounds). Deterministic checks are evaluated per
//! instance and pass when no instance violates its inequality beyond
//! floating-point slack. Trials run in parallel on per-trial streams and
//! are reduced in trial order, so every report is reproducible.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inner::{inner_gd, inner_sgd};
use crate::linalg::{op_norm, uniform_in_ball, Matrix, Vector};
use crate::meta::{
    apply_factors, exact_meta_grad, exact_meta_loss, exact_task_meta_grad, exact_task_meta_loss,
    meta_grad_finite_sum, resample_estimate_on_path,
};
use crate::rng::{Role, Stream};
use crate::stats::{slope, Moments, VectorMoments};
use crate::task::{Case, Task, TaskDistribution};
use crate::theory::{
    check_alpha, default_alpha, finite_sum_constants, hat_l_finite, hat_l_resample,
    inner_stepsize_bound, lipschitz_at, path_moment_bounds, resampling_constants,
    FiniteSumConstants, ResamplingConstants, SecondMomentFactor,
};

/// Number of standard errors allowed in stochastic comparisons.
pub const SE_MULTIPLIER: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `empirical ≤ bound`.
    Upper,
    /// `empirical ≥ bound`.
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub relation: Relation,
    pub deterministic: bool,
    /// Monte-Carlo trials or checked instances.
    pub trials: usize,
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// `empirical/bound` for upper bounds, `bound/empirical` for lower
    /// bounds; `0` when both sides vanish.
    pub slack_ratio: f64,
    pub violations: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Floating-point slack for exact inequalities.
fn holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + 1e-10 * rhs.abs() + 1e-13
}

impl BoundReport {
    /// Stochastic upper bound, `mean + 3·SE ≤ bound`.
    pub fn upper(name: impl Into<String>, m: &Moments, bound: f64) -> Self {
        Self::stochastic_upper(name, m.count() as usize, m.mean(), m.std_err(), bound)
    }

    pub fn stochastic_upper(
        name: impl Into<String>,
        trials: usize,
        mean: f64,
        std_err: f64,
        bound: f64,
    ) -> Self {
        let satisfied = mean + SE_MULTIPLIER * std_err <= bound;
        BoundReport {
            name: name.into(),
            relation: Relation::Upper,
            deterministic: false,
            trials,
            empirical: mean,
            std_err,
            bound,
            satisfied,
            slack_ratio: ratio(mean, bound),
            violations: usize::from(!satisfied),
        }
    }

    /// Stochastic lower bound, `mean − 3·SE ≥ bound`.
    pub fn lower(name: impl Into<String>, m: &Moments, bound: f64) -> Self {
        let (mean, se) = (m.mean(), m.std_err());
        let satisfied = mean - SE_MULTIPLIER * se >= bound;
        BoundReport {
            name: name.into(),
            relation: Relation::Lower,
            deterministic: false,
            trials: m.count() as usize,
            empirical: mean,
            std_err: se,
            bound,
            satisfied,
            slack_ratio: ratio(bound, mean),
            violations: usize::from(!satisfied),
        }
    }

    /// Deterministic report over many `(lhs, rhs)` instances of
    /// `lhs ≤ rhs`; the instance with the largest ratio is shown.
    pub fn instances(name: impl Into<String>, pairs: &[(f64, f64)]) -> Self {
        let mut violations = 0;
        let mut worst = (0.0, 0.0);
        let mut worst_ratio = f64::NEG_INFINITY;
        for &(lhs, rhs) in pairs {
            let ok = holds(lhs, rhs);
            if !ok {
                violations += 1;
            }
            let r = if holds(lhs, rhs) && lhs <= 0.0 {
                0.0
            } else {
                ratio(lhs, rhs)
            };
            let r = if ok { r.min(1.0) } else { r.max(1.0 + f64::EPSILON) };
            if r > worst_ratio {
                worst_ratio = r;
                worst = (lhs, rhs);
            }
        }
        BoundReport {
            name: name.into(),
            relation: Relation::Upper,
            deterministic: true,
            trials: pairs.len(),
            empirical: worst.0,
            std_err: 0.0,
            bound: worst.1,
            satisfied: violations == 0 && !pairs.is_empty(),
            slack_ratio: worst_ratio.max(0.0),
            violations,
        }
    }

    /// Single exact comparison `value ≤ bound`.
    pub fn exact(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::instances(name, &[(value, bound)])
    }
}

/// Writes one CSV row per report.
pub fn write_reports_csv<W: Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "name",
        "relation",
        "deterministic",
        "trials",
        "empirical",
        "std_err",
        "bound",
        "satisfied",
        "slack_ratio",
        "violations",
    ])?;
    for r in reports {
        wtr.write_record([
            r.name.clone(),
            match r.relation {
                Relation::Upper => "upper".into(),
                Relation::Lower => "lower".into(),
            },
            r.deterministic.to_string(),
            r.trials.to_string(),
            r.empirical.to_string(),
            r.std_err.to_string(),
            r.bound.to_string(),
            r.satisfied.to_string(),
            r.slack_ratio.to_string(),
            r.violations.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<report csv>", e))?;
    Ok(())
}

fn par_trials<T: Send>(
    trials: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..trials).into_par_iter().map(f).collect()
}

/// Per-task trial counts proportional to the weights, at least two each
/// for tasks with positive weight.
fn stratify(weights: &[f64], trials: usize) -> Vec<usize> {
    weights
        .iter()
        .map(|&p| {
            if p > 0.0 {
                ((trials as f64 * p).round() as usize).max(2)
            } else {
                0
            }
        })
        .collect()
}

fn require_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    Ok(())
}

fn require_case(dist: &TaskDistribution, case: Case, op: &'static str) -> Result<()> {
    if dist.case() != case {
        return Err(Error::WrongCase {
            op,
            case: dist.case().name(),
        });
    }
    Ok(())
}

/// Compares the exact meta-gradient with central differences of
/// `w ↦ l_query(w̃_N(w))`. The error is `‖fd − g‖_∞/‖g‖_∞`.
pub fn check_meta_grad_fd(
    task: &Task,
    w: &Vector,
    alpha: f64,
    n: usize,
    h: f64,
    tol: f64,
) -> Result<BoundReport> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::param("h", "must be positive"));
    }
    let g = exact_task_meta_grad(task, w, alpha, n)?;
    let mut fd = Vector::zeros(w.len());
    for i in 0..w.len() {
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus[i] += h;
        minus[i] -= h;
        fd[i] = (exact_task_meta_loss(task, &plus, alpha, n)?
            - exact_task_meta_loss(task, &minus, alpha, n)?)
            / (2.0 * h);
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    let err = (fd - &g).amax() / scale;
    Ok(BoundReport::exact("meta_grad_fd", err, tol))
}

/// Path-moment check for one step count `j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMoments {
    pub j: usize,
    pub first: BoundReport,
    pub second: BoundReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prop2Report {
    /// Worst step for the first moment.
    pub first: BoundReport,
    /// Worst step for the second moment.
    pub second: BoundReport,
    pub per_step: Vec<StepMoments>,
}

fn worst(name: &str, reports: impl IntoIterator<Item = BoundReport>) -> BoundReport {
    let mut all: Vec<BoundReport> = reports.into_iter().collect();
    let violations = all.iter().filter(|r| !r.satisfied).count();
    let key = |r: &BoundReport| ratio(r.empirical + SE_MULTIPLIER * r.std_err, r.bound);
    let idx = (0..all.len())
        .max_by(|&a, &b| key(&all[a]).total_cmp(&key(&all[b])))
        .expect("at least one report");
    let mut r = all.swap_remove(idx);
    r.name = name.to_string();
    r.satisfied = violations == 0;
    r.violations = violations;
    r
}

/// Moments of `‖w_j − w̃_j‖` between the SGD path with batch size `s` and
/// the exact path, for every `j ≤ N`, against the path-moment bounds.
/// Each trial draws its task by the distribution's weights.
#[allow(clippy::too_many_arguments)]
pub fn mc_check_prop2(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
    s: usize,
    trials: usize,
    stream: &Stream,
    factor: SecondMomentFactor,
) -> Result<Prop2Report> {
    require_case(dist, Case::Resampling, "mc_check_prop2")?;
    require_trials(trials)?;
    let exact: Vec<_> = dist
        .tasks()
        .iter()
        .map(|t| inner_gd(t, w, alpha, n))
        .collect::<Result<_>>()?;
    let samples = par_trials(trials, |t| {
        let ts = stream.trial(t);
        let i = dist.sample_task_indices(1, &ts.role(Role::TaskDraw))[0];
        let sgd = inner_sgd(dist.task(i), w, alpha, n, s, &ts)?;
        Ok(sgd
            .iterates
            .iter()
            .zip(&exact[i].iterates)
            .map(|(a, b)| (a - b).norm())
            .collect::<Vec<f64>>())
    })?;
    let mut first = vec![Moments::default(); n + 1];
    let mut second = vec![Moments::default(); n + 1];
    for dists in &samples {
        for (j, &e) in dists.iter().enumerate() {
            first[j].push(e);
            second[j].push(e * e);
        }
    }
    let profile = dist.profile();
    let per_step: Vec<StepMoments> = (0..=n)
        .map(|j| {
            let (b1, b2) = path_moment_bounds(profile, alpha, j, s, factor);
            StepMoments {
                j,
                first: BoundReport::upper(format!("prop2_first_j{j}"), &first[j], b1),
                second: BoundReport::upper(format!("prop2_second_j{j}"), &second[j], b2),
            }
        })
        .collect();
    Ok(Prop2Report {
        first: worst("prop2_first", per_step.iter().map(|s| s.first.clone())),
        second: worst("prop2_second", per_step.iter().map(|s| s.second.clone())),
        per_step,
    })
}

/// Log-log slope of the final-step first moment against the batch size.
pub fn prop2_batch_slope(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
    batch_sizes: &[usize],
    trials: usize,
    stream: &Stream,
) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (m, &s) in batch_sizes.iter().enumerate() {
        let r = mc_check_prop2(
            dist,
            w,
            alpha,
            n,
            s,
            trials,
            &stream.child(m as u64),
            SecondMomentFactor::Derived,
        )?;
        xs.push((s as f64).ln());
        ys.push(r.per_step[n].first.empirical.ln());
    }
    Ok(slope(&xs, &ys))
}

fn resampling_for_check(
    dist: &TaskDistribution,
    alpha: f64,
    n: usize,
    s: usize,
    d: usize,
    t: usize,
) -> Result<ResamplingConstants> {
    resampling_constants(dist.profile(), alpha, n, 1.0, s, d, t, 1)
}

/// Bias of the resampling estimator, `‖E[Ĝ] − ∇𝓛(w)‖`.
///
/// Each trial evaluates the estimator on the SGD path and, with the same
/// Hessian and outer batches, on the exact path. The second term has mean
/// `∇𝓛ᵢ(w)`, so the difference isolates the bias at a fraction of the
/// variance. Tasks are stratified by weight. The standard error is the
/// root of the summed coordinate variances of the mean.
#[allow(clippy::too_many_arguments)]
pub fn mc_check_prop3(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
    s: usize,
    d: usize,
    t: usize,
    trials: usize,
    stream: &Stream,
) -> Result<BoundReport> {
    require_case(dist, Case::Resampling, "mc_check_prop3")?;
    require_trials(trials)?;
    let c = resampling_for_check(dist, alpha, n, s, d, t)?;
    let counts = stratify(dist.weights(), trials);
    let mut bias = Vector::zeros(dist.dim());
    let mut var = 0.0;
    let mut total = 0;
    for (i, (&count, &p)) in counts.iter().zip(dist.weights()).enumerate() {
        if count == 0 {
            continue;
        }
        let task = dist.task(i);
        let exact = inner_gd(task, w, alpha, n)?;
        let ts = stream.slot(i);
        let diffs = par_trials(count, |k| {
            let st = ts.trial(k);
            let sgd = inner_sgd(task, w, alpha, n, s, &st)?;
            let noisy = resample_estimate_on_path(task, &sgd.iterates, alpha, d, t, &st)?;
            let clean = resample_estimate_on_path(task, &exact.iterates, alpha, d, t, &st)?;
            Ok(noisy - clean)
        })?;
        let mut m = VectorMoments::new(dist.dim());
        for x in &diffs {
            m.push(x);
        }
        bias.axpy(p, m.mean(), 1.0);
        var += p * p * m.mean_variance().sum();
        total += count;
    }
    let grad_norm = exact_meta_grad(dist, w, alpha, n)?.norm();
    Ok(BoundReport::stochastic_upper(
        "prop3_bias",
        total,
        bias.norm(),
        var.sqrt(),
        c.bias_bound(grad_norm),
    ))
}

/// Second moment `E‖Ĝ‖²` of the resampling estimator, including the task
/// draw (stratified by weight).
#[allow(clippy::too_many_arguments)]
pub fn mc_check_prop4(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
    s: usize,
    d: usize,
    t: usize,
    trials: usize,
    stream: &Stream,
) -> Result<BoundReport> {
    require_case(dist, Case::Resampling, "mc_check_prop4")?;
    require_trials(trials)?;
    let c = resampling_for_check(dist, alpha, n, s, d, t)?;
    let counts = stratify(dist.weights(), trials);
    let (mut mean, mut var, mut total) = (0.0, 0.0, 0);
    for (i, (&count, &p)) in counts.iter().zip(dist.weights()).enumerate() {
        if count == 0 {
            continue;
        }
        let task = dist.task(i);
        let ts = stream.slot(i);
        let sq = par_trials(count, |k| {
            let st = ts.trial(k);
            let sgd = inner_sgd(task, w, alpha, n, s, &st)?;
            let g = resample_estimate_on_path(task, &sgd.iterates, alpha, d, t, &st)?;
            Ok(g.norm_squared())
        })?;
        let m = Moments::from_slice(&sq);
        mean += p * m.mean();
        var += p * p * m.std_err().powi(2);
        total += count;
    }
    let grad_norm = exact_meta_grad(dist, w, alpha, n)?.norm();
    Ok(BoundReport::stochastic_upper(
        "prop4_second_moment",
        total,
        mean,
        var.sqrt(),
        c.second_moment_bound(grad_norm),
    ))
}

/// Part of `E‖Ĝ‖²` contributed by the outer batch of size `t`:
/// `E‖P(ĝ_T − ∇l(w_N))‖²` where `P` is the sampled Hessian product.
/// Returns the mean and its standard error.
#[allow(clippy::too_many_arguments)]
pub fn prop4_outer_batch_gap(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
    s: usize,
    d: usize,
    t: usize,
    trials: usize,
    stream: &Stream,
) -> Result<(f64, f64)> {
    require_case(dist, Case::Resampling, "prop4_outer_batch_gap")?;
    require_trials(trials)?;
    let counts = stratify(dist.weights(), trials);
    let (mut mean, mut var) = (0.0, 0.0);
    for (i, (&count, &p)) in counts.iter().zip(dist.weights()).enumerate() {
        if count == 0 {
            continue;
        }
        let task = dist.task(i);
        let ts = stream.slot(i);
        let gaps = par_trials(count, |k| {
            let st = ts.trial(k);
            let sgd = inner_sgd(task, w, alpha, n, s, &st)?;
            let noisy = resample_estimate_on_path(task, &sgd.iterates, alpha, d, t, &st)?;
            let mut hessians = Vec::with_capacity(n);
            for (j, x) in sgd.iterates[..n].iter().enumerate() {
                let batch = task.sample_batch(d, &st.step(j).role(Role::Hessian))?;
                hessians.push(task.stoch_hess(x, &batch)?);
            }
            let clean = apply_factors(&hessians, alpha, task.grad(sgd.last())?);
            Ok((noisy - clean).norm_squared())
        })?;
        let m = Moments::from_slice(&gaps);
        mean += p * m.mean();
        var += p * p * m.std_err().powi(2);
    }
    Ok((mean, var.sqrt()))
}

/// Exact finite-family check of `E_i‖Ĝᵢ‖² ≤ A_squ1‖∇𝓛‖² + A_squ2`.
pub fn mc_check_prop6(dist: &TaskDistribution, w: &Vector, alpha: f64, n: usize) -> Result<BoundReport> {
    require_case(dist, Case::FiniteSum, "mc_check_prop6")?;
    let c = finite_sum_constants(dist.profile(), alpha, n, 1.0, 1)?;
    let mut second = 0.0;
    let mut mean = Vector::zeros(dist.dim());
    for (task, &p) in dist.tasks().iter().zip(dist.weights()) {
        let g = meta_grad_finite_sum(task, w, alpha, n)?.value;
        second += p * g.norm_squared();
        mean.axpy(p, &g, 1.0);
    }
    let mut r = BoundReport::exact("prop6_second_moment", second, c.second_moment_bound(mean.norm()));
    r.trials = dist.len();
    Ok(r)
}

fn ball_point(dist: &TaskDistribution, stream: &Stream) -> Vector {
    uniform_in_ball(dist.dim(), dist.radius(), &mut stream.rng())
}

/// Pairs `(w, u)` in the ball: even indices are independent draws, odd
/// indices are nearby perturbations of `w`.
fn sample_pair(dist: &TaskDistribution, stream: &Stream, index: usize) -> (Vector, Vector) {
    let w = ball_point(dist, &stream.role(Role::Init));
    let u = if index.is_multiple_of(2) {
        ball_point(dist, &stream.role(Role::Support))
    } else {
        let scale = 1e-2 * dist.radius();
        let step = uniform_in_ball(dist.dim(), scale, &mut stream.role(Role::Support).rng());
        let u = &w + step;
        let norm = u.norm();
        if norm > dist.radius() {
            u * (dist.radius() / norm)
        } else {
            u
        }
    };
    (w, u)
}

/// Smoothness of the meta-objective,
/// `‖∇𝓛(w) − ∇𝓛(u)‖ ≤ L_w‖w − u‖`, on `pairs` sampled pairs.
pub fn check_smoothness(
    dist: &TaskDistribution,
    alpha: f64,
    n: usize,
    pairs: usize,
    stream: &Stream,
) -> Result<BoundReport> {
    require_trials(pairs)?;
    let model = crate::theory::LipschitzModel::new(dist.case(), dist.profile(), alpha, n);
    let rows = par_trials(pairs, |k| {
        let (w, u) = sample_pair(dist, &stream.trial(k), k);
        let lhs = (exact_meta_grad(dist, &w, alpha, n)? - exact_meta_grad(dist, &u, alpha, n)?).norm();
        let rhs = lipschitz_at(dist, &w, &model)? * (&w - &u).norm();
        Ok((lhs, rhs))
    })?;
    let name = match dist.case() {
        Case::Resampling => "prop1_smoothness",
        Case::FiniteSum => "prop5_smoothness",
    };
    Ok(BoundReport::instances(name, &rows))
}

/// `(1 + x)^k − 1` without cancellation.
fn growth(al: f64, k: usize) -> f64 {
    crate::theory::pow1m(al, k as f64)
}

/// Deterministic path lemmas on `instances` sampled `(task, w, u, j)`
/// tuples, plus the averaged gradient lemma on sampled `w`.
pub fn check_lemma_suite(
    dist: &TaskDistribution,
    alpha: f64,
    n: usize,
    instances: usize,
    stream: &Stream,
) -> Result<Vec<BoundReport>> {
    require_trials(instances)?;
    let profile = dist.profile();
    let l = profile.l;
    let al = alpha * l;
    let q = 1.0 + al;
    let finite = dist.case() == Case::FiniteSum;
    let rows = par_trials(instances, |k| {
        let ts = stream.trial(k);
        let i = dist.sample_task_indices(1, &ts.role(Role::TaskDraw))[0];
        let task = dist.task(i);
        let (w, u) = sample_pair(dist, &ts, k);
        let j = {
            use rand::Rng;
            ts.role(Role::Query).rng().random_range(0..=n)
        };
        let pw = inner_gd(task, &w, alpha, n)?;
        let pu = inner_gd(task, &u, alpha, n)?;
        let qj = q.powi(j as i32);
        let l1 = (
            (&pw.iterates[j] - &pu.iterates[j]).norm(),
            qj * (&w - &u).norm(),
        );
        let l2 = (task.grad(&pw.iterates[j])?.norm(), qj * task.grad(&w)?.norm());
        // Product of the first m+1 path factors, m = j − 1 (empty when j = 0).
        let d = dist.dim();
        let mut prod = Matrix::identity(d, d);
        for x in &pw.iterates[..j] {
            prod *= Matrix::identity(d, d) - task.hess(x)? * alpha;
        }
        let l3 = (op_norm(&(Matrix::identity(d, d) - prod)), growth(al, j));
        let meta = exact_task_meta_grad(task, &w, alpha, n)?;
        let gap = if finite {
            let gt = task.query_grad(&w)?;
            let gs = task.grad(&w)?;
            (
                (&gt - &meta).norm(),
                growth(al, n) * gt.norm() + q.powi(n as i32) * growth(al, n) * gs.norm(),
            )
        } else {
            let g = task.grad(&w)?;
            ((&g - &meta).norm(), growth(al, 2 * n) * g.norm())
        };
        Ok([l1, l2, l3, gap])
    })?;
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let names: [&str; 4] = if finite {
        ["lemma1_path_distance", "lemma6_support_gradient", "lemma3_factor_product", "lemma7_meta_gap"]
    } else {
        ["lemma1_path_distance", "lemma2_gradient_growth", "lemma3_factor_product", "lemma4_meta_gap"]
    };
    let mut out: Vec<BoundReport> = (0..4).map(|c| BoundReport::instances(names[c], &column(c))).collect();

    // Averaged lemma: bound the mean (query) gradient by the meta-gradient.
    let c_gap = growth(al, 2 * n);
    if c_gap < 1.0 {
        let points = instances.clamp(1, 200);
        let avg = par_trials(points, |k| {
            let w = ball_point(dist, &stream.child(1).trial(k));
            let meta = exact_meta_grad(dist, &w, alpha, n)?.norm();
            let mut mean = Vector::zeros(dist.dim());
            for (task, &p) in dist.tasks().iter().zip(dist.weights()) {
                mean.axpy(p, &task.query_grad(&w)?, 1.0);
            }
            let rhs = if finite {
                let c1 = 2.0 - q.powi(2 * n as i32);
                let c2 = c_gap * profile.sigma + q.powi(n as i32) * growth(al, n) * profile.b;
                meta / c1 + c2 / c1
            } else {
                meta / (1.0 - c_gap) + c_gap * profile.sigma / (1.0 - c_gap)
            };
            Ok((mean.norm(), rhs))
        })?;
        let name = if finite { "lemma8_mean_gradient" } else { "lemma5_mean_gradient" };
        out.push(BoundReport::instances(name, &avg));
    }
    Ok(out)
}

/// Moments of the meta stepsize under the batch thresholds of the
/// smoothness estimate. Resampling reports `Eβ` and `Eβ²`; finite-sum
/// reports `E(1/L̂)` and `E(1/L̂²)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_check_stepsize_moments(
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    n: usize,
    c_beta: f64,
    bprime: usize,
    dl: usize,
    trials: usize,
    stream: &Stream,
) -> Result<Vec<BoundReport>> {
    require_trials(trials)?;
    let profile = dist.profile();
    match dist.case() {
        Case::Resampling => {
            let c = resampling_constants(profile, alpha, n, c_beta, 1, 1, 1, 1)?;
            if bprime < c.plan.bprime_min || dl < c.plan.dl_min {
                return Err(Error::Threshold(format!(
                    "need B' >= {} and D_L >= {}, got B' = {bprime}, D_L = {dl}",
                    c.plan.bprime_min, c.plan.dl_min
                )));
            }
            let model = c.lipschitz_model();
            let lw = lipschitz_at(dist, w, &model)?;
            let betas = par_trials(trials, |k| {
                let est = hat_l_resample(dist, w, bprime, dl, &model, &stream.trial(k))?;
                Ok(1.0 / (c_beta * est.value))
            })?;
            let first = Moments::from_slice(&betas);
            let sq: Vec<f64> = betas.iter().map(|b| b * b).collect();
            let second = Moments::from_slice(&sq);
            Ok(vec![
                BoundReport::lower("stepsize_mean", &first, 4.0 / (5.0 * c_beta * lw)),
                BoundReport::upper("stepsize_second_moment", &second, 4.0 / (c_beta * c_beta * lw * lw)),
            ])
        }
        Case::FiniteSum => {
            let c: FiniteSumConstants = finite_sum_constants(profile, alpha, n, c_beta, 1)?;
            if bprime < c.plan.bprime_min {
                return Err(Error::Threshold(format!(
                    "need B' >= {}, got B' = {bprime}",
                    c.plan.bprime_min
                )));
            }
            let model = c.lipschitz_model();
            let lw = lipschitz_at(dist, w, &model)?;
            let inv = par_trials(trials, |k| {
                let est = hat_l_finite(dist, w, bprime, &model, &stream.trial(k))?;
                Ok(1.0 / est.value)
            })?;
            let first = Moments::from_slice(&inv);
            let sq: Vec<f64> = inv.iter().map(|x| x * x).collect();
            let second = Moments::from_slice(&sq);
            Ok(vec![
                BoundReport::lower("inverse_hat_l_mean", &first, 1.0 / lw),
                BoundReport::upper("inverse_hat_l_second_moment", &second, 2.0 / (lw * lw)),
            ])
        }
    }
}

fn one() -> usize {
    1
}

fn default_path_trials() -> usize {
    10_000
}

fn default_mc_trials() -> usize {
    100_000
}

fn default_instances() -> usize {
    1000
}

fn default_fd_points() -> usize {
    20
}

/// Settings of the full verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "one")]
    pub s: usize,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default = "one")]
    pub t: usize,
    pub c_beta: f64,
    /// Smoothness-estimate batches; the thresholds are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bprime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dl: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_path_trials")]
    pub path_trials: usize,
    #[serde(default = "default_mc_trials")]
    pub bias_trials: usize,
    #[serde(default = "default_mc_trials")]
    pub moment_trials: usize,
    #[serde(default = "default_mc_trials")]
    pub stepsize_trials: usize,
    #[serde(default = "default_instances")]
    pub lemma_instances: usize,
    #[serde(default = "default_instances")]
    pub smoothness_pairs: usize,
    #[serde(default = "default_fd_points")]
    pub fd_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub alpha: f64,
    pub reports: Vec<BoundReport>,
    pub notes: Vec<String>,
}

impl SuiteOutcome {
    pub fn all_satisfied(&self) -> bool {
        self.reports.iter().all(|r| r.satisfied)
    }
}

/// Runs every check that applies to the distribution's case at a
/// reference point drawn in the ball of radius R/2.
pub fn run_suite(dist: &TaskDistribution, cfg: &VerifyConfig) -> Result<SuiteOutcome> {
    let l = dist.profile().l;
    let n = cfg.n;
    let alpha = match cfg.alpha {
        Some(a) => a,
        None if n == 0 || l == 0.0 => 0.0,
        None => default_alpha(n, l)?,
    };
    if n > 0 && l > 0.0 {
        check_alpha(alpha, n, l)?;
    }
    let root = Stream::root(cfg.seed);
    let w = uniform_in_ball(dist.dim(), 0.5 * dist.radius(), &mut root.role(Role::Init).rng());
    let mut reports = Vec::new();
    let mut notes = Vec::new();

    let mut fd_pairs = Vec::new();
    for k in 0..cfg.fd_points {
        let ts = root.child(10).trial(k);
        let i = dist.sample_task_indices(1, &ts.role(Role::TaskDraw))[0];
        let x = ball_point(dist, &ts.role(Role::Init));
        let h = 1e-5 * (1.0 + x.norm());
        let r = check_meta_grad_fd(dist.task(i), &x, alpha, n, h, 1e-5)?;
        fd_pairs.push((r.empirical, r.bound));
    }
    if !fd_pairs.is_empty() {
        reports.push(BoundReport::instances("meta_grad_fd", &fd_pairs));
    }
    reports.extend(check_lemma_suite(dist, alpha, n, cfg.lemma_instances, &root.child(11))?);
    reports.push(check_smoothness(dist, alpha, n, cfg.smoothness_pairs, &root.child(12))?);

    match dist.case() {
        Case::Resampling => {
            let half = if n > 0 && l > 0.0 {
                0.5 * inner_stepsize_bound(n, l)?
            } else {
                f64::INFINITY
            };
            let p2 = mc_check_prop2(
                dist,
                &w,
                alpha,
                n,
                cfg.s,
                cfg.path_trials,
                &root.child(13),
                SecondMomentFactor::Derived,
            )?;
            reports.push(p2.first);
            reports.push(p2.second);
            if alpha <= half {
                reports.push(mc_check_prop3(
                    dist, &w, alpha, n, cfg.s, cfg.d, cfg.t, cfg.bias_trials, &root.child(14),
                )?);
                reports.push(mc_check_prop4(
                    dist, &w, alpha, n, cfg.s, cfg.d, cfg.t, cfg.moment_trials, &root.child(15),
                )?);
            } else {
                notes.push(format!(
                    "bias and second-moment checks skipped: alpha = {alpha} exceeds half the stepsize bound ({half})"
                ));
            }
            let c = resampling_constants(dist.profile(), alpha, n, cfg.c_beta, 1, 1, 1, 1)?;
            let bprime = cfg.bprime.unwrap_or(c.plan.bprime_min);
            let dl = cfg.dl.unwrap_or(c.plan.dl_min);
            reports.extend(mc_check_stepsize_moments(
                dist, &w, alpha, n, cfg.c_beta, bprime, dl, cfg.stepsize_trials, &root.child(16),
            )?);
        }
        Case::FiniteSum => {
            reports.push(mc_check_prop6(dist, &w, alpha, n)?);
            let c = finite_sum_constants(dist.profile(), alpha, n, cfg.c_beta, 1)?;
            let bprime = cfg.bprime.unwrap_or(c.plan.bprime_min);
            reports.extend(mc_check_stepsize_moments(
                dist, &w, alpha, n, cfg.c_beta, bprime, 1, cfg.stepsize_trials, &root.child(16),
            )?);
        }
    }
    let loss = exact_meta_loss(dist, &w, alpha, n)?;
    if !loss.is_finite() {
        notes.push("meta-objective is not finite at the reference point".into());
    }
    Ok(SuiteOutcome {
        alpha,
        reports,
        notes,
    })
}

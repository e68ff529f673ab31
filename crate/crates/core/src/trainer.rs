//! Outer-loop training for both settings, with exact stationarity logging.
//!
//! Per outer step `k` the trainer draws `B` task slots, computes one
//! meta-gradient estimate per slot (in parallel, reduced in slot order),
//! estimates the smoothness from an independent task sample, and takes
//! the step `w ← w − β·mean(Ĝ)` with `β = 1/(C_β·L̂)`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{uniform_in_ball, Vector};
use crate::meta::{
    exact_meta_grad, exact_meta_loss, meta_grad_finite_sum, stoch_meta_grad_resample, WorkCount,
};
use crate::rng::{Role, Stream};
use crate::task::{Case, Family, TaskDistribution};
use crate::theory::{
    check_alpha, default_alpha, finite_sum_constants, hat_l_finite, hat_l_resample,
    inner_stepsize_bound, lipschitz_at, meta_stepsize, resampling_constants, LipschitzModel,
    TheoreticalConstants,
};

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_zeta_draws() -> usize {
    100
}

fn default_reference_steps() -> usize {
    20_000
}

/// Parameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: Case,
    /// Inner steps.
    pub n: usize,
    /// Outer iterations.
    pub k: usize,
    /// Meta batch size.
    pub b: usize,
    /// Inner gradient batch size (resampling only).
    #[serde(default = "one")]
    pub s: usize,
    /// Hessian batch size (resampling only).
    #[serde(default = "one")]
    pub d: usize,
    /// Outer gradient batch size (resampling only).
    #[serde(default = "one")]
    pub t: usize,
    /// Task draws for the smoothness estimate.
    #[serde(default = "one")]
    pub bprime: usize,
    /// Samples per task for the smoothness estimate (resampling only).
    #[serde(default = "one")]
    pub dl: usize,
    /// Inner stepsize; `1/(8NL)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub c_beta: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub record_exact_grad: bool,
    #[serde(default)]
    pub allow_unsafe_alpha: bool,
    #[serde(default = "default_zeta_draws")]
    pub zeta_draws: usize,
    /// Initial point; uniform in the ball of radius R/2 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
    #[serde(default)]
    pub record_wall_time: bool,
    /// Length of the deterministic reference run used for 𝓛* when no
    /// closed form exists.
    #[serde(default = "default_reference_steps")]
    pub reference_steps: usize,
}

impl RunConfig {
    pub fn resolved_alpha(&self, dist: &TaskDistribution) -> Result<f64> {
        match self.alpha {
            Some(a) => Ok(a),
            None if self.n == 0 => Ok(0.0),
            None => default_alpha(self.n, dist.profile().l),
        }
    }

    /// Checks the configuration against a distribution and returns the
    /// inner stepsize to use.
    pub fn validate(&self, dist: &TaskDistribution) -> Result<f64> {
        if self.case != dist.case() {
            return Err(Error::Config(format!(
                "config case is {} but the family is {}",
                self.case.name(),
                dist.case().name()
            )));
        }
        for (name, v) in [
            ("k", self.k),
            ("b", self.b),
            ("s", self.s),
            ("d", self.d),
            ("t", self.t),
            ("bprime", self.bprime),
            ("dl", self.dl),
            ("zeta_draws", self.zeta_draws),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        if !self.c_beta.is_finite() || self.c_beta <= 0.0 {
            return Err(Error::Config(format!("`c_beta` must be positive, got {}", self.c_beta)));
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != dist.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dist.dim(),
                    actual: w0.len(),
                });
            }
        }
        let alpha = self.resolved_alpha(dist)?;
        if self.n > 0 {
            match check_alpha(alpha, self.n, dist.profile().l) {
                Ok(()) => {}
                Err(e @ Error::StepsizeTooLarge { .. }) if !self.allow_unsafe_alpha => {
                    return Err(e)
                }
                Err(Error::StepsizeTooLarge { .. }) => {}
                Err(e) => return Err(e),
            }
        } else if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Config(format!("`alpha` must be nonnegative, got {alpha}")));
        }
        Ok(alpha)
    }

    /// Theory constants for this configuration, if they are defined.
    pub fn constants(&self, dist: &TaskDistribution, alpha: f64) -> Option<TheoreticalConstants> {
        let p = dist.profile();
        match self.case {
            Case::Resampling => resampling_constants(
                p,
                alpha,
                self.n,
                self.c_beta,
                self.s,
                self.d,
                self.t,
                self.b,
            )
            .ok()
            .map(TheoreticalConstants::Resampling),
            Case::FiniteSum => finite_sum_constants(p, alpha, self.n, self.c_beta, self.b)
                .ok()
                .map(TheoreticalConstants::FiniteSum),
        }
    }
}

/// One outer iteration, logged before the update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub grad_norm: Option<f64>,
    pub loss: Option<f64>,
    pub beta: f64,
    #[serde(rename = "hat_L")]
    pub hat_l: f64,
    pub elapsed_ms: Option<f64>,
    pub grad_evals: u64,
    pub hess_evals: u64,
    pub in_ball: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossStarMethod {
    ClosedForm,
    ReferenceRun,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub family: Family,
    pub alpha: f64,
    pub alpha_max: Option<f64>,
    pub rows: usize,
    pub zeta: usize,
    pub zeta_draws: usize,
    /// Mean of `‖∇𝓛(w_ζ)‖` over the ζ draws.
    pub mean_grad_norm_zeta: Option<f64>,
    pub initial_grad_norm: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub min_grad_norm: Option<f64>,
    /// `‖∇𝓛(w_K)‖` after the last update.
    pub end_grad_norm: Option<f64>,
    pub initial_loss: Option<f64>,
    pub loss_star: Option<f64>,
    pub loss_star_method: Option<LossStarMethod>,
    pub delta: Option<f64>,
    #[serde(serialize_with = "opt_extended")]
    pub theorem_rhs: Option<f64>,
    pub constants: Option<TheoreticalConstants>,
    pub ball_violations: usize,
    pub diverged_at: Option<usize>,
    pub total_work: WorkCount,
    pub warnings: Vec<String>,
    pub final_w: Vec<f64>,
}

fn opt_extended<S: serde::Serializer>(
    v: &Option<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => crate::theory::extended_f64(x, s),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub zeta: usize,
    pub summary: RunSummary,
}

impl RunMetrics {
    pub fn diverged(&self) -> bool {
        self.summary.diverged_at.is_some()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_metrics_csv(&self.rows, out)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}

/// Writes rows with the fixed column order
/// `k, grad_norm, loss, beta, hat_L, elapsed_ms, grad_evals, hess_evals, in_ball`.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    if rows.is_empty() {
        wtr.write_record([
            "k",
            "grad_norm",
            "loss",
            "beta",
            "hat_L",
            "elapsed_ms",
            "grad_evals",
            "hess_evals",
            "in_ball",
        ])?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<metrics csv>", e))?;
    Ok(())
}

/// Uniform index in `0..rows`.
pub fn select_zeta(rows: usize, stream: &Stream) -> Result<usize> {
    use rand::Rng;
    if rows == 0 {
        return Err(Error::Empty("metrics"));
    }
    Ok(stream.rng().random_range(0..rows))
}

/// `𝓛* = inf 𝓛`, in closed form when every task loss is quadratic and by
/// a deterministic descent run otherwise.
pub fn loss_star(
    dist: &TaskDistribution,
    alpha: f64,
    n: usize,
    start: &Vector,
    reference_steps: usize,
) -> Result<(f64, LossStarMethod)> {
    if matches!(dist.family(), Family::Quadratic | Family::FiniteSumMse) {
        if let Some(v) = quadratic_loss_star(dist, alpha, n)? {
            return Ok((v, LossStarMethod::ClosedForm));
        }
    }
    let model = LipschitzModel::new(dist.case(), dist.profile(), alpha, n);
    let mut w = start.clone();
    let mut best = exact_meta_loss(dist, &w, alpha, n)?;
    for _ in 0..reference_steps {
        let g = exact_meta_grad(dist, &w, alpha, n)?;
        if g.norm() < 1e-13 {
            break;
        }
        let lw = lipschitz_at(dist, &w, &model)?;
        w -= g / lw;
        let loss = exact_meta_loss(dist, &w, alpha, n)?;
        if !loss.is_finite() {
            break;
        }
        best = best.min(loss);
    }
    Ok((best, LossStarMethod::ReferenceRun))
}

/// On quadratic losses the meta-gradient is affine, `∇𝓛(w) = Hw + g`.
fn quadratic_loss_star(dist: &TaskDistribution, alpha: f64, n: usize) -> Result<Option<f64>> {
    let d = dist.dim();
    let zero = Vector::zeros(d);
    let g0 = exact_meta_grad(dist, &zero, alpha, n)?;
    let mut h = crate::linalg::Matrix::zeros(d, d);
    for j in 0..d {
        let mut e = Vector::zeros(d);
        e[j] = 1.0;
        let col = exact_meta_grad(dist, &e, alpha, n)? - &g0;
        h.set_column(j, &col);
    }
    let h = (&h + h.transpose()) * 0.5;
    let Some(chol) = h.cholesky() else {
        return Ok(None);
    };
    let w_star = -chol.solve(&g0);
    Ok(Some(exact_meta_loss(dist, &w_star, alpha, n)?))
}

fn initial_point(config: &RunConfig, dist: &TaskDistribution, root: &Stream) -> Vector {
    match &config.w0 {
        Some(w) => Vector::from_column_slice(w),
        None => {
            let mut rng = root.role(Role::Init).rng();
            uniform_in_ball(dist.dim(), 0.5 * dist.radius(), &mut rng)
        }
    }
}

struct Step {
    direction: Vector,
    hat_l: f64,
    work: WorkCount,
}

fn resampling_step(
    config: &RunConfig,
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    model: &LipschitzModel,
    ks: &Stream,
) -> Result<Step> {
    let slots = dist.sample_task_indices(config.b, &ks.role(Role::TaskDraw));
    let estimates: Vec<Result<_>> = slots
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            stoch_meta_grad_resample(
                dist.task(i),
                w,
                alpha,
                config.n,
                config.s,
                config.d,
                config.t,
                &ks.slot(slot),
            )
        })
        .collect();
    let mut direction = Vector::zeros(dist.dim());
    let mut work = WorkCount::default();
    for e in estimates {
        let e = e?;
        direction += &e.value;
        work += e.work;
    }
    direction /= config.b as f64;
    let est = hat_l_resample(
        dist,
        w,
        config.bprime,
        config.dl,
        model,
        &ks.role(Role::LipschitzTasks),
    )?;
    work += est.work;
    Ok(Step {
        direction,
        hat_l: est.value,
        work,
    })
}

fn finite_sum_step(
    config: &RunConfig,
    dist: &TaskDistribution,
    w: &Vector,
    alpha: f64,
    model: &LipschitzModel,
    ks: &Stream,
) -> Result<Step> {
    let slots = dist.sample_task_indices(config.b, &ks.role(Role::TaskDraw));
    let estimates: Vec<Result<_>> = slots
        .par_iter()
        .map(|&i| meta_grad_finite_sum(dist.task(i), w, alpha, config.n))
        .collect();
    let mut direction = Vector::zeros(dist.dim());
    let mut work = WorkCount::default();
    for e in estimates {
        let e = e?;
        direction += &e.value;
        work += e.work;
    }
    direction /= config.b as f64;
    let est = hat_l_finite(dist, w, config.bprime, model, &ks.role(Role::LipschitzTasks))?;
    work += est.work;
    Ok(Step {
        direction,
        hat_l: est.value,
        work,
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs the resampling algorithm.
pub fn run_maml_resampling(
    config: &RunConfig,
    dist: &TaskDistribution,
    workers: usize,
) -> Result<RunMetrics> {
    if config.case != Case::Resampling {
        return Err(Error::Config("run_maml_resampling needs case = resampling".into()));
    }
    run(config, dist, workers)
}

/// Runs the finite-sum algorithm.
pub fn run_maml_finite_sum(
    config: &RunConfig,
    dist: &TaskDistribution,
    workers: usize,
) -> Result<RunMetrics> {
    if config.case != Case::FiniteSum {
        return Err(Error::Config("run_maml_finite_sum needs case = finite_sum".into()));
    }
    run(config, dist, workers)
}

/// Runs whichever algorithm matches `config.case` on a pool of
/// `workers` threads. Results do not depend on `workers`.
pub fn run(config: &RunConfig, dist: &TaskDistribution, workers: usize) -> Result<RunMetrics> {
    let alpha = config.validate(dist)?;
    let pool = thread_pool(workers)?;
    pool.install(|| run_inner(config, dist, alpha))
}

/// Like [`run`], but uses whichever rayon pool is current.
pub fn run_on_current_pool(config: &RunConfig, dist: &TaskDistribution) -> Result<RunMetrics> {
    let alpha = config.validate(dist)?;
    run_inner(config, dist, alpha)
}

fn run_inner(config: &RunConfig, dist: &TaskDistribution, alpha: f64) -> Result<RunMetrics> {
    let start = Instant::now();
    let root = Stream::root(config.seed);
    let profile = dist.profile();
    let model = LipschitzModel::new(dist.case(), profile, alpha, config.n);
    let constants = config.constants(dist, alpha);
    let radius = dist.radius();
    let n = config.n;

    let mut warnings = Vec::new();
    if let Some(c) = &constants {
        warnings.extend(c.warnings().iter().cloned());
        let plan = c.plan();
        if config.bprime < plan.bprime_min {
            warnings.push(format!(
                "bprime = {} is below the threshold {}",
                config.bprime, plan.bprime_min
            ));
        }
        if config.case == Case::Resampling && config.dl < plan.dl_min {
            warnings.push(format!(
                "dl = {} is below the threshold {}",
                config.dl, plan.dl_min
            ));
        }
    } else if n > 0 {
        warnings.push("alpha is outside the range where the constants are defined".into());
    }

    let w0 = initial_point(config, dist, &root);
    let mut w = w0.clone();
    let mut rows = Vec::with_capacity(config.k);
    let mut total_work = WorkCount::default();
    let mut diverged_at = None;
    let mut ball_violations = 0;

    for k in 0..config.k {
        let ks = root.outer(k);
        let (grad_norm, loss) = if config.record_exact_grad {
            match (
                exact_meta_grad(dist, &w, alpha, n),
                exact_meta_loss(dist, &w, alpha, n),
            ) {
                (Ok(g), Ok(l)) => (Some(g.norm()), Some(l)),
                (Err(Error::Diverged { .. }), _) | (_, Err(Error::Diverged { .. })) => {
                    diverged_at = Some(k);
                    break;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        } else {
            (None, None)
        };
        let step = match config.case {
            Case::Resampling => resampling_step(config, dist, &w, alpha, &model, &ks),
            Case::FiniteSum => finite_sum_step(config, dist, &w, alpha, &model, &ks),
        };
        let step = match step {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => {
                diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let beta = match meta_stepsize(step.hat_l, config.c_beta) {
            Ok(b) => b,
            Err(_) => {
                diverged_at = Some(k);
                break;
            }
        };
        let in_ball = w.norm() <= radius * (1.0 + 1e-12);
        if !in_ball {
            ball_violations += 1;
        }
        total_work += step.work;
        rows.push(MetricsRow {
            k,
            grad_norm,
            loss,
            beta,
            hat_l: step.hat_l,
            elapsed_ms: config
                .record_wall_time
                .then(|| start.elapsed().as_secs_f64() * 1e3),
            grad_evals: step.work.grad_evals,
            hess_evals: step.work.hess_evals,
            in_ball,
        });
        w -= step.direction * beta;
        if !w.iter().all(|x| x.is_finite()) {
            diverged_at = Some(k);
            break;
        }
    }

    let zeta_stream = root.role(Role::Zeta);
    let (zeta, mean_grad_norm_zeta) = if rows.is_empty() {
        (0, None)
    } else {
        let draws = (0..config.zeta_draws)
            .map(|t| select_zeta(rows.len(), &zeta_stream.trial(t)))
            .collect::<Result<Vec<_>>>()?;
        let mean = if config.record_exact_grad {
            let total: f64 = draws.iter().map(|&z| rows[z].grad_norm.unwrap_or(f64::NAN)).sum();
            Some(total / draws.len() as f64)
        } else {
            None
        };
        (draws[0], mean)
    };

    let grads: Vec<f64> = rows.iter().filter_map(|r| r.grad_norm).collect();
    let end_grad_norm = if config.record_exact_grad && diverged_at.is_none() {
        exact_meta_grad(dist, &w, alpha, n).ok().map(|g| g.norm())
    } else {
        None
    };
    let initial_loss = rows.first().and_then(|r| r.loss);

    let (loss_star_value, loss_star_method, delta, theorem_rhs) = match (&constants, diverged_at)
    {
        (Some(c), None) if config.record_exact_grad => {
            let (mut ls, method) = loss_star(dist, alpha, n, &w, config.reference_steps)?;
            if method == LossStarMethod::ReferenceRun {
                ls = rows.iter().filter_map(|r| r.loss).fold(ls, f64::min);
            }
            let delta = initial_loss.map(|l0| (l0 - ls).max(0.0));
            let rhs = delta.map(|d| c.theorem_rhs(d, config.k));
            (Some(ls), Some(method), delta, rhs)
        }
        _ => (None, None, None, None),
    };

    let alpha_max = if n > 0 {
        inner_stepsize_bound(n, profile.l).ok()
    } else {
        None
    };
    if ball_violations > 0 {
        warnings.push(format!(
            "{ball_violations} iterates left the certified ball of radius {radius}"
        ));
    }
    if let Some(k) = diverged_at {
        warnings.push(format!("diverged at outer step {k}"));
    }

    let summary = RunSummary {
        config: RunConfig {
            alpha: Some(alpha),
            ..config.clone()
        },
        family: dist.family(),
        alpha,
        alpha_max,
        rows: rows.len(),
        zeta,
        zeta_draws: config.zeta_draws,
        mean_grad_norm_zeta,
        initial_grad_norm: grads.first().copied(),
        final_grad_norm: grads.last().copied(),
        min_grad_norm: grads.iter().copied().reduce(f64::min),
        end_grad_norm,
        initial_loss,
        loss_star: loss_star_value,
        loss_star_method,
        delta,
        theorem_rhs,
        constants,
        ball_violations,
        diverged_at,
        total_work,
        warnings,
        final_w: w.iter().copied().collect(),
    };
    Ok(RunMetrics {
        rows,
        zeta,
        summary,
    })
}

//! Property tests for the invariants of the task model, paths, estimators,
//! constants, trainer and verifier.

use maml_core::inner::{inner_gd, inner_gd_finite};
use maml_core::linalg::{asymmetry, op_norm, uniform_in_ball, Matrix, Vector};
use maml_core::meta::{exact_task_meta_grad, stoch_meta_grad_resample};
use maml_core::rng::{Role, Stream};
use maml_core::task::{MseSpec, QuadraticSpec, TaskDistribution, TrigSpec};
use maml_core::theory::{
    default_alpha, finite_sum_constants, inner_stepsize_bound, resampling_constants, LipschitzModel,
};
use maml_core::trainer::{run, RunConfig};
use maml_core::verify::{check_lemma_suite, mc_check_prop4};
use maml_core::Case;
use proptest::prelude::*;

fn family(kind: u8, seed: u64, noisy: bool) -> TaskDistribution {
    let (sg, sh) = if noisy { (0.4, 0.1) } else { (0.0, 0.0) };
    match kind % 3 {
        0 => TrigSpec {
            d: 4,
            num_tasks: 4,
            c_max: 1.0,
            a_max: 1.5,
            lambda: 0.1,
            radius: 2.0,
            sigma_g: sg,
            sigma_h: sh,
            seed,
        }
        .build(),
        1 => QuadraticSpec {
            d: 4,
            num_tasks: 5,
            l_target: 2.0,
            sigma: 0.5,
            sigma_g: sg,
            sigma_h: sh,
            radius: 2.0,
            seed,
            rho: None,
        }
        .build(),
        _ => MseSpec {
            d: 3,
            num_tasks: 6,
            support_size: 8,
            query_size: 5,
            noise_std: 0.2,
            radius: 3.0,
            seed,
            rho: Some(0.5),
        }
        .build(),
    }
    .unwrap()
}

fn point(dist: &TaskDistribution, seed: u64) -> Vector {
    uniform_in_ball(dist.dim(), dist.radius(), &mut Stream::root(seed).rng())
}

fn path_inner(dist: &TaskDistribution, i: usize, w: &Vector, alpha: f64, n: usize) -> Vec<Vector> {
    let task = dist.task(i);
    match dist.case() {
        Case::Resampling => inner_gd(task, w, alpha, n),
        Case::FiniteSum => inner_gd_finite(task, w, alpha, n),
    }
    .unwrap()
    .iterates
}

/// Stepsize as a fraction of the admissible bound.
fn alpha_for(dist: &TaskDistribution, n: usize, frac: f64) -> f64 {
    frac * inner_stepsize_bound(n, dist.profile().l).unwrap()
}

fn le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + 1e-10) + 1e-13
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracles_respect_profile(kind in 0u8..3, seed in 0u64..1000, ws in any::<u64>(), us in any::<u64>()) {
        let dist = family(kind, seed, false);
        let p = *dist.profile();
        let (w, u) = (point(&dist, ws), point(&dist, us));
        let gap = (&w - &u).norm();
        let mut mean = Vector::zeros(dist.dim());
        let mut grads = Vec::new();
        for (task, q) in dist.tasks().iter().zip(dist.weights()) {
            let h = task.hess(&w).unwrap();
            prop_assert!(asymmetry(&h) <= 1e-12);
            prop_assert!(le((task.grad(&w).unwrap() - task.grad(&u).unwrap()).norm(), p.l * gap));
            prop_assert!(le(op_norm(&(h - task.hess(&u).unwrap())), p.rho * gap));
            let g = task.query_grad(&w).unwrap();
            mean.axpy(*q, &g, 1.0);
            grads.push(g);
        }
        let var: f64 = grads.iter().zip(dist.weights()).map(|(g, q)| q * (g - &mean).norm_squared()).sum();
        prop_assert!(le(var, p.sigma * p.sigma));
    }

    #[test]
    fn stochastic_oracles_are_deterministic(seed in 0u64..1000, bs in any::<u64>(), size in 1usize..6) {
        let dist = family(0, seed, true);
        let task = dist.task(0);
        let w = point(&dist, bs ^ 1);
        let stream = Stream::root(bs);
        let a = task.sample_batch(size, &stream).unwrap();
        let b = task.sample_batch(size, &stream).unwrap();
        prop_assert_eq!(task.stoch_grad(&w, &a).unwrap(), task.stoch_grad(&w, &b).unwrap());
        prop_assert_eq!(task.stoch_hess(&w, &a).unwrap(), task.stoch_hess(&w, &b).unwrap());
        let g1 = stoch_meta_grad_resample(task, &w, 0.05, 3, size, 2, 2, &stream).unwrap();
        let g2 = stoch_meta_grad_resample(task, &w, 0.05, 3, size, 2, 2, &stream).unwrap();
        prop_assert_eq!(g1.value, g2.value);
    }

    #[test]
    fn path_lemmas_hold(
        kind in 0u8..3, seed in 0u64..1000, ws in any::<u64>(), us in any::<u64>(),
        n in 1usize..7, frac in 0.0f64..0.99,
    ) {
        let dist = family(kind, seed, false);
        let l = dist.profile().l;
        let alpha = alpha_for(&dist, n, frac);
        let q = 1.0 + alpha * l;
        let (w, u) = (point(&dist, ws), point(&dist, us));
        for i in 0..dist.len() {
            let task = dist.task(i);
            let pw = path_inner(&dist, i, &w, alpha, n);
            let pu = path_inner(&dist, i, &u, alpha, n);
            let g0 = task.grad(&w).unwrap().norm();
            let mut product = Matrix::identity(dist.dim(), dist.dim());
            for j in 0..=n {
                let qj = q.powi(j as i32);
                prop_assert!(le((&pw[j] - &pu[j]).norm(), qj * (&w - &u).norm()));
                prop_assert!(le(task.grad(&pw[j]).unwrap().norm(), qj * g0));
                if j < n {
                    let h = task.hess(&pw[j]).unwrap();
                    product *= Matrix::identity(dist.dim(), dist.dim()) - h * alpha;
                    let gap = op_norm(&(Matrix::identity(dist.dim(), dist.dim()) - &product));
                    prop_assert!(le(gap, q.powi(j as i32 + 1) - 1.0));
                }
            }
            let meta = exact_task_meta_grad(task, &w, alpha, n).unwrap();
            match dist.case() {
                Case::Resampling => {
                    let g = task.grad(&w).unwrap();
                    prop_assert!(le((&g - &meta).norm(), (q.powi(2 * n as i32) - 1.0) * g.norm()));
                }
                Case::FiniteSum => {
                    let gt = task.query_grad(&w).unwrap();
                    let qn = q.powi(n as i32);
                    let bound = (qn - 1.0) * gt.norm() + qn * (qn - 1.0) * g0;
                    prop_assert!(le((&gt - &meta).norm(), bound));
                }
            }
        }
    }

    #[test]
    fn constants_are_pure_and_estimates_monotone(
        seed in 0u64..1000, n in 1usize..20, frac in 0.0f64..0.99, c_beta in 1.0f64..200.0,
        s in 1usize..50, d in 1usize..50, t in 1usize..50, b in 1usize..50,
        x in 0.0f64..10.0, dx in 0.0f64..10.0,
    ) {
        for kind in 0..3u8 {
            let dist = family(kind, seed, true);
            let p = dist.profile();
            let alpha = alpha_for(&dist, n, frac);
            match dist.case() {
                Case::Resampling => {
                    let a = resampling_constants(p, alpha, n, c_beta, s, d, t, b).unwrap();
                    let bb = resampling_constants(p, alpha, n, c_beta, s, d, t, b).unwrap();
                    prop_assert_eq!(format!("{a:?}"), format!("{bb:?}"));
                }
                Case::FiniteSum => {
                    let a = finite_sum_constants(p, alpha, n, c_beta, b).unwrap();
                    let bb = finite_sum_constants(p, alpha, n, c_beta, b).unwrap();
                    prop_assert_eq!(format!("{a:?}"), format!("{bb:?}"));
                }
            }
            let model = LipschitzModel::new(dist.case(), p, alpha, n);
            prop_assert!(model.slope >= 0.0);
            prop_assert!(model.at(x) <= model.at(x + dx));
            prop_assert!(le((1.0 + alpha * p.l).powi(2 * n as i32) * p.l, model.at(x)));
        }
    }

    #[test]
    fn stepsize_bound_ordering(n in 1usize..60, l in 0.01f64..100.0) {
        let bound = inner_stepsize_bound(n, l).unwrap();
        prop_assert!(default_alpha(n, l).unwrap() < bound);
        prop_assert!(inner_stepsize_bound(n + 1, l).unwrap() < bound);
        prop_assert!((1.0 + bound * l).powi(2 * n as i32) <= 2.0 * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lemma_suite_never_fails(kind in 0u8..3, seed in 0u64..1000, n in 1usize..5, frac in 0.05f64..0.95) {
        let dist = family(kind, seed, false);
        let alpha = alpha_for(&dist, n, frac);
        for r in check_lemma_suite(&dist, alpha, n, 50, &Stream::root(seed)).unwrap() {
            prop_assert!(r.satisfied, "{:?}", r);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible(seed in 0u64..1000) {
        let dist = family(1, seed, true);
        let w = point(&dist, seed);
        let stream = Stream::root(seed).role(Role::Init);
        let a = mc_check_prop4(&dist, &w, 0.05, 2, 3, 2, 2, 500, &stream).unwrap();
        let b = mc_check_prop4(&dist, &w, 0.05, 2, 3, 2, 2, 500, &stream).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn schedule_does_not_change_runs(kind in 0u8..3, seed in 0u64..1000) {
        let dist = family(kind, seed, true);
        let config = config(dist.case(), 15, 3, seed);
        let serial = run(&config, &dist, 1).unwrap();
        let parallel = run(&config, &dist, 4).unwrap();
        prop_assert_eq!(&serial.rows, &parallel.rows);
        prop_assert_eq!(&serial.summary.final_w, &parallel.summary.final_w);
    }

    #[test]
    fn noiseless_single_task_runs_descend(kind in 0u8..3, seed in 0u64..1000) {
        let full = family(kind, seed, false);
        let dist = TaskDistribution::uniform(vec![full.task(0).clone()], full.radius()).unwrap();
        let metrics = run(&config(dist.case(), 30, 1, seed), &dist, 1).unwrap();
        for pair in metrics.rows.windows(2) {
            let (a, b) = (pair[0].loss.unwrap(), pair[1].loss.unwrap());
            prop_assert!(b <= a + 4.0 * f64::EPSILON * a.abs().max(1.0), "{a} -> {b}");
        }
    }
}

fn config(case: Case, k: usize, b: usize, seed: u64) -> RunConfig {
    RunConfig {
        case,
        n: 2,
        k,
        b,
        s: 2,
        d: 2,
        t: 2,
        bprime: 2,
        dl: 2,
        alpha: None,
        c_beta: 5.0,
        seed,
        record_exact_grad: true,
        allow_unsafe_alpha: false,
        zeta_draws: 10,
        w0: None,
        record_wall_time: false,
        reference_steps: 50,
    }
}

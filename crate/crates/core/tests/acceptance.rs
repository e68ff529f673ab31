//! Acceptance criteria, one line per criterion.
//!
//! Runs without the libtest harness so the PASS/FAIL lines are always
//! printed; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use maml_core::linalg::{goe_matrix, sym_norm, uniform_in_ball, Matrix, Vector};
use maml_core::meta::exact_task_meta_grad;
use maml_core::rng::Stream;
use maml_core::task::{MseSpec, NoiseModel, QuadraticSpec, Task, TaskDistribution, TrigSpec};
use maml_core::theory::{
    default_alpha, finite_sum_constants, resampling_constants, SecondMomentFactor,
};
use maml_core::trainer::{run, RunConfig};
use maml_core::verify::{
    check_lemma_suite, check_meta_grad_fd, mc_check_prop2, mc_check_prop3, mc_check_prop4,
    mc_check_prop6, mc_check_stepsize_moments, BoundReport,
};
use maml_core::Case;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fmt_report(r: &BoundReport) -> String {
    format!(
        "{} {}: {:.4e}±{:.1e} vs {:.4e}",
        if r.satisfied { "ok" } else { "VIOLATED" },
        r.name,
        r.empirical,
        r.std_err,
        r.bound
    )
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

/// Ten-task trig family used for the resampling criteria.
fn trig_family(sigma_g: f64, sigma_h: f64) -> TaskDistribution {
    TrigSpec {
        d: 10,
        num_tasks: 10,
        c_max: 1.0,
        a_max: 1.0,
        lambda: 0.1,
        radius: 3.0,
        sigma_g,
        sigma_h,
        seed: 7,
    }
    .build()
    .unwrap()
}

fn quadratic_family() -> TaskDistribution {
    QuadraticSpec {
        d: 5,
        num_tasks: 8,
        l_target: 1.0,
        sigma: 0.5,
        sigma_g: 0.4,
        sigma_h: 0.2,
        radius: 2.0,
        seed: 1,
        rho: None,
    }
    .build()
    .unwrap()
}

fn mse_family(rho: Option<f64>) -> TaskDistribution {
    MseSpec {
        d: 5,
        num_tasks: 20,
        support_size: 50,
        query_size: 50,
        noise_std: 0.1,
        radius: 6.0,
        seed: 3,
        rho,
    }
    .build()
    .unwrap()
}

/// Batch sizes of the resampling corollary: `S ≥ 15ρ²σ_g²/L⁴` (scaled by
/// `s_factor`) and `D ≥ σ_H²L²`.
fn corollary_batches(dist: &TaskDistribution, s_factor: f64) -> (usize, usize) {
    let p = dist.profile();
    let s = (s_factor * 15.0 * p.rho.powi(2) * p.sigma_g.powi(2) / p.l.powi(4)).ceil() as usize;
    let d = (p.sigma_h.powi(2) * p.l.powi(2))
        .max(p.sigma_h.powi(2) / p.l.powi(2))
        .ceil() as usize;
    (s.max(1), d.max(1))
}

/// Reference point inside the certified ball.
fn reference_point(dist: &TaskDistribution, seed: u64) -> Vector {
    uniform_in_ball(dist.dim(), 0.5 * dist.radius(), &mut Stream::root(seed).rng())
}

fn random_symmetric(d: usize, norm: f64, rng: &mut impl Rng) -> Matrix {
    let g = goe_matrix(d, rng);
    let s = sym_norm(&g);
    g * (norm / s)
}

/// `(I − αA)^N` applied in closed form for the quadratic meta-gradient.
fn quadratic_closed_form(a: &Matrix, b: &Vector, w: &Vector, alpha: f64, n: usize) -> Vector {
    let d = w.len();
    let m = Matrix::identity(d, d) - a * alpha;
    let mut mn = Matrix::identity(d, d);
    let mut geo = Matrix::zeros(d, d);
    for _ in 0..n {
        geo += &mn;
        mn *= &m;
    }
    let w_n = &mn * w - (geo * b) * alpha;
    &mn * (a * w_n + b)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Stream::root(101).rng();
    let (mut worst_trig, mut worst_quad, mut worst_closed) = (0.0f64, 0.0f64, 0.0f64);
    let dims = [2usize, 5, 10];
    let steps = [1usize, 3, 5, 10];
    for case in 0..100 {
        let d = dims[case % 3];
        let n = steps[(case / 3) % 4];
        let w = uniform_in_ball(d, 1.5, &mut rng);
        let h = 1e-5 * (1.0 + w.norm());
        if case % 2 == 0 {
            let a = random_symmetric(d, rng.random_range(0.5..2.0), &mut rng);
            let b = uniform_in_ball(d, 1.0, &mut rng);
            let task = Task::quadratic(a.clone(), b.clone(), NoiseModel::ZERO).unwrap();
            let alpha = default_alpha(n, task.lipschitz()).unwrap();
            let r = check_meta_grad_fd(&task, &w, alpha, n, h, 1e-8).unwrap();
            worst_quad = worst_quad.max(r.empirical);
            let g = exact_task_meta_grad(&task, &w, alpha, n).unwrap();
            let c = quadratic_closed_form(&a, &b, &w, alpha, n);
            worst_closed = worst_closed.max((g - &c).amax() / c.amax());
        } else {
            let spec = TrigSpec {
                d,
                num_tasks: 1,
                c_max: rng.random_range(0.5..2.0),
                a_max: rng.random_range(0.5..1.5),
                lambda: 0.1,
                radius: 2.0,
                sigma_g: 0.0,
                sigma_h: 0.0,
                seed: case as u64,
            };
            let dist = spec.build().unwrap();
            let alpha = default_alpha(n, dist.profile().l).unwrap();
            let r = check_meta_grad_fd(dist.task(0), &w, alpha, n, h, 1e-5).unwrap();
            worst_trig = worst_trig.max(r.empirical);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_trig <= 1e-5
        && worst_quad <= 1e-8
        && worst_closed <= 1e-10
        && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "fd rel err trig {worst_trig:.2e} (<=1e-5), quadratic {worst_quad:.2e} (<=1e-8), closed form {worst_closed:.2e} (<=1e-10), {elapsed:.2?}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let trig = trig_family(0.5, 0.5);
    let mse = mse_family(None);
    let mut reports = Vec::new();
    let a1 = default_alpha(3, trig.profile().l).unwrap();
    reports.extend(check_lemma_suite(&trig, a1, 3, 1000, &Stream::root(21)).unwrap());
    let a2 = default_alpha(3, mse.profile().l).unwrap();
    reports.extend(check_lemma_suite(&mse, a2, 3, 1000, &Stream::root(22)).unwrap());
    let elapsed = start.elapsed();
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    let pass = violations == 0
        && reports.iter().all(|r| r.satisfied && r.trials >= 200)
        && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!("{} violations across {names:?}, {elapsed:.2?}", violations),
    )
}

fn criterion_3() -> Outcome {
    let sizes = [10usize, 100, 1000];
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, dist) in [("quadratic", quadratic_family()), ("trig", trig_family(0.5, 0.5))] {
        let n = 3;
        let alpha = default_alpha(n, dist.profile().l).unwrap();
        let w = reference_point(&dist, 31);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (m, &s) in sizes.iter().enumerate() {
            let r = mc_check_prop2(
                &dist,
                &w,
                alpha,
                n,
                s,
                10_000,
                &Stream::root(32).child(m as u64),
                SecondMomentFactor::Derived,
            )
            .unwrap();
            for step in &r.per_step {
                if !step.first.satisfied || !step.second.satisfied {
                    ok = false;
                    notes.push(format!("{label} S={s} j={}: {} / {}", step.j, fmt_report(&step.first), fmt_report(&step.second)));
                }
            }
            xs.push((s as f64).ln());
            ys.push(r.per_step[n].first.empirical.ln());
        }
        let slope = maml_core::stats::slope(&xs, &ys);
        if (slope + 0.5).abs() > 0.1 {
            ok = false;
        }
        notes.push(format!("{label} slope {slope:.3}"));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let n = 3;
    let noisy = trig_family(0.5, 0.5);
    let (s, d) = corollary_batches(&noisy, 4.0);
    let alpha = default_alpha(n, noisy.profile().l).unwrap();
    let w = reference_point(&noisy, 41);
    let r = mc_check_prop3(&noisy, &w, alpha, n, s, d, 1, 100_000, &Stream::root(42)).unwrap();

    let clean = trig_family(0.0, 0.0);
    let alpha0 = default_alpha(n, clean.profile().l).unwrap();
    let z = mc_check_prop3(&clean, &w, alpha0, n, s, d, 1, 100_000, &Stream::root(43)).unwrap();
    let zero_ok = z.empirical <= 3.0 * z.std_err;
    outcome(
        r.satisfied && zero_ok,
        format!(
            "S={s} D={d}: {}; sigma_g=0 bias {:.2e} (3 SE {:.2e})",
            fmt_report(&r),
            z.empirical,
            3.0 * z.std_err
        ),
    )
}

fn criterion_5() -> Outcome {
    let n = 3;
    let dist = trig_family(0.5, 0.5);
    let (s, d) = corollary_batches(&dist, 4.0);
    let alpha = default_alpha(n, dist.profile().l).unwrap();
    let w = reference_point(&dist, 51);
    let r4 = mc_check_prop4(&dist, &w, alpha, n, s, d, 1, 100_000, &Stream::root(52)).unwrap();
    let mse = mse_family(None);
    let alpha_fs = default_alpha(n, mse.profile().l).unwrap();
    let w_fs = reference_point(&mse, 53);
    let r6 = mc_check_prop6(&mse, &w_fs, alpha_fs, n).unwrap();
    outcome(
        r4.satisfied && r6.satisfied,
        format!("{}; {}", fmt_report(&r4), fmt_report(&r6)),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let n = 3;
    let dist = trig_family(0.5, 0.5);
    let alpha = default_alpha(n, dist.profile().l).unwrap();
    let c = resampling_constants(dist.profile(), alpha, n, 100.0, 1, 1, 1, 1).unwrap();
    let w = reference_point(&dist, 61);
    let mut reports = mc_check_stepsize_moments(
        &dist,
        &w,
        alpha,
        n,
        100.0,
        c.plan.bprime_min,
        c.plan.dl_min,
        100_000,
        &Stream::root(62),
    )
    .unwrap();
    let mse = mse_family(Some(0.5));
    let alpha_fs = default_alpha(n, mse.profile().l).unwrap();
    let cf = finite_sum_constants(mse.profile(), alpha_fs, n, 80.0, 10).unwrap();
    let w_fs = reference_point(&mse, 63);
    reports.extend(
        mc_check_stepsize_moments(
            &mse,
            &w_fs,
            alpha_fs,
            n,
            80.0,
            cf.plan.bprime_min,
            1,
            100_000,
            &Stream::root(64),
        )
        .unwrap(),
    );
    let elapsed = start.elapsed();
    let pass = reports.iter().all(|r| r.satisfied) && elapsed < Duration::from_secs(60);
    let text: Vec<String> = reports.iter().map(fmt_report).collect();
    outcome(
        pass,
        format!(
            "B'={} D_L={} B'_fs={}: {}, {elapsed:.2?}",
            c.plan.bprime_min,
            c.plan.dl_min,
            cf.plan.bprime_min,
            text.join("; ")
        ),
    )
}

fn base_config(case: Case, n: usize, k: usize, b: usize, c_beta: f64, seed: u64) -> RunConfig {
    RunConfig {
        case,
        n,
        k,
        b,
        s: 1,
        d: 1,
        t: 1,
        bprime: 1,
        dl: 1,
        alpha: None,
        c_beta,
        seed,
        record_exact_grad: true,
        allow_unsafe_alpha: false,
        zeta_draws: 100,
        w0: None,
        record_wall_time: false,
        reference_steps: 20_000,
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dist = trig_family(0.5, 0.5);
    let n = 3;
    let (s, d) = corollary_batches(&dist, 4.0);
    let alpha = default_alpha(n, dist.profile().l).unwrap();
    let c = resampling_constants(dist.profile(), alpha, n, 100.0, s, d, 1, 20).unwrap();
    let cfg = RunConfig {
        s,
        d,
        bprime: c.plan.bprime_min,
        dl: c.plan.dl_min,
        ..base_config(Case::Resampling, n, 1000, 20, 100.0, 71)
    };
    let m = run(&cfg, &dist, workers()).unwrap();
    let elapsed = start.elapsed();
    let s_ = &m.summary;
    let mean = s_.mean_grad_norm_zeta.unwrap();
    let init = s_.initial_grad_norm.unwrap();
    let rhs = s_.theorem_rhs.unwrap();
    let pass = mean <= rhs
        && mean <= 0.1 * init
        && s_.ball_violations == 0
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "S={s} D={d} theta={:.3e}: E|grad(w_zeta)| {mean:.4e} vs bound {rhs:.4e} and vs 0.1*initial {:.4e}, {elapsed:.2?}",
            c.theta,
            0.1 * init
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dist = mse_family(None);
    let n = 3;
    let alpha = default_alpha(n, dist.profile().l).unwrap();
    let c = finite_sum_constants(dist.profile(), alpha, n, 80.0, 10).unwrap();
    let cfg = RunConfig {
        bprime: c.plan.bprime_min,
        ..base_config(Case::FiniteSum, n, 1000, 10, 80.0, 81)
    };
    let m = run(&cfg, &dist, workers()).unwrap();
    let elapsed = start.elapsed();
    let s = &m.summary;
    let mean = s.mean_grad_norm_zeta.unwrap();
    let init = s.initial_grad_norm.unwrap();
    let last = s.final_grad_norm.unwrap();
    let rhs = s.theorem_rhs.unwrap();
    let pass = mean <= rhs
        && last <= 0.1 * init
        && s.ball_violations == 0
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "E|grad(w_zeta)| {mean:.4e} vs bound {rhs:.4e}; |grad| {init:.4e} at k=0 -> {last:.4e} at k=K-1, {elapsed:.2?}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let dist = trig_family(0.5, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let family = dir.path().join("family.json");
    dist.save(&family).unwrap();
    let config = dir.path().join("sweep.toml");
    let (k, s, d, t, b, bprime, dl) = (3usize, 7usize, 3usize, 5usize, 4usize, 6usize, 2usize);
    std::fs::write(
        &config,
        format!(
            "family_path = \"family.json\"\n\n[run]\ncase = \"resampling\"\nn = 1\nk = {k}\nb = {b}\ns = {s}\nd = {d}\nt = {t}\nbprime = {bprime}\ndl = {dl}\nc_beta = 100.0\nseed = 9\n\n[sweep]\nn = [1, 2, 3, 4, 5]\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let inv = maml_core::experiment::Invocation {
        command: maml_core::experiment::Command::Sweep,
        config_path: config,
        out_dir: out.clone(),
        overrides: vec![],
        seed: None,
        workers: 2,
        allow_unsafe_alpha: false,
    };
    let code = maml_core::experiment::execute(&inv, &mut std::io::sink());
    if code != 0 {
        return outcome(false, format!("sweep exited with {code}"));
    }
    let mut ok = true;
    let mut seen = Vec::new();
    // Every row of every point must match the formula, not only the first.
    for point in 0..5 {
        let n = point + 1;
        let mut rdr = csv::Reader::from_path(out.join("points").join(point.to_string()).join("metrics.csv")).unwrap();
        let want_g = (b * (n * s + t) + bprime * dl) as u64;
        let want_h = (b * n * d) as u64;
        let mut rows = 0;
        for rec in rdr.deserialize::<std::collections::HashMap<String, String>>() {
            let rec = rec.unwrap();
            let g: u64 = rec["grad_evals"].parse().unwrap();
            let h: u64 = rec["hess_evals"].parse().unwrap();
            ok &= g == want_g && h == want_h;
            rows += 1;
        }
        ok &= rows == k;
        seen.push(format!("N={n}: {want_g}/{want_h}"));
    }
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let per_iter: Vec<(u64, u64)> = rdr
        .deserialize::<std::collections::HashMap<String, String>>()
        .map(|r| {
            let r = r.unwrap();
            (r["grad_evals_per_iter"].parse().unwrap(), r["hess_evals_per_iter"].parse().unwrap())
        })
        .collect();
    // Linear in N: constant first differences.
    let dg: Vec<i64> = per_iter.windows(2).map(|p| p[1].0 as i64 - p[0].0 as i64).collect();
    let dh: Vec<i64> = per_iter.windows(2).map(|p| p[1].1 as i64 - p[0].1 as i64).collect();
    ok &= dg.iter().all(|&x| x == (b * s) as i64) && dh.iter().all(|&x| x == (b * d) as i64);
    outcome(ok, format!("grad/hess evals per iteration {}", seen.join(", ")))
}

fn criterion_10() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let trig = trig_family(0.5, 0.5);
    let mse = mse_family(None);
    let cases = [
        (
            "resampling",
            &trig,
            RunConfig {
                s: 5,
                d: 2,
                t: 3,
                bprime: 3,
                dl: 2,
                ..base_config(Case::Resampling, 3, 40, 8, 100.0, 5)
            },
        ),
        ("finite-sum", &mse, base_config(Case::FiniteSum, 3, 40, 6, 80.0, 5)),
    ];
    for (label, dist, cfg) in cases {
        let mut outputs = Vec::new();
        for w in [1usize, 2, 8] {
            let m = run(&cfg, dist, w).unwrap();
            let mut buf = Vec::new();
            m.write_csv(&mut buf).unwrap();
            outputs.push(buf);
        }
        let same = outputs.windows(2).all(|p| p[0] == p[1]);
        ok &= same;
        notes.push(format!("{label}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    outcome(ok, format!("workers 1/2/8 -> {}", notes.join(", ")))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("meta-gradient correctness", criterion_1),
        ("lemma suite", criterion_2),
        ("path moments", criterion_3),
        ("estimator bias", criterion_4),
        ("estimator second moment", criterion_5),
        ("stepsize moments", criterion_6),
        ("convergence, resampling", criterion_7),
        ("convergence, finite-sum", criterion_8),
        ("complexity counters", criterion_9),
        ("determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|x| x == &id) {
            continue;
        }
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {id} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

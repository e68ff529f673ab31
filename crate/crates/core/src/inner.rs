//! Inner-stage adaptation paths.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::{Role, Stream};
use crate::task::{Case, SampleBatch, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathMode {
    ExactGd,
    Sgd,
    FiniteSumGd,
}

/// Iterates `w₀ … w_N` of one inner loop.
#[derive(Clone, Debug)]
pub struct InnerPath {
    pub iterates: Vec<Vector>,
    pub alpha: f64,
    /// The N gradient batches, present for SGD paths only.
    pub batches: Option<Vec<SampleBatch>>,
    pub mode: PathMode,
}

impl InnerPath {
    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn last(&self) -> &Vector {
        self.iterates.last().expect("paths are never empty")
    }

    /// One CSV row per iterate: `j, w_0, …, w_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let d = self.iterates[0].len();
        let mut header = vec!["j".to_string()];
        header.extend((0..d).map(|i| format!("w_{i}")));
        wtr.write_record(&header)?;
        for (j, w) in self.iterates.iter().enumerate() {
            let mut row = vec![j.to_string()];
            row.extend(w.iter().map(|x| x.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<inner path csv>", e))?;
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::param("alpha", format!("must be finite and nonnegative, got {alpha}")));
    }
    Ok(())
}

fn finite_or(w: &Vector, step: usize) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

fn descend(
    task: &Task,
    w: &Vector,
    alpha: f64,
    n: usize,
    mut grad: impl FnMut(usize, &Vector) -> Result<Vector>,
) -> Result<Vec<Vector>> {
    task.check(w)?;
    check_alpha(alpha)?;
    let mut iterates = Vec::with_capacity(n + 1);
    iterates.push(w.clone());
    for j in 0..n {
        let g = grad(j, &iterates[j])?;
        let next = &iterates[j] - g * alpha;
        finite_or(&next, j + 1)?;
        iterates.push(next);
    }
    Ok(iterates)
}

/// `N` steps of gradient descent on the task's inner loss.
pub fn inner_gd(task: &Task, w: &Vector, alpha: f64, n: usize) -> Result<InnerPath> {
    let iterates = descend(task, w, alpha, n, |_, x| task.grad(x))?;
    Ok(InnerPath {
        iterates,
        alpha,
        batches: None,
        mode: PathMode::ExactGd,
    })
}

/// `N` SGD steps with fresh batches of size `s`.
///
/// Step `j` uses the batch drawn from `stream.step(j).role(Role::Support)`.
pub fn inner_sgd(
    task: &Task,
    w: &Vector,
    alpha: f64,
    n: usize,
    s: usize,
    stream: &Stream,
) -> Result<InnerPath> {
    if task.case() != Case::Resampling {
        return Err(Error::WrongCase {
            op: "inner_sgd",
            case: "finite-sum",
        });
    }
    if s == 0 {
        return Err(Error::param("S", "must be at least 1"));
    }
    let mut batches = Vec::with_capacity(n);
    let iterates = descend(task, w, alpha, n, |j, x| {
        let batch = task.sample_batch(s, &stream.step(j).role(Role::Support))?;
        let g = task.stoch_grad(x, &batch)?;
        batches.push(batch);
        Ok(g)
    })?;
    Ok(InnerPath {
        iterates,
        alpha,
        batches: Some(batches),
        mode: PathMode::Sgd,
    })
}

/// `N` full-gradient steps on the support loss of a finite-sum task.
pub fn inner_gd_finite(task: &Task, w: &Vector, alpha: f64, n: usize) -> Result<InnerPath> {
    if task.case() != Case::FiniteSum {
        return Err(Error::WrongCase {
            op: "inner_gd_finite",
            case: "resampling",
        });
    }
    let iterates = descend(task, w, alpha, n, |_, x| task.grad(x))?;
    Ok(InnerPath {
        iterates,
        alpha,
        batches: None,
        mode: PathMode::FiniteSumGd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::task::{LeastSquares, NoiseModel, TrigSpec};

    fn scalar_quadratic(a: f64, b: f64) -> Task {
        Task::quadratic(
            Matrix::from_element(1, 1, a),
            Vector::from_element(1, b),
            NoiseModel::ZERO,
        )
        .unwrap()
    }

    #[test]
    fn hand_recursion() {
        let t = scalar_quadratic(2.0, 0.0);
        let p = inner_gd(&t, &Vector::from_element(1, 1.0), 0.1, 2).unwrap();
        let xs: Vec<f64> = p.iterates.iter().map(|v| v[0]).collect();
        assert_eq!(xs.len(), 3);
        assert!((xs[1] - 0.8).abs() < 1e-15 && (xs[2] - 0.64).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_and_zero_stepsize() {
        let t = scalar_quadratic(2.0, 1.0);
        let w = Vector::from_element(1, 0.3);
        assert_eq!(inner_gd(&t, &w, 0.5, 0).unwrap().iterates, vec![w.clone()]);
        let p = inner_gd(&t, &w, 0.0, 4).unwrap();
        assert!(p.iterates.iter().all(|x| x == &w));
    }

    #[test]
    fn divergence_reports_step() {
        let t = scalar_quadratic(1.0, 0.0);
        let err = inner_gd(&t, &Vector::from_element(1, 1.0), 1e300, 5).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 2 }), "{err:?}");
    }

    #[test]
    fn sgd_is_replayable_and_noiseless_matches_gd() {
        let noisy = TrigSpec {
            d: 3,
            num_tasks: 1,
            c_max: 1.0,
            a_max: 1.0,
            lambda: 0.2,
            radius: 2.0,
            sigma_g: 0.3,
            sigma_h: 0.1,
            seed: 5,
        };
        let dist = noisy.build().unwrap();
        let w = Vector::from_column_slice(&[0.1, -0.2, 0.3]);
        let s = Stream::root(3);
        let a = inner_sgd(dist.task(0), &w, 0.05, 4, 7, &s).unwrap();
        let b = inner_sgd(dist.task(0), &w, 0.05, 4, 7, &s).unwrap();
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(a.batches.as_ref().unwrap().len(), 4);

        let clean = TrigSpec {
            sigma_g: 0.0,
            sigma_h: 0.0,
            ..noisy
        }
        .build()
        .unwrap();
        let sgd = inner_sgd(clean.task(0), &w, 0.05, 4, 7, &s).unwrap();
        let gd = inner_gd(clean.task(0), &w, 0.05, 4).unwrap();
        assert_eq!(sgd.iterates, gd.iterates);
    }

    #[test]
    fn case_checks() {
        let data = LeastSquares::new(vec![Vector::from_element(1, 1.0)], vec![0.0]).unwrap();
        let fs = Task::finite_sum(data.clone(), data).unwrap();
        let w = Vector::from_element(1, 1.0);
        assert!(inner_sgd(&fs, &w, 0.1, 2, 1, &Stream::root(0)).is_err());
        assert!(inner_gd_finite(&scalar_quadratic(1.0, 0.0), &w, 0.1, 2).is_err());
        let p = inner_gd_finite(&fs, &w, 0.1, 3).unwrap();
        for (j, x) in p.iterates.iter().enumerate() {
            assert!((x[0] - 0.8f64.powi(j as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_iterate() {
        let t = scalar_quadratic(2.0, 0.0);
        let p = inner_gd(&t, &Vector::from_element(1, 1.0), 0.1, 2).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("j,w_0\n0,1\n"));
    }
}

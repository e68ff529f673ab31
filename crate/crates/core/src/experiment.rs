//! File-driven experiments: configuration, overrides, commands and outputs.
//!
//! An experiment is one TOML document with optional sections
//! `[family]` (a generator) or a top-level `family_path`, `[run]`,
//! `[verify]` and `[sweep]`. Every command writes `resolved.toml` and
//! `family.json` into the output directory; rerunning from
//! `resolved.toml` reproduces every output byte for byte.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{FamilySpec, TaskDistribution};
use crate::theory::TheoreticalConstants;
use crate::trainer::{run_on_current_pool, thread_pool, RunConfig, RunMetrics};
use crate::verify::{run_suite, write_reports_csv, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Sweep axes; every present axis must be non-empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Family document, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    MakeFamily,
    Run,
    Verify,
    Constants,
    Sweep,
}

/// One CLI invocation.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    /// `dotted.key=value`, applied in order after the file is read.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub allow_unsafe_alpha: bool,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `key.path=value` to a raw document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

fn set_if_table(doc: &mut toml::Table, section: &str, key: &str, value: toml::Value) {
    if let Some(t) = doc.get_mut(section).and_then(|v| v.as_table_mut()) {
        t.insert(key.into(), value);
    }
}

/// Reads a config file and applies overrides and flags. Unknown keys,
/// including mistyped overrides, are configuration errors.
pub fn load_config(inv: &Invocation) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&inv.config_path).map_err(|e| Error::io(&inv.config_path, e))?;
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", inv.config_path.display())))?;
    for o in &inv.overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = inv.seed {
        let v = toml::Value::Integer(seed as i64);
        set_if_table(&mut doc, "run", "seed", v.clone());
        set_if_table(&mut doc, "verify", "seed", v);
    }
    if inv.allow_unsafe_alpha {
        set_if_table(&mut doc, "run", "allow_unsafe_alpha", toml::Value::Boolean(true));
    }
    let mut cfg: ExperimentConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if let Some(p) = &cfg.family_path {
        if p.is_relative() {
            let base = inv.config_path.parent().unwrap_or(Path::new("."));
            cfg.family_path = Some(base.join(p));
        }
    }
    Ok(cfg)
}

/// Builds or loads the task family.
pub fn resolve_family(cfg: &ExperimentConfig) -> Result<TaskDistribution> {
    match (&cfg.family_path, &cfg.family) {
        (Some(_), Some(_)) => Err(Error::Config(
            "give either `family_path` or a `[family]` section, not both".into(),
        )),
        (Some(p), None) => TaskDistribution::load(p),
        (None, Some(spec)) => spec.build(),
        (None, None) => Err(Error::Config(
            "no family: set `family_path` or add a `[family]` section".into(),
        )),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `family.json` and a `resolved.toml` that points at it.
fn persist_inputs(cfg: &ExperimentConfig, dist: &TaskDistribution, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    dist.save(&out.join("family.json"))?;
    let resolved = ExperimentConfig {
        family_path: Some(PathBuf::from("family.json")),
        family: None,
        ..cfg.clone()
    };
    let text = toml::to_string(&resolved).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("resolved.toml"), &text)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

/// Runs one invocation, reporting to `log`, and returns the exit status.
pub fn execute(inv: &Invocation, log: &mut dyn Write) -> i32 {
    let result = load_config(inv).and_then(|cfg| match inv.command {
        Command::MakeFamily => cmd_make_family(&cfg, inv, log),
        Command::Run => cmd_run(&cfg, inv, log),
        Command::Verify => cmd_verify(&cfg, inv, log),
        Command::Constants => cmd_constants(&cfg, inv, log),
        Command::Sweep => cmd_sweep(&cfg, inv, log),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            exit_code(&e)
        }
    }
}

fn say(log: &mut dyn Write, text: &str) -> Result<()> {
    log.write_all(text.as_bytes()).map_err(|e| Error::io("<log>", e))
}

pub fn cmd_make_family(cfg: &ExperimentConfig, inv: &Invocation, log: &mut dyn Write) -> Result<i32> {
    let dist = resolve_family(cfg)?;
    persist_inputs(cfg, &dist, &inv.out_dir)?;
    let p = dist.profile();
    say(
        log,
        &format!(
            "family {:?} ({}), {} tasks, d = {}, R = {}\nL = {}, rho = {}, sigma = {}, sigma_g = {}, sigma_H = {}, b = {}, b_tilde = {}\n",
            dist.family(),
            dist.case().name(),
            dist.len(),
            dist.dim(),
            dist.radius(),
            p.l,
            p.rho,
            p.sigma,
            p.sigma_g,
            p.sigma_h,
            p.b,
            p.b_tilde
        ),
    )?;
    Ok(EXIT_OK)
}

fn need_run(cfg: &ExperimentConfig) -> Result<&RunConfig> {
    cfg.run
        .as_ref()
        .ok_or_else(|| Error::Config("missing `[run]` section".into()))
}

fn write_run_outputs(m: &RunMetrics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("metrics.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    m.write_csv(std::io::BufWriter::new(file))?;
    let mut summary = m.summary_json()?;
    summary.push('\n');
    write_file(&dir.join("summary.json"), &summary)
}

pub fn cmd_run(cfg: &ExperimentConfig, inv: &Invocation, log: &mut dyn Write) -> Result<i32> {
    let run = need_run(cfg)?;
    let dist = resolve_family(cfg)?;
    run.validate(&dist)?;
    persist_inputs(cfg, &dist, &inv.out_dir)?;
    let pool = thread_pool(inv.workers)?;
    let m = pool.install(|| run_on_current_pool(run, &dist))?;
    write_run_outputs(&m, &inv.out_dir)?;
    let s = &m.summary;
    let mut text = format!("{} rows, alpha = {}\n", s.rows, s.alpha);
    if let (Some(a), Some(b)) = (s.initial_grad_norm, s.mean_grad_norm_zeta) {
        let _ = writeln!(text, "grad norm: initial {a:.6e}, E over zeta {b:.6e}");
    }
    if let Some(r) = s.theorem_rhs {
        let _ = writeln!(text, "theorem bound: {r:.6e}");
    }
    for w in &s.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    say(log, &text)?;
    if let Some(k) = s.diverged_at {
        if !run.allow_unsafe_alpha {
            say(log, &format!("diverged at outer step {k}\n"))?;
            return Ok(EXIT_DIVERGED);
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(cfg: &ExperimentConfig, inv: &Invocation, log: &mut dyn Write) -> Result<i32> {
    let vcfg = cfg
        .verify
        .as_ref()
        .ok_or_else(|| Error::Config("missing `[verify]` section".into()))?;
    let dist = resolve_family(cfg)?;
    persist_inputs(cfg, &dist, &inv.out_dir)?;
    let pool = thread_pool(inv.workers)?;
    let outcome = pool.install(|| run_suite(&dist, vcfg))?;
    let path = inv.out_dir.join("reports.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_reports_csv(&outcome.reports, std::io::BufWriter::new(file))?;
    let mut summary = serde_json::to_string_pretty(&outcome)?;
    summary.push('\n');
    write_file(&inv.out_dir.join("verify_summary.json"), &summary)?;

    let mut text = String::new();
    for r in &outcome.reports {
        let _ = writeln!(
            text,
            "[{}] {:<32} empirical {:.4e} (se {:.1e}) bound {:.4e} slack {:.3}",
            if r.satisfied { "PASS" } else { "FAIL" },
            r.name,
            r.empirical,
            r.std_err,
            r.bound,
            r.slack_ratio
        );
    }
    for n in &outcome.notes {
        let _ = writeln!(text, "note: {n}");
    }
    say(log, &text)?;
    Ok(if outcome.all_satisfied() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

pub fn cmd_constants(cfg: &ExperimentConfig, inv: &Invocation, log: &mut dyn Write) -> Result<i32> {
    let run = need_run(cfg)?;
    let dist = resolve_family(cfg)?;
    let alpha = run.resolved_alpha(&dist)?;
    let p = dist.profile();
    let constants = match run.case {
        crate::task::Case::Resampling => TheoreticalConstants::Resampling(
            crate::theory::resampling_constants(p, alpha, run.n, run.c_beta, run.s, run.d, run.t, run.b)?,
        ),
        crate::task::Case::FiniteSum => TheoreticalConstants::FiniteSum(
            crate::theory::finite_sum_constants(p, alpha, run.n, run.c_beta, run.b)?,
        ),
    };
    persist_inputs(cfg, &dist, &inv.out_dir)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        constants: &'a TheoreticalConstants,
        simplified: Vec<crate::theory::SimplifiedBound>,
    }
    let doc = Doc {
        constants: &constants,
        simplified: constants.simplified_checks(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_file(&inv.out_dir.join("constants.json"), &text)?;
    say(log, &text)?;
    Ok(EXIT_OK)
}


/// Cartesian product of the axes over a base run config; an empty grid is
/// an error.
pub fn expand_grid(base: &RunConfig, axes: &SweepAxes) -> Result<Vec<RunConfig>> {
    let mut grid = vec![base.clone()];
    let mut any = false;
    macro_rules! axis {
        ($field:ident, $name:literal, $apply:expr) => {
            if let Some(values) = &axes.$field {
                if values.is_empty() {
                    return Err(Error::Config(format!("sweep axis `{}` is empty", $name)));
                }
                any = true;
                let apply = $apply;
                grid = grid
                    .iter()
                    .flat_map(|c| values.iter().map(move |v| apply(c.clone(), *v)))
                    .collect();
            }
        };
    }
    axis!(k, "k", |mut c: RunConfig, v| {
        c.k = v;
        c
    });
    axis!(s, "s", |mut c: RunConfig, v| {
        c.s = v;
        c
    });
    axis!(b, "b", |mut c: RunConfig, v| {
        c.b = v;
        c
    });
    axis!(t, "t", |mut c: RunConfig, v| {
        c.t = v;
        c
    });
    axis!(d, "d", |mut c: RunConfig, v| {
        c.d = v;
        c
    });
    axis!(n, "n", |mut c: RunConfig, v| {
        c.n = v;
        c
    });
    axis!(alpha, "alpha", |mut c: RunConfig, v| {
        c.alpha = Some(v);
        c
    });
    if !any {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    Ok(grid)
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub k: usize,
    pub n: usize,
    pub b: usize,
    pub s: usize,
    pub d: usize,
    pub t: usize,
    pub alpha: f64,
    pub mean_grad_norm_zeta: Option<f64>,
    pub initial_grad_norm: Option<f64>,
    pub min_grad_norm: Option<f64>,
    pub theorem_rhs: Option<f64>,
    pub grad_evals_per_iter: Option<u64>,
    pub hess_evals_per_iter: Option<u64>,
    pub diverged: bool,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, inv: &Invocation, log: &mut dyn Write) -> Result<i32> {
    let base = need_run(cfg)?;
    let axes = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep grid is empty: missing `[sweep]` section".into()))?;
    let grid = expand_grid(base, axes)?;
    let dist = resolve_family(cfg)?;
    for c in &grid {
        c.validate(&dist)?;
    }
    persist_inputs(cfg, &dist, &inv.out_dir)?;
    let pool = thread_pool(inv.workers)?;
    let results: Vec<Result<RunMetrics>> =
        pool.install(|| grid.par_iter().map(|c| run_on_current_pool(c, &dist)).collect());
    let mut rows = Vec::with_capacity(grid.len());
    let mut diverged = false;
    for (i, (c, m)) in grid.iter().zip(results).enumerate() {
        let m = m?;
        write_run_outputs(&m, &inv.out_dir.join("points").join(i.to_string()))?;
        let s = &m.summary;
        diverged |= s.diverged_at.is_some();
        rows.push(SweepRow {
            point: i,
            k: c.k,
            n: c.n,
            b: c.b,
            s: c.s,
            d: c.d,
            t: c.t,
            alpha: s.alpha,
            mean_grad_norm_zeta: s.mean_grad_norm_zeta,
            initial_grad_norm: s.initial_grad_norm,
            min_grad_norm: s.min_grad_norm,
            theorem_rhs: s.theorem_rhs.filter(|x| x.is_finite()),
            grad_evals_per_iter: m.rows.first().map(|r| r.grad_evals),
            hess_evals_per_iter: m.rows.first().map(|r| r.hess_evals),
            diverged: s.diverged_at.is_some(),
        });
    }
    let path = inv.out_dir.join("sweep.csv");
    let mut wtr = csv::Writer::from_path(&path)?;
    for r in &rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(&path, e))?;
    say(log, &format!("{} grid points written to {}\n", rows.len(), path.display()))?;
    if diverged && !base.allow_unsafe_alpha {
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}

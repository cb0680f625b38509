//! Problem-file loading.
//!
//! A problem file is a line-oriented sectioned text format:
//!
//! ```text
//! # comment
//! [space]
//! lo = 0.1
//! hi = 5
//!
//! [model1]
//! mean  = p1*x + p2*x/(x + p3)
//! theta = 1, 1, 1
//!
//! [model2]
//! mean = p1*x/(x + p2)
//! box  = 0.1:100, 0.1:100
//!
//! [criterion]
//! kind = SKL_A
//!
//! [density1]
//! kind      = truncated_lognormal
//! variance  = 0.1
//! quantiles = 0.0001, 0.9999
//! ```
//!
//! Sections `[space]`, `[model1]`, `[model2]`, and `[criterion]` are
//! mandatory. `[density1]`/`[density2]` must be present exactly when the
//! criterion uses them (`T` — neither; `KL` — both; `KLNORMAL` and `SKL_B` —
//! density2 only; `SKL_A` — density1 only). `[optimizer]` and `[solver]`
//! override individual defaults of [`OptimizerConfig`] and [`SolverConfig`].
//!
//! `#` starts a comment (full-line or trailing). Keys and section names are
//! case-insensitive; values keep their spelling. Unknown sections, unknown
//! keys, and duplicates are rejected — every diagnostic carries the 1-based
//! line number and the `section.key` it refers to.

use std::path::Path;

use crate::criteria::{CriterionKind, Problem};
use crate::error::{Error, Result};
use crate::expr::MeanFn;
use crate::lambda::SolverConfig;
use crate::models::{DensityFamily, DensityKind, VarianceSpec};
use crate::optimizer::OptimizerConfig;

/// A fully parsed problem file.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub problem: Problem,
    pub optimizer: OptimizerConfig,
}

/// Reads and parses a problem file.
pub fn load(path: &Path) -> Result<ProblemConfig> {
    parse_str(&std::fs::read_to_string(path)?)
}

fn err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { line, field: field.into(), message: message.into() }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
    used: bool,
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn field(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let e = self.entries.iter_mut().find(|e| e.key == key)?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    fn require(&mut self, key: &str) -> Result<(usize, String)> {
        let field = self.field(key);
        let line = self.line;
        self.take(key).ok_or_else(|| err(line, field, "missing required key"))
    }
}

fn grab<'a>(sections: &'a mut [Section], name: &str) -> Option<&'a mut Section> {
    let idx = sections.iter().position(|s| s.name == name)?;
    Some(&mut sections[idx])
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let s = stripped.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            if name.is_empty() {
                return Err(err(line, "section", "empty section name"));
            }
            if sections.iter().any(|sec| sec.name == name) {
                return Err(err(line, name, "duplicate section"));
            }
            sections.push(Section { name, line, entries: Vec::new() });
            continue;
        }
        let Some(eq) = s.find('=') else {
            return Err(err(line, "syntax", "expected `[section]` or `key = value`"));
        };
        let key = s[..eq].trim().to_ascii_lowercase();
        let value = s[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(err(line, "syntax", "empty key"));
        }
        let Some(sec) = sections.last_mut() else {
            return Err(err(line, key, "key before any [section] header"));
        };
        if sec.entries.iter().any(|e| e.key == key) {
            return Err(err(line, sec.field(&key), "duplicate key"));
        }
        sec.entries.push(Entry { line, key, value, used: false });
    }
    Ok(sections)
}

fn f64_of(line: usize, field: &str, s: &str) -> Result<f64> {
    let v: f64 =
        s.parse().map_err(|_| err(line, field, format!("expected a number, got `{s}`")))?;
    if !v.is_finite() {
        return Err(err(line, field, "number must be finite"));
    }
    Ok(v)
}

fn usize_of(line: usize, field: &str, s: &str) -> Result<usize> {
    s.parse().map_err(|_| err(line, field, format!("expected a non-negative integer, got `{s}`")))
}

fn u64_of(line: usize, field: &str, s: &str) -> Result<u64> {
    s.parse().map_err(|_| err(line, field, format!("expected a non-negative integer, got `{s}`")))
}

fn f64_list_of(line: usize, field: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|part| f64_of(line, field, part.trim())).collect()
}

fn box_of(line: usize, field: &str, s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            let Some((a, b)) = part.split_once(':') else {
                return Err(err(line, field, format!("expected `lo:hi`, got `{part}`")));
            };
            let lo = f64_of(line, field, a.trim())?;
            let hi = f64_of(line, field, b.trim())?;
            if !(lo < hi) {
                return Err(err(line, field, format!("interval needs lo < hi, got `{part}`")));
            }
            Ok((lo, hi))
        })
        .collect()
}

fn mean_of(line: usize, field: &str, s: &str) -> Result<MeanFn> {
    MeanFn::parse(s).map_err(|e| err(line, field, e.to_string()))
}

fn variance_of(line: usize, field: &str, s: &str, max_params: usize) -> Result<VarianceSpec> {
    if let Ok(v) = s.parse::<f64>() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(err(line, field, format!("variance must be positive, got `{s}`")));
        }
        return Ok(VarianceSpec::Const(v));
    }
    let f = mean_of(line, field, s)?;
    if f.n_params() > max_params {
        return Err(err(
            line,
            field,
            format!(
                "variance expression uses p{} but its model has only {} parameter(s)",
                f.n_params(),
                max_params
            ),
        ));
    }
    Ok(VarianceSpec::Expr(f))
}

fn density_of(sec: &mut Section, max_params: usize) -> Result<DensityFamily> {
    let (kline, kval) = sec.require("kind")?;
    let kfield = sec.field("kind");
    let kind = match kval.to_ascii_lowercase().as_str() {
        "normal" => DensityKind::Normal,
        "truncated_normal" => {
            let (l, v) = sec.require("half_width")?;
            let hw = f64_of(l, &sec.field("half_width"), &v)?;
            if !(hw > 0.0) {
                return Err(err(l, sec.field("half_width"), "half-width must be positive"));
            }
            DensityKind::TruncatedNormal { half_width: hw }
        }
        "truncated_lognormal" => {
            let (q_lo, q_hi) = match sec.take("quantiles") {
                Some((l, v)) => {
                    let f = sec.field("quantiles");
                    let qs = f64_list_of(l, &f, &v)?;
                    if qs.len() != 2 {
                        return Err(err(l, f, "expected exactly two quantiles `q_lo, q_hi`"));
                    }
                    if !(qs[0] > 0.0 && qs[1] < 1.0 && qs[0] < qs[1]) {
                        return Err(err(l, f, "quantiles must satisfy 0 < q_lo < q_hi < 1"));
                    }
                    (qs[0], qs[1])
                }
                None => (1e-4, 0.9999),
            };
            DensityKind::TruncatedLognormal { q_lo, q_hi }
        }
        other => {
            return Err(err(
                kline,
                kfield,
                format!(
                "unknown density kind `{other}` (normal, truncated_normal, truncated_lognormal)"
            ),
            ))
        }
    };
    let (vline, vval) = sec.require("variance")?;
    let variance = variance_of(vline, &sec.field("variance"), &vval, max_params)?;
    Ok(DensityFamily { kind, variance })
}

/// Parses the text of a problem file.
pub fn parse_str(text: &str) -> Result<ProblemConfig> {
    let mut sections = split_sections(text)?;
    let known =
        ["space", "model1", "model2", "criterion", "density1", "density2", "optimizer", "solver"];
    for sec in &sections {
        if !known.contains(&sec.name.as_str()) {
            return Err(err(sec.line, &sec.name, "unknown section"));
        }
    }
    let space =
        grab(&mut sections, "space").ok_or_else(|| err(0, "space", "missing required section"))?;
    let (l_lo, v_lo) = space.require("lo")?;
    let x_lo = f64_of(l_lo, &space.field("lo"), &v_lo)?;
    let (l_hi, v_hi) = space.require("hi")?;
    let x_hi = f64_of(l_hi, &space.field("hi"), &v_hi)?;
    if !(x_lo < x_hi) {
        return Err(err(
            l_hi,
            "space.hi",
            format!("design space needs lo < hi, got [{x_lo}, {x_hi}]"),
        ));
    }

    let m1 = grab(&mut sections, "model1")
        .ok_or_else(|| err(0, "model1", "missing required section"))?;
    let (l_mean1, v_mean1) = m1.require("mean")?;
    let mean1 = mean_of(l_mean1, &m1.field("mean"), &v_mean1)?;
    let (l_th, v_th) = m1.require("theta")?;
    let theta1 = f64_list_of(l_th, &m1.field("theta"), &v_th)?;
    if theta1.len() != mean1.n_params() {
        return Err(err(
            l_th,
            "model1.theta",
            format!(
                "mean uses {} parameter(s) but {} value(s) were given",
                mean1.n_params(),
                theta1.len()
            ),
        ));
    }

    let m2 = grab(&mut sections, "model2")
        .ok_or_else(|| err(0, "model2", "missing required section"))?;
    let (l_mean2, v_mean2) = m2.require("mean")?;
    let mean2 = mean_of(l_mean2, &m2.field("mean"), &v_mean2)?;
    let (l_box, v_box) = m2.require("box")?;
    let theta2_box = box_of(l_box, &m2.field("box"), &v_box)?;
    if theta2_box.len() != mean2.n_params() {
        return Err(err(
            l_box,
            "model2.box",
            format!(
                "mean uses {} parameter(s) but the box has {} interval(s)",
                mean2.n_params(),
                theta2_box.len()
            ),
        ));
    }

    let crit_sec = grab(&mut sections, "criterion")
        .ok_or_else(|| err(0, "criterion", "missing required section"))?;
    let (l_kind, v_kind) = crit_sec.require("kind")?;
    let crit_line = l_kind;
    let criterion = CriterionKind::from_tag(&v_kind).ok_or_else(|| {
        err(
            l_kind,
            "criterion.kind",
            format!("unknown criterion `{v_kind}` (T, KL, KLNORMAL, SKL_A, SKL_B)"),
        )
    })?;

    let density1 = match grab(&mut sections, "density1") {
        Some(sec) => Some(density_of(sec, theta1.len())?),
        None => None,
    };
    let density2 = match grab(&mut sections, "density2") {
        Some(sec) => Some(density_of(sec, theta2_box.len())?),
        None => None,
    };

    let mut solver = SolverConfig::default();
    if let Some(sec) = grab(&mut sections, "solver") {
        if let Some((l, v)) = sec.take("delta") {
            solver.delta = f64_of(l, &sec.field("delta"), &v)?;
            if !(solver.delta > 0.0 && solver.delta < 1.0) {
                return Err(err(l, "solver.delta", "delta must lie in (0, 1)"));
            }
        }
        if let Some((l, v)) = sec.take("beta") {
            solver.beta = f64_of(l, &sec.field("beta"), &v)?;
            if !(solver.beta > 0.0) {
                return Err(err(l, "solver.beta", "beta must be positive"));
            }
        }
        if let Some((l, v)) = sec.take("max_iter") {
            solver.max_iter = usize_of(l, &sec.field("max_iter"), &v)?;
        }
    }

    let mut optimizer = OptimizerConfig::default();
    if let Some(sec) = grab(&mut sections, "optimizer") {
        if let Some((l, v)) = sec.take("grid_n") {
            optimizer.grid_n = usize_of(l, &sec.field("grid_n"), &v)?;
            if optimizer.grid_n < 2 {
                return Err(err(l, "optimizer.grid_n", "grid needs at least 2 points"));
            }
        }
        if let Some((l, v)) = sec.take("max_outer_iters") {
            optimizer.max_outer_iters = usize_of(l, &sec.field("max_outer_iters"), &v)?;
        }
        if let Some((l, v)) = sec.take("stop_tol") {
            optimizer.stop_tol = f64_of(l, &sec.field("stop_tol"), &v)?;
        }
        if let Some((l, v)) = sec.take("merge_tol_rel") {
            optimizer.merge_tol_rel = f64_of(l, &sec.field("merge_tol_rel"), &v)?;
        }
        if let Some((l, v)) = sec.take("weight_floor") {
            optimizer.weight_floor = f64_of(l, &sec.field("weight_floor"), &v)?;
        }
        if let Some((l, v)) = sec.take("seed") {
            optimizer.seed = u64_of(l, &sec.field("seed"), &v)?;
        }
        if let Some((l, v)) = sec.take("inner_starts") {
            optimizer.inner_starts = usize_of(l, &sec.field("inner_starts"), &v)?;
            if optimizer.inner_starts == 0 {
                return Err(err(l, "optimizer.inner_starts", "need at least one start"));
            }
        }
        if let Some((l, v)) = sec.take("heavy_every") {
            optimizer.heavy_every = usize_of(l, &sec.field("heavy_every"), &v)?;
            if optimizer.heavy_every == 0 {
                return Err(err(l, "optimizer.heavy_every", "cadence must be at least 1"));
            }
        }
        if let Some((l, v)) = sec.take("polish_rounds") {
            optimizer.polish_rounds = usize_of(l, &sec.field("polish_rounds"), &v)?;
        }
        if let Some((l, v)) = sec.take("weight_steps") {
            optimizer.weight_steps = usize_of(l, &sec.field("weight_steps"), &v)?;
        }
    }

    for sec in &sections {
        for e in &sec.entries {
            if !e.used {
                return Err(err(e.line, sec.field(&e.key), "unknown key"));
            }
        }
    }

    let problem = Problem {
        x_lo,
        x_hi,
        mean1,
        theta1,
        mean2,
        theta2_box,
        criterion,
        density1,
        density2,
        solver,
    };
    problem.validate().map_err(|e| err(crit_line, "criterion", e.to_string()))?;
    Ok(ProblemConfig { problem, optimizer })
}

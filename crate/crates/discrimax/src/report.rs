//! Result documents: designs and solve outcomes as JSON, sensitivity grids
//! as CSV.
//!
//! A design document is the JSON object
//! `{"points": [...], "weights": [...]}` with optional `criterion`,
//! `value`, and `theta2_star` fields. Solve outcomes serialise to a
//! superset of that shape, so a solve's output file can be fed straight
//! back into the verify and efficiency commands.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::criteria::Design;
use crate::equivalence::SensitivityReport;
use crate::error::{Error, Result};
use crate::optimizer::SolveOutcome;

/// A design on disk (or in a literal): points, weights, and optional
/// provenance from the solve that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignDoc {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2_star: Option<Vec<f64>>,
}

impl DesignDoc {
    /// The bare design, validated for shape (lengths match, non-empty).
    pub fn design(&self) -> Result<Design> {
        if self.points.is_empty() {
            return Err(Error::Design("design has no support points".into()));
        }
        if self.points.len() != self.weights.len() {
            return Err(Error::Design(format!(
                "{} points but {} weights",
                self.points.len(),
                self.weights.len()
            )));
        }
        Ok(Design { points: self.points.clone(), weights: self.weights.clone() })
    }
}

/// Reads a design from a command-line argument: inline JSON when it starts
/// with `{`, an inline `x:w, x:w, ...` pair list when it contains `:`
/// before any path separator, otherwise a path to a JSON file.
pub fn design_arg(arg: &str) -> Result<DesignDoc> {
    let s = arg.trim();
    if s.starts_with('{') {
        return Ok(serde_json::from_str(s)?);
    }
    if looks_like_pairs(s) {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            let Some((x, w)) = part.split_once(':') else {
                return Err(Error::Design(format!("expected `x:w`, got `{part}`")));
            };
            let parse = |t: &str| -> Result<f64> {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Design(format!("expected a number, got `{}`", t.trim())))
            };
            points.push(parse(x)?);
            weights.push(parse(w)?);
        }
        return Ok(DesignDoc { points, weights, criterion: None, value: None, theta2_star: None });
    }
    let text = std::fs::read_to_string(Path::new(s))?;
    Ok(serde_json::from_str(&text)?)
}

fn looks_like_pairs(s: &str) -> bool {
    // A Windows drive or URL would also contain ':', but design files are
    // plain relative/absolute paths here; a colon that comes before any
    // path separator marks the literal form.
    match (s.find(':'), s.find('/'), s.find('\\')) {
        (None, _, _) => false,
        (Some(c), Some(sep), _) | (Some(c), None, Some(sep)) => c < sep,
        (Some(_), None, None) => true,
    }
}

/// Condensed optimiser trace: stage lengths and the final certificate gap.
#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub exchange_steps: usize,
    pub polish_steps: usize,
    pub final_value: f64,
    pub final_gap: f64,
}

/// The document written by the solve command.
#[derive(Debug, Clone, Serialize)]
pub struct SolveDoc {
    pub criterion: String,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub value: f64,
    pub theta2_star: Vec<f64>,
    pub verdict: String,
    pub max_violation: f64,
    pub efficiency_bound: f64,
    pub certified: bool,
    pub trace: TraceSummary,
    pub warnings: Vec<String>,
}

impl SolveDoc {
    /// Assembles the document from a solve outcome and its verification.
    pub fn new(out: &SolveOutcome, sens: &SensitivityReport) -> SolveDoc {
        let exchange_steps = out.trace.iter().filter(|t| t.phase == "exchange").count();
        let polish_steps = out.trace.iter().filter(|t| t.phase == "polish").count();
        let mut warnings: Vec<String> = out.warnings.iter().map(|w| w.to_string()).collect();
        warnings.extend(sens.warnings.iter().map(|w| w.to_string()));
        warnings.dedup();
        SolveDoc {
            criterion: out.report.kind.tag().to_string(),
            points: out.design.points.clone(),
            weights: out.design.weights.clone(),
            value: out.report.value,
            theta2_star: out.report.theta2_star.clone(),
            verdict: sens.verdict.to_string(),
            max_violation: sens.max_violation,
            efficiency_bound: sens.efficiency_bound,
            certified: out.certified,
            trace: TraceSummary {
                exchange_steps,
                polish_steps,
                final_value: out.report.value,
                final_gap: out.residual,
            },
            warnings,
        }
    }

    /// Pretty JSON with a trailing newline (the on-disk format).
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Serialises a design document as pretty JSON with a trailing newline.
pub fn design_json(doc: &DesignDoc) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

/// Writes a sensitivity grid as CSV: header `x,psi`, one row per grid
/// point, 17 significant digits.
pub fn write_sensitivity_csv(w: &mut impl Write, psi: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "x,psi")?;
    for &(x, p) in psi {
        writeln!(w, "{x:.16e},{p:.16e}")?;
    }
    Ok(())
}

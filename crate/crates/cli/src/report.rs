//! Structured gradient-audit report written by `gradcheck --report`.

use serde::Serialize;
use splatdiff::gradcheck::{ClassReport, GradReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub step: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub fault: Option<String>,
    pub scenes: Vec<SceneReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneReport {
    pub seed: u64,
    pub n_gaussians: usize,
    pub width: u32,
    pub height: u32,
    pub passed: bool,
    pub classes: Vec<ClassEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEntry {
    pub class: String,
    pub count: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    pub passed: bool,
    pub worst: Option<WorstEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstEntry {
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

impl From<&ClassReport> for ClassEntry {
    fn from(c: &ClassReport) -> Self {
        ClassEntry {
            class: c.class.name().to_string(),
            count: c.count,
            max_rel: c.max_rel,
            max_abs: c.max_abs,
            passed: c.passed,
            worst: c.worst.map(|w| WorstEntry {
                coordinate: w.coordinate.to_string(),
                analytic: w.analytic,
                numeric: w.numeric,
                abs_err: w.abs_err,
                rel_err: w.rel_err,
            }),
        }
    }
}

impl SceneReport {
    pub fn new(
        seed: u64,
        n_gaussians: usize,
        width: u32,
        height: u32,
        report: &GradReport,
    ) -> Self {
        SceneReport {
            seed,
            n_gaussians,
            width,
            height,
            passed: report.passed,
            classes: report.classes.iter().map(ClassEntry::from).collect(),
        }
    }
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        // NaN/inf become null
        let mut text = serde_json::to_string_pretty(self).expect("reports always serialize");
        text.push('\n');
        text
    }
}

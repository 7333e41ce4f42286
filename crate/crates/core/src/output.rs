//! CSV rendering. Floats carry 17 significant digits so that files round-trip
//! exactly and diff byte-for-byte between runs.

use std::fmt::Write;

use crate::bounds::{BoundReport, BoundValue};
use crate::experiments::{AdversarialRow, ConcentrationRow, GridResult, RankRow, RefineStage};

/// `x` in scientific notation with 17 significant digits.
pub fn float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn bound(b: BoundValue) -> String {
    float(b.or_infinity())
}

/// `alpha,mean_se,max_se,bound`, prefixed by `axis1` when the grid sweeps an axis.
pub fn bound_tightness_csv(g: &GridResult) -> String {
    let mut out = String::new();
    if g.axis.is_some() {
        out.push_str("axis1,");
    }
    out.push_str("alpha,mean_se,max_se,bound\n");
    for row in &g.rows {
        if let Some(v) = row.axis_value {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{},{},{}", row.alpha, float(row.mean_se), float(row.max_se), bound(row.bound));
    }
    out
}

/// `axis1,alpha,probability`.
pub fn phase_csv(g: &GridResult) -> String {
    let mut out = String::from("axis1,alpha,probability\n");
    for row in &g.rows {
        let _ = writeln!(out, "{},{},{}", row.axis_value.unwrap_or(0), row.alpha, float(row.success_probability));
    }
    out
}

/// `alpha,term_name,empirical_median,lemma_bound`.
pub fn concentration_csv(rows: &[ConcentrationRow]) -> String {
    let mut out = String::from("alpha,term_name,empirical_median,lemma_bound\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.alpha, r.term, float(r.median), float(r.bound));
    }
    out
}

/// `stage,se,stage_bound`, trials one after another.
pub fn refinement_csv(trials: &[Vec<RefineStage>]) -> String {
    let mut out = String::from("stage,se,stage_bound\n");
    for stages in trials {
        for s in stages {
            let _ = writeln!(out, "{},{},{}", s.stage, float(s.se), float(s.stage_bound));
        }
    }
    out
}

/// `alpha,trials,threshold_correct,gap_correct,delta,gap_condition`.
pub fn rank_csv(rows: &[RankRow]) -> String {
    let mut out = String::from("alpha,trials,threshold_correct,gap_correct,delta,gap_condition\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.alpha,
            r.trials,
            r.threshold_correct,
            r.gap_correct,
            float(r.delta),
            r.gap_condition
        );
    }
    out
}

/// `trial,alpha,se,deviation,floor`.
pub fn adversarial_csv(rows: &[AdversarialRow]) -> String {
    let mut out = String::from("trial,alpha,se,deviation,floor\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.trial, r.alpha, float(r.se), float(r.deviation), float(r.floor));
    }
    out
}

/// `key=value` lines for a bound evaluation.
pub fn bound_report_lines(report: &BoundReport) -> String {
    format!(
        "eps_bnd={}\neps_den={}\nse_bound={}\nfeasible={}\ncondition_slack={}\n",
        float(report.eps_bnd),
        float(report.eps_den),
        bound(report.se_bound),
        report.feasible,
        float(report.condition_slack)
    )
}

//! Benchmark orchestration: runs a method over a dataset slice across a κ
//! grid, aggregates per-example results into rows, and emits CSV/markdown
//! tables with fixed formatting.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::attacks::{
    ifgsm_eps_sweep, ifgsm_l2_attack, run_c_search, AttackConfig, AttackResult, SearchAttack,
};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::tensor::Tensor;

pub const CSV_HEADER: &str = "method,kappa,success_rate,mean_l2,mean_iters,n";

/// Attack selector for the harness. The numeric suffix in report names
/// ("Our1", "CW6", "L-BFGS2") is the number of c-search steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GradGuided { c_steps: usize },
    Cw { c_steps: usize },
    Lbfgs { c_steps: usize },
    Ifgsm,
}

impl Method {
    /// Accepts report names ("Our1", "CW6", "L-BFGS2", "I-FGSM") and bare
    /// method names ("our", "cw", "lbfgs", "ifgsm"), case-insensitively.
    pub fn parse(s: &str) -> Result<Method> {
        let lower = s.trim().to_ascii_lowercase();
        let take_steps = |rest: &str| -> Result<usize> {
            if rest.is_empty() {
                Ok(1)
            } else {
                rest.parse::<usize>().map_err(|_| {
                    Error::InvalidArgument(format!("bad c-steps suffix in method \"{s}\""))
                })
            }
        };
        if lower == "i-fgsm" || lower == "ifgsm" {
            return Ok(Method::Ifgsm);
        }
        if let Some(rest) = lower.strip_prefix("our") {
            return Ok(Method::GradGuided {
                c_steps: take_steps(rest)?,
            });
        }
        if let Some(rest) = lower.strip_prefix("cw") {
            return Ok(Method::Cw {
                c_steps: take_steps(rest)?,
            });
        }
        if let Some(rest) = lower.strip_prefix("l-bfgs").or(lower.strip_prefix("lbfgs")) {
            return Ok(Method::Lbfgs {
                c_steps: take_steps(rest)?,
            });
        }
        Err(Error::InvalidArgument(format!(
            "unknown method \"{s}\" (expected Our<k>, CW<k>, L-BFGS<k> or I-FGSM)"
        )))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::GradGuided { c_steps } => write!(f, "Our{c_steps}"),
            Method::Cw { c_steps } => write!(f, "CW{c_steps}"),
            Method::Lbfgs { c_steps } => write!(f, "L-BFGS{c_steps}"),
            Method::Ifgsm => write!(f, "I-FGSM"),
        }
    }
}

/// One line of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub kappa: f64,
    pub success_rate: f64,
    /// Mean L2 over successful attacks only; `None` when nothing succeeded.
    pub mean_l2_success: Option<f64>,
    /// Mean iteration count over all attacked examples, failures included.
    pub mean_iterations: f64,
    pub n_examples: usize,
}

/// Rows for one method across the κ grid, plus the exclusion audit trail.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<BenchRow>,
    /// Examples attacked per row (correctly classified ones).
    pub attacked: usize,
    /// Misclassified examples that were skipped.
    pub excluded: usize,
}

/// Fold per-example results into a row.
pub fn aggregate_results(method: &str, kappa: f64, results: &[AttackResult]) -> BenchRow {
    let n = results.len();
    let successes: Vec<&AttackResult> = results.iter().filter(|r| r.success).collect();
    let mean_l2_success = if successes.is_empty() {
        None
    } else {
        Some(successes.iter().map(|r| r.l2_distance).sum::<f64>() / successes.len() as f64)
    };
    let mean_iterations = results.iter().map(|r| r.iterations as f64).sum::<f64>() / n as f64;
    BenchRow {
        method: method.to_string(),
        kappa,
        success_rate: successes.len() as f64 / n as f64,
        mean_l2_success,
        mean_iterations,
        n_examples: n,
    }
}

/// Run one method on one example with the method's own c-steps count.
pub fn run_method(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
    method: Method,
) -> Result<AttackResult> {
    let with_steps = |c_steps: usize| AttackConfig {
        c_steps,
        ..cfg.clone()
    };
    match method {
        Method::GradGuided { c_steps } => {
            run_c_search(model, x, t, &with_steps(c_steps), SearchAttack::GradGuided)
        }
        Method::Cw { c_steps } => run_c_search(model, x, t, &with_steps(c_steps), SearchAttack::Cw),
        Method::Lbfgs { c_steps } => {
            run_c_search(model, x, t, &with_steps(c_steps), SearchAttack::Lbfgs)
        }
        Method::Ifgsm => ifgsm_l2_attack(model, x, t, cfg),
    }
}

/// Attack every correctly-classified example in `data` with its paired target
/// at each κ, producing one row per κ. Misclassified examples are excluded
/// from the statistics and reported in the `excluded` count. I-FGSM rows use
/// the ε doubling sweep over the whole slice, mirroring how that baseline is
/// tuned; per-example attacks fan out across a worker pool, and aggregation
/// order is fixed by example index.
pub fn evaluate_attack(
    model: &MlpModel,
    data: &LabeledDataset,
    targets: &[usize],
    method: Method,
    base_cfg: &AttackConfig,
    kappas: &[f64],
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("benchmark slice".into()));
    }
    if targets.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "{} examples but {} targets",
            data.len(),
            targets.len()
        )));
    }
    if kappas.is_empty() {
        return Err(Error::InvalidArgument("kappa grid is empty".into()));
    }

    let mut examples: Vec<(&Tensor, usize)> = Vec::new();
    let mut excluded = 0usize;
    for ((x, &label), &target) in data.examples.iter().zip(&data.labels).zip(targets) {
        if model.classify(x)? == label {
            examples.push((x, target));
        } else {
            excluded += 1;
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset(
            "no correctly classified examples to attack".into(),
        ));
    }

    let mut rows = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let cfg = AttackConfig {
            kappa,
            ..base_cfg.clone()
        };
        let results: Vec<AttackResult> = match method {
            Method::Ifgsm => {
                let xs: Vec<Tensor> = examples.iter().map(|(x, _)| (*x).clone()).collect();
                let ts: Vec<usize> = examples.iter().map(|(_, t)| *t).collect();
                ifgsm_eps_sweep(model, &xs, &ts, &cfg)?.results
            }
            _ => examples
                .par_iter()
                .map(|(x, t)| run_method(model, x, *t, &cfg, method))
                .collect::<Result<Vec<_>>>()?,
        };
        rows.push(aggregate_results(&method.to_string(), kappa, &results));
    }
    Ok(EvalReport {
        rows,
        attacked: examples.len(),
        excluded,
    })
}

fn sorted(rows: &[BenchRow]) -> Vec<&BenchRow> {
    let mut out: Vec<&BenchRow> = rows.iter().collect();
    out.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.kappa.total_cmp(&b.kappa))
    });
    out
}

/// CSV table with the fixed header and 6-decimal formatting, rows sorted by
/// (method, κ). A missing mean L2 renders as an empty field.
pub fn emit_table_csv(rows: &[BenchRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to emit".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in sorted(rows) {
        let l2 = row
            .mean_l2_success
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{:.6},{}\n",
            row.method, row.kappa, row.success_rate, l2, row.mean_iterations, row.n_examples
        ));
    }
    Ok(out)
}

pub fn write_table_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, emit_table_csv(rows)?)?)
}

/// Markdown rendering of the same table.
pub fn emit_table_markdown(rows: &[BenchRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to emit".into()));
    }
    let mut out = String::from("| method | kappa | success rate | mean L2 | mean iters | n |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for row in sorted(rows) {
        let l2 = row
            .mean_l2_success
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "NA".into());
        out.push_str(&format!(
            "| {} | {:.6} | {:.6} | {} | {:.6} | {} |\n",
            row.method, row.kappa, row.success_rate, l2, row.mean_iterations, row.n_examples
        ));
    }
    Ok(out)
}

/// Parse a table produced by `emit_table_csv`. Offsets in errors are line
/// numbers.
pub fn parse_table_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::parse(
                0,
                format!("bad CSV header {other:?}, expected \"{CSV_HEADER}\""),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                i + 1,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(i + 1, format!("bad {what} \"{s}\"")))
        };
        rows.push(BenchRow {
            method: fields[0].to_string(),
            kappa: num(fields[1], "kappa")?,
            success_rate: num(fields[2], "success_rate")?,
            mean_l2_success: if fields[3].is_empty() {
                None
            } else {
                Some(num(fields[3], "mean_l2")?)
            },
            mean_iterations: num(fields[4], "mean_iters")?,
            n_examples: fields[5]
                .parse::<usize>()
                .map_err(|_| Error::parse(i + 1, format!("bad n \"{}\"", fields[5])))?,
        });
    }
    Ok(rows)
}

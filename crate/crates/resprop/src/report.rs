//! CSV tables, JSON summaries, trace dumps and gnuplot scripts.

use std::io::Write;
use std::path::Path;

use resprop_core::analytic::{Prediction, PredictionTable};
use resprop_core::montecarlo::{ComparisonReport, ConvergenceRow, MeanCheck, Quantity};
use resprop_core::propagation::{backward, forward};
use resprop_core::sampling::{sample_inputs, sample_output_delta, sample_weights, SeedPlan};
use resprop_core::trainer::TrainResult;
use resprop_core::{Matrix, NetworkConfig};
use serde_json::{json, Value};

use crate::config::Experiment;

pub const RUN_COLUMNS: [&str; 8] = ["layer", "quantity", "empirical", "stderr", "predicted", "kind", "rel_err", "pass"];
pub const PREDICT_COLUMNS: [&str; 5] = ["layer", "quantity", "predicted", "kind", "formula"];
pub const PREDICT_LOG_COLUMNS: [&str; 5] = ["layer", "quantity", "log10_predicted", "kind", "formula"];
pub const TRAIN_COLUMNS: [&str; 7] =
    ["repeat", "step", "loss", "grad_norm_min", "grad_norm_max", "grad_norm_mean", "diverged"];
pub const CONVERGENCE_COLUMNS: [&str; 5] = ["batch_size", "ratio", "stderr", "reference", "deviation"];

/// Largest `depth * width * batch` accepted by [`trace_dump`].
pub const TRACE_DUMP_LIMIT: usize = 100_000;

/// Shortest round-trip form.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Rounded to 15 significant digits, so closed forms evaluated through
/// logarithms print as the integers they are.
pub fn fmt_predicted(v: f64) -> String {
    if !v.is_finite() || v == 0.0 {
        return fmt_num(v);
    }
    let rounded: f64 = format!("{v:.14e}").parse().unwrap_or(v);
    fmt_num(rounded)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn finish<W: Write>(mut wtr: csv::Writer<W>) -> std::io::Result<()> {
    wtr.flush()
}

fn io_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn write_run_csv<W: Write>(w: W, report: &ComparisonReport) -> std::io::Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(RUN_COLUMNS).map_err(io_err)?;
    for r in &report.rows {
        wtr.write_record([
            r.layer.to_string(),
            r.quantity.name().to_string(),
            fmt_num(r.empirical),
            fmt_num(r.stderr),
            fmt_predicted(r.predicted),
            r.kind.name().to_string(),
            fmt_num(r.rel_err),
            r.pass.to_string(),
        ])
        .map_err(io_err)?;
    }
    finish(wtr)
}

fn prediction_slots(table: &PredictionTable) -> Vec<(usize, Quantity, Prediction)> {
    let mut out = Vec::new();
    for row in &table.rows {
        for (q, p) in [
            (Quantity::Z, row.var_z),
            (Quantity::U, row.var_u),
            (Quantity::DeltaZ, row.var_delta_z),
            (Quantity::Delta, row.var_delta),
            (Quantity::Grad, row.var_grad),
            (Quantity::SigmaSq, row.sigma_sq),
        ] {
            if let Some(p) = p {
                out.push((row.layer, q, p));
            }
        }
    }
    out
}

pub fn write_predict_csv<W: Write>(w: W, table: &PredictionTable, log_space: bool) -> std::io::Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(if log_space { PREDICT_LOG_COLUMNS } else { PREDICT_COLUMNS }).map_err(io_err)?;
    for (layer, q, p) in prediction_slots(table) {
        let value = if log_space { fmt_predicted(p.value.log10_abs()) } else { fmt_predicted(p.value.value()) };
        wtr.write_record([layer.to_string(), q.name().to_string(), value, p.kind.name().to_string(), p.formula.to_string()])
            .map_err(io_err)?;
    }
    finish(wtr)
}

/// One row per finite step; a diverged repeat gets a final row at the step
/// that failed with `diverged` set and empty measurements.
pub fn write_train_csv<W: Write>(w: W, result: &TrainResult) -> std::io::Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(TRAIN_COLUMNS).map_err(io_err)?;
    for rep in &result.repeats {
        for s in &rep.steps {
            wtr.write_record([
                rep.repeat.to_string(),
                s.step.to_string(),
                fmt_num(s.loss),
                fmt_num(s.grad_norms.min),
                fmt_num(s.grad_norms.max),
                fmt_num(s.grad_norms.mean),
                "false".to_string(),
            ])
            .map_err(io_err)?;
        }
        if let Some(d) = rep.divergence {
            wtr.write_record([
                rep.repeat.to_string(),
                d.step.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "true".to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    finish(wtr)
}

pub fn write_convergence_csv<W: Write>(w: W, rows: &[ConvergenceRow]) -> std::io::Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(CONVERGENCE_COLUMNS).map_err(io_err)?;
    for r in rows {
        wtr.write_record([
            r.batch_size.to_string(),
            fmt_num(r.ratio),
            fmt_num(r.stderr),
            fmt_num(r.reference),
            fmt_num(r.deviation),
        ])
        .map_err(io_err)?;
    }
    finish(wtr)
}

/// JSON numbers cannot be NaN or infinite; those become strings.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(fmt_num(v))
    }
}

fn config_value(exp: &Experiment) -> Value {
    serde_json::to_value(exp.to_config_file()).expect("config serializes")
}

pub fn run_summary(exp: &Experiment, report: &ComparisonReport, means: &[MeanCheck], exit_code: i32) -> Value {
    let failures: Vec<Value> = report
        .failures()
        .map(|r| json!({"layer": r.layer, "quantity": r.quantity.name(), "rel_err": num(r.rel_err)}))
        .collect();
    let mean_failures = means.iter().filter(|m| !m.pass).count();
    json!({
        "command": "run",
        "config": config_value(exp),
        "defaults_applied": exp.defaults_applied,
        "trials": exp.trials,
        "rows": report.rows.len(),
        "passed": report.passed(),
        "failures": failures,
        "mean_checks": {"total": means.len(), "failed": mean_failures},
        "exit_code": exit_code,
    })
}

pub fn train_summary(exp: &Experiment, result: &TrainResult) -> Value {
    let repeats: Vec<Value> = result
        .repeats
        .iter()
        .map(|r| {
            json!({
                "repeat": r.repeat,
                "steps_completed": r.steps.len(),
                "final_accuracy": num(r.final_accuracy),
                "initial_mean_grad_norm": num(r.initial_mean_grad_norm()),
                "initial_grad_norms": r.initial_grad_norms.iter().map(|&v| num(v)).collect::<Vec<_>>(),
                "plateau": r.has_plateau(),
                "divergence": r.divergence.map(|d| json!({
                    "step": d.step,
                    "site": format!("{:?}", d.site),
                    "layer": d.layer(),
                })),
            })
        })
        .collect();
    json!({
        "command": "train",
        "config": config_value(exp),
        "defaults_applied": exp.defaults_applied,
        "divergences": result.divergences(),
        "plateaus": result.plateaus(),
        "accuracy_std": num(result.accuracy_std()),
        "initial_mean_grad_norm": num(result.initial_mean_grad_norm()),
        "repeats": repeats,
    })
}

pub fn convergence_summary(exp: &Experiment, rows: &[ConvergenceRow], shrinking: bool) -> Value {
    json!({
        "command": "bn-convergence",
        "config": config_value(exp),
        "defaults_applied": exp.defaults_applied,
        "deviations_shrink": shrinking,
        "rows": rows.iter().map(|r| json!({
            "batch_size": r.batch_size,
            "ratio": num(r.ratio),
            "stderr": num(r.stderr),
        })).collect::<Vec<_>>(),
    })
}

fn matrix_json(m: &Matrix) -> Value {
    Value::Array((0..m.rows()).map(|r| Value::Array(m.row(r).iter().map(|&v| num(v)).collect())).collect())
}

/// Full forward and backward trace of trial 0.
pub fn trace_dump(cfg: &NetworkConfig, seed: u64) -> Result<Value, String> {
    let size = cfg.depth * cfg.width * cfg.batch_size;
    if size > TRACE_DUMP_LIMIT {
        return Err(format!(
            "trace dumps are limited to depth * width * batch <= {TRACE_DUMP_LIMIT}, this config has {size}"
        ));
    }
    let plan = SeedPlan::new(seed, 0);
    let run = || -> resprop_core::Result<Value> {
        let w = sample_weights(cfg, plan)?;
        let x = sample_inputs(cfg, plan)?;
        let d = sample_output_delta(cfg, plan)?;
        let fwd = forward(cfg, &w, &x)?;
        let back = backward(cfg, &w, &fwd, &d)?;
        let layers: Vec<Value> = fwd
            .layers
            .iter()
            .zip(&back.layers)
            .zip(&w.matrices)
            .enumerate()
            .map(|(i, ((f, b), wm))| {
                json!({
                    "layer": i + 1,
                    "weights": matrix_json(wm),
                    "batch_std": f.batch_stats.as_ref().map(|s| s.std.iter().map(|&v| num(v)).collect::<Vec<_>>()),
                    "normalized_input": f.normalized_input.as_ref().map(matrix_json),
                    "branch_input": matrix_json(&f.branch_input),
                    "pre_activation": matrix_json(&f.pre_activation),
                    "output": matrix_json(&f.output),
                    "delta_z": matrix_json(&b.delta_z),
                    "delta": matrix_json(&b.delta),
                })
            })
            .collect();
        Ok(json!({
            "block": cfg.block.name(),
            "activation": cfg.activation.name(),
            "seed": seed,
            "trial": 0,
            "input": matrix_json(&x),
            "input_delta": matrix_json(&back.input_delta),
            "layers": layers,
        }))
    };
    run().map_err(|e| e.to_string())
}

fn quoted(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', "''"))
}

/// Script plotting empirical against predicted values per quantity.
pub fn gnuplot_run(csv: &Path) -> String {
    let f = quoted(csv);
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset logscale y\nset xlabel 'layer'\n");
    let plots: Vec<String> = ["z", "delta_z", "grad", "sigma_sq"]
        .iter()
        .map(|q| {
            format!(
                "{f} using 1:(strcol(2) eq '{q}' ? $3 : 1/0) with points title '{q} empirical', \
                 {f} using 1:(strcol(2) eq '{q}' ? $5 : 1/0) with lines title '{q} predicted'"
            )
        })
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

pub fn gnuplot_train(csv: &Path, repeats: usize) -> String {
    let f = quoted(csv);
    let mut s = String::from("set datafile separator ','\nset logscale y\nset xlabel 'step'\nset ylabel 'loss'\n");
    let plots: Vec<String> = (0..repeats)
        .map(|r| format!("{f} using 2:($1 == {r} ? $3 : 1/0) with lines title 'repeat {r}'"))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

pub fn gnuplot_convergence(csv: &Path) -> String {
    let f = quoted(csv);
    format!(
        "set datafile separator ','\nset logscale x 2\nset xlabel 'batch size'\nset ylabel 'deviation'\n\
         plot {f} using 1:5:3 with yerrorbars title 'deviation'\n"
    )
}

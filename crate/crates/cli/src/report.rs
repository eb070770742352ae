//! Result emission: the fixed-schema results CSV, per-run curve files, the
//! label-transfer map report, and standalone SVG plots with embedded data
//! tables.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use metaxt_core::data::LabelSpace;
use metaxt_core::train::Method;

use crate::runner::RunResult;

/// Fixed results schema: one row per (method, k, seed) plus one aggregate
/// row per (method, k) with `seed = mean` and `<metric>_mean` as the metric
/// name. Aggregates are recomputable from the per-seed rows. Floats use the
/// shortest exact representation.
pub const RESULTS_HEADER: [&str; 7] =
    ["method", "k", "seed", "metric_name", "metric_value", "steps_to_best", "wall_ms"];

pub fn results_csv(results: &[RunResult]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(RESULTS_HEADER)?;
    for run in results {
        for o in &run.outcomes {
            writer.write_record([
                run.method.name().to_string(),
                run.k.to_string(),
                o.seed.to_string(),
                o.metric_name.to_string(),
                format!("{}", o.metric_value),
                o.steps_to_best.to_string(),
                o.wall_ms.to_string(),
            ])?;
        }
        if !run.outcomes.is_empty() {
            let mean_steps = run.outcomes.iter().map(|o| o.steps_to_best as f64).sum::<f64>()
                / run.outcomes.len() as f64;
            let total_ms: u128 = run.outcomes.iter().map(|o| o.wall_ms).sum();
            writer.write_record([
                run.method.name().to_string(),
                run.k.to_string(),
                "mean".to_string(),
                format!("{}_mean", run.metric_name),
                format!("{}", run.mean),
                format!("{mean_steps}"),
                total_ms.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

pub fn write_results_csv(path: impl AsRef<Path>, results: &[RunResult]) -> Result<()> {
    let text = results_csv(results)?;
    fs::write(&path, text)
        .with_context(|| format!("writing results to {}", path.as_ref().display()))
}

/// Per-step training curves for one seed: step, loss terms, meta quantities.
pub fn curves_csv(result: &RunResult, seed: u64) -> Result<Option<String>> {
    let Some(outcome) = result.outcomes.iter().find(|o| o.seed == seed) else {
        return Ok(None);
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "step",
        "target_term",
        "source_term",
        "transfer_term",
        "total",
        "meta_loss",
        "meta_grad_norm",
    ])?;
    for r in &outcome.curves {
        writer.write_record([
            r.step.to_string(),
            format!("{}", r.terms.target),
            format!("{}", r.terms.source),
            format!("{}", r.terms.transfer),
            format!("{}", r.terms.total),
            r.meta_loss.map(|v| format!("{v}")).unwrap_or_default(),
            r.meta_grad_norm.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    Ok(Some(String::from_utf8(writer.into_inner()?)?))
}

/// The learned `P(y_target | y_source)` estimate as a labeled table.
pub fn ltn_map_table(
    map: &[Vec<f64>],
    source_labels: &LabelSpace,
    target_labels: &LabelSpace,
) -> String {
    let mut out = String::new();
    out.push_str("source_label");
    for name in &target_labels.names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (row, name) in map.iter().zip(source_labels.names.iter()) {
        out.push_str(name);
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Pretty console rendering of the same table.
pub fn ltn_map_pretty(
    map: &[Vec<f64>],
    source_labels: &LabelSpace,
    target_labels: &LabelSpace,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:>14} |", "P(y_t | y_s)"));
    for name in &target_labels.names {
        out.push_str(&format!(" {name:>8}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(16 + 9 * target_labels.len()));
    out.push('\n');
    for (row, name) in map.iter().zip(source_labels.names.iter()) {
        out.push_str(&format!("{name:>14} |"));
        for v in row {
            out.push_str(&format!(" {v:>8.4}"));
        }
        out.push('\n');
    }
    out
}

/// A minimal standalone SVG line chart of metric-vs-k per method, with the
/// plotted numbers embedded as a CSV table inside a `<metadata>` block so
/// the figure carries its own data.
pub fn metric_vs_k_svg(results: &[RunResult]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 420.0;
    const MARGIN: f64 = 60.0;
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

    let mut methods: Vec<Method> = Vec::new();
    let mut ks: Vec<usize> = Vec::new();
    for r in results {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    ks.sort_unstable();
    let metric = results.first().map(|r| r.metric_name).unwrap_or("metric");

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in results {
        if r.mean.is_finite() {
            lo = lo.min(r.mean - r.std);
            hi = hi.max(r.mean + r.std);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let pad = 0.05 * (hi - lo).max(0.05);
    lo -= pad;
    hi += pad;

    let x_of = |k: usize| -> f64 {
        let idx = ks.iter().position(|&x| x == k).unwrap_or(0) as f64;
        let span = (ks.len().saturating_sub(1)).max(1) as f64;
        MARGIN + idx / span * (WIDTH - 2.0 * MARGIN)
    };
    let y_of = |v: f64| -> f64 { HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<metadata id=\"data-table\"><![CDATA[\nmethod,k,mean,std\n");
    for r in results {
        svg.push_str(&format!("{},{},{},{}\n", r.method.name(), r.k, r.mean, r.std));
    }
    svg.push_str("]]></metadata>\n");
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">k</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        metric
    ));
    for &k in &ks {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{k}</text>\n",
            x_of(k),
            HEIGHT - MARGIN + 18.0
        ));
    }
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"12\">{v:.2}</text>\n",
            MARGIN - 6.0,
            y_of(v) + 4.0
        ));
    }
    for (mi, &method) in methods.iter().enumerate() {
        let color = colors[mi % colors.len()];
        let mut points: Vec<(usize, f64, f64)> = results
            .iter()
            .filter(|r| r.method == method && r.mean.is_finite())
            .map(|r| (r.k, r.mean, r.std))
            .collect();
        points.sort_by_key(|p| p.0);
        let path: Vec<String> =
            points.iter().map(|&(k, m, _)| format!("{:.1},{:.1}", x_of(k), y_of(m))).collect();
        if path.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                path.join(" ")
            ));
        }
        for &(k, m, s) in &points {
            svg.push_str(&format!(
                "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"{color}\" stroke-width=\"1\"/>\n",
                x_of(k),
                y_of(m - s),
                y_of(m + s)
            ));
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{color}\"/>\n",
                x_of(k),
                y_of(m)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN + 8.0,
            MARGIN + 18.0 * mi as f64,
            method.name()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{mean_std, SeedOutcome};
    use metaxt_core::params::{FlatParams, ParamLayout};

    fn fake_result(method: Method, k: usize, values: &[f64]) -> RunResult {
        let outcomes: Vec<SeedOutcome> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SeedOutcome {
                seed: i as u64 + 1,
                metric_name: "accuracy",
                metric_value: v,
                steps_to_best: 50 * (i as u64 + 1),
                wall_ms: 12,
                curves: Vec::new(),
                validation_curve: Vec::new(),
                ltn_map: None,
                best_params: FlatParams::zeros(ParamLayout::default()),
            })
            .collect();
        let (mean, std) = mean_std(values);
        RunResult { method, k, metric_name: "accuracy", outcomes, failures: Vec::new(), mean, std }
    }

    #[test]
    fn results_csv_schema_and_aggregate() {
        let results = vec![fake_result(Method::MetaXt, 20, &[0.5, 0.6])];
        let text = results_csv(&results).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,k,seed,metric_name,metric_value,steps_to_best,wall_ms"
        );
        assert_eq!(lines.next().unwrap(), "metaxt,20,1,accuracy,0.5,50,12");
        assert_eq!(lines.next().unwrap(), "metaxt,20,2,accuracy,0.6,100,12");
        let agg = lines.next().unwrap();
        assert!(agg.starts_with("metaxt,20,mean,accuracy_mean,"), "{agg}");
        // Aggregate recomputable from the per-seed rows.
        let mean: f64 = agg.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(mean, (0.5 + 0.6) / 2.0);
    }

    #[test]
    fn svg_embeds_data_table() {
        let results = vec![
            fake_result(Method::MetaXt, 20, &[0.5]),
            fake_result(Method::TargetOnly, 20, &[0.3]),
        ];
        let svg = metric_vs_k_svg(&results);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("metaxt,20,0.5,0"));
        assert!(svg.contains("targetonly,20,0.3,0"));
        assert!(svg.contains("</svg>"));
    }
}

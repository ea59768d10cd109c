//! Static SVG line charts rendered straight from metric records; no
//! plotting dependency, deterministic output.

use anyhow::Result;
use newt_core::metrics::MetricRecord;
use std::path::{Path, PathBuf};

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn svg_chart(title: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (mut y0, mut y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    if !y0.is_finite() || !y1.is_finite() {
        y0 = 0.0;
        y1 = 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let xr = if (x1 - x0).abs() < 1e-12 { 1.0 } else { x1 - x0 };
    let px = |x: f64| ml + (x - x0) / xr * pw;
    let py = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph,
        mt + ph
    ));
    for k in 0..=4 {
        let yv = y0 + (y1 - y0) * k as f64 / 4.0;
        let xv = x0 + xr * k as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{yv:.3}</text>\n",
            ml - 6.0,
            py(yv) + 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{xv:.0}</text>\n",
            px(xv),
            mt + ph + 18.0
        ));
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| {
                format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, px(x), py(y))
            })
            .collect();
        out.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            ml + pw - 150.0,
            mt + 16.0 + 16.0 * i as f64,
            s.label
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// One chart per loss channel plus one per eval-score kind.
pub fn render_all(records: &[MetricRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let loss_channels: [(&str, fn(&MetricRecord) -> Option<f64>); 3] = [
        ("model_loss", |r| r.model_loss),
        ("policy_loss", |r| r.policy_loss),
        ("bc_loss", |r| r.bc_loss),
    ];
    for (name, extract) in loss_channels {
        let mut kinds: Vec<String> = Vec::new();
        for r in records {
            if extract(r).is_some() && !kinds.contains(&r.kind) {
                kinds.push(r.kind.clone());
            }
        }
        let series: Vec<Series> = kinds
            .iter()
            .map(|kind| Series {
                label: kind.clone(),
                points: records
                    .iter()
                    .filter(|r| &r.kind == kind)
                    .filter_map(|r| extract(r).map(|v| (r.step as f64, v)))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        if !series.is_empty() {
            let path = out_dir.join(format!("{name}.svg"));
            std::fs::write(&path, svg_chart(name, &series))?;
            written.push(path);
        }
    }

    // score curves grouped by record kind, one line per task
    let mut eval_kinds: Vec<String> = Vec::new();
    for r in records {
        if r.score.is_some() && !eval_kinds.contains(&r.kind) {
            eval_kinds.push(r.kind.clone());
        }
    }
    for kind in eval_kinds {
        let mut tasks: Vec<String> = Vec::new();
        for r in records {
            if r.kind == kind {
                if let Some(t) = &r.task {
                    if !tasks.contains(t) {
                        tasks.push(t.clone());
                    }
                }
            }
        }
        let series: Vec<Series> = tasks
            .iter()
            .map(|task| Series {
                label: task.clone(),
                points: records
                    .iter()
                    .filter(|r| r.kind == kind && r.task.as_ref() == Some(task))
                    .filter_map(|r| r.score.map(|v| (r.step as f64, v)))
                    .collect(),
            })
            .collect();
        if series.iter().any(|s| !s.points.is_empty()) {
            let path = out_dir.join(format!("score_{}.svg", kind.replace([':', '/'], "_")));
            std::fs::write(&path, svg_chart(&format!("normalized score ({kind})"), &series))?;
            written.push(path);
        }
    }
    Ok(written)
}

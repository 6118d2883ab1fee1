//! Weight comparison tables and trajectory plots.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{ema_trajectory, DomainSet, DomainWeights, WeightTrajectory};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub domain: String,
    pub baseline: f64,
    pub optimized: f64,
    /// `optimized - baseline`.
    pub difference: f64,
}

/// Rows in the baseline's domain order. Both sides must name the same
/// domains, in any order.
pub fn compare_weights(baseline: &DomainWeights, optimized: &DomainWeights) -> Result<Vec<ComparisonRow>> {
    if baseline.len() != optimized.len() {
        return Err(Error::DimensionMismatch {
            expected: baseline.len(),
            actual: optimized.len(),
        });
    }
    baseline
        .iter()
        .map(|(name, b)| {
            let o = optimized
                .get(name)
                .ok_or_else(|| Error::UnknownDomain(name.to_string()))?;
            Ok(ComparisonRow {
                domain: name.to_string(),
                baseline: b,
                optimized: o,
                difference: o - b,
            })
        })
        .collect()
}

/// Markdown table with a header naming the two columns.
pub fn render_comparison(rows: &[ComparisonRow], baseline_label: &str, optimized_label: &str) -> String {
    let width = rows
        .iter()
        .map(|r| r.domain.chars().count())
        .chain(["Domain".len()])
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "| {:<width$} | {baseline_label:>10} | {optimized_label:>10} | {:>10} |",
        "Domain", "Difference"
    );
    let _ = writeln!(
        out,
        "|{}|{}|{}|{}|",
        "-".repeat(width + 2),
        "-".repeat(baseline_label.len().max(10) + 2),
        "-".repeat(optimized_label.len().max(10) + 2),
        "-".repeat(12)
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {:<width$} | {:>w1$.4} | {:>w2$.4} | {:>+10.4} |",
            r.domain,
            r.baseline,
            r.optimized,
            r.difference,
            w1 = baseline_label.len().max(10),
            w2 = optimized_label.len().max(10),
        );
    }
    out
}

/// Reads the `step,domain,alpha,lambda,objective` CSV written by the
/// reweighting loop.
pub fn read_trajectory_csv(text: &str, source: &Path) -> Result<WeightTrajectory> {
    let at = |line: usize| format!("{}:{line}", source.display());
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "step,domain,alpha,lambda,objective" => {}
        _ => return Err(Error::parse(at(1), "missing trajectory header")),
    }
    let mut groups: Vec<StepRows> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        if fields.len() != 5 {
            return Err(Error::parse(
                at(i + 1),
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|e| Error::parse(at(i + 1), e.to_string())) };
        let step: usize = fields[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(at(i + 1), e.to_string()))?;
        let (alpha, lambda) = (num(&fields[2])?, num(&fields[3])?);
        match groups.last_mut() {
            Some(g) if g.0 == step => {
                g.1.push(fields[1].clone());
                g.2.push(alpha);
                g.3.push(lambda);
            }
            _ => groups.push((step, vec![fields[1].clone()], vec![alpha], vec![lambda])),
        }
    }
    let Some(first) = groups.first() else {
        return Err(Error::EmptyTrajectory);
    };
    let domains = DomainSet::new(first.1.iter().cloned())?;
    let mut traj = WeightTrajectory::new();
    for (step, names, alphas, lambdas) in groups {
        if names != domains.names() {
            return Err(Error::parse(
                source.display().to_string(),
                format!("step {step} lists different domains"),
            ));
        }
        traj.push(step, DomainWeights::new(domains.clone(), alphas)?, lambdas)?;
    }
    Ok(traj)
}

/// `(step, names, alphas, lambdas)` for one step of a trajectory file.
type StepRows = (usize, Vec<String>, Vec<f64>, Vec<f64>);

fn split_csv(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Line plot of the exponential moving average of each domain's weight.
pub fn trajectory_svg(traj: &WeightTrajectory, decay: f64) -> Result<String> {
    let ema = ema_trajectory(traj, decay)?;
    let steps: Vec<usize> = traj.iter().map(|s| s.step).collect();
    let domains = ema[0].domains().clone();
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 180.0, 20.0, 40.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let y_max = ema
        .iter()
        .flat_map(|e| e.values().iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let (s0, s1) = (steps[0] as f64, *steps.last().unwrap() as f64);
    let x = |s: usize| {
        left + if s1 > s0 {
            (s as f64 - s0) / (s1 - s0) * plot_w
        } else {
            plot_w / 2.0
        }
    };
    let y = |v: f64| top + plot_h - v / y_max * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + plot_h,
        left + plot_w
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{}">step {}</text><text x="{}" y="{}" text-anchor="end">step {}</text>"#,
        h - 12.0,
        steps[0],
        left + plot_w,
        h - 12.0,
        steps.last().unwrap()
    );
    for (d, name) in domains.iter().enumerate() {
        let color = PALETTE[d % PALETTE.len()];
        let points: Vec<String> = ema
            .iter()
            .zip(&steps)
            .map(|(e, &s)| format!("{:.2},{:.2}", x(s), y(e[d])))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 * d as f64 + 6.0;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 16.0,
            lx + 20.0,
            ly + 4.0,
            xml_escape(name),
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

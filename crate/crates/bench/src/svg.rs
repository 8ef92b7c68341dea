//! Static two-panel convergence plot: gradient norm against time and against
//! iterations, log-scale y axis.

use std::fmt::Write;

use crate::run::BenchSummary;
use crate::solvers::SolverId;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 90.0;
const GAP: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Curves of solvers that use the Hessian approximations are solid.
fn dashed(id: SolverId) -> bool {
    matches!(id, SolverId::Lbfgs | SolverId::GdOracle | SolverId::Infomax)
}

struct Panel {
    x0: f64,
    width: f64,
    x_max: f64,
    log_lo: f64,
    log_hi: f64,
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.x0 + self.width * (x / self.x_max).clamp(0.0, 1.0)
    }

    fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let f = (y.log10() - self.log_lo) / (self.log_hi - self.log_lo);
        MARGIN_TOP + h * (1.0 - f.clamp(0.0, 1.0))
    }
}

fn positive(values: impl Iterator<Item = f64>) -> impl Iterator<Item = f64> {
    values.filter(|v| v.is_finite() && *v > 0.0)
}

/// Renders `summary` as an SVG document.
pub fn render_svg(summary: &BenchSummary) -> String {
    let all = summary
        .solvers
        .iter()
        .flat_map(|s| s.median.by_iteration.iter().chain(&s.median.by_time).copied());
    let (lo, hi) = positive(all).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (log_lo, log_hi) = if lo.is_finite() {
        let (a, b) = (lo.log10().floor(), hi.log10().ceil());
        if a == b { (a - 1.0, b) } else { (a, b) }
    } else {
        (-8.0, 0.0)
    };
    let t_max = summary
        .solvers
        .iter()
        .flat_map(|s| s.median.time_grid.last().copied())
        .fold(0.0, f64::max);
    let k_max = summary
        .solvers
        .iter()
        .map(|s| s.median.by_iteration.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    let width = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT - GAP - MARGIN_LEFT) / 2.0;
    let time_panel = Panel { x0: MARGIN_LEFT, width, x_max: if t_max > 0.0 { t_max } else { 1.0 }, log_lo, log_hi };
    let iter_panel = Panel {
        x0: 2.0 * MARGIN_LEFT + width + GAP,
        width,
        x_max: k_max.max(1) as f64,
        log_lo,
        log_hi,
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    axes(&mut s, &time_panel, "time (s)", time_panel.x_max);
    axes(&mut s, &iter_panel, "iterations", iter_panel.x_max);

    for (k, sol) in summary.solvers.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let dash = if dashed(sol.solver) { r#" stroke-dasharray="6,4""# } else { "" };
        let m = &sol.median;
        let time_pts = m.time_grid.iter().copied().zip(m.by_time.iter().copied());
        let iter_pts = m.by_iteration.iter().enumerate().map(|(i, &v)| (i as f64, v));
        for pts in [polyline(&time_panel, time_pts), polyline(&iter_panel, iter_pts)] {
            if !pts.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>"#
                );
            }
        }
        let lx = MARGIN_LEFT + (k % 4) as f64 * 200.0;
        let ly = HEIGHT - 30.0 + (k / 4) as f64 * 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            sol.solver
        );
    }
    s.push_str("</svg>\n");
    s
}

fn polyline(panel: &Panel, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.filter(|(_, y)| y.is_finite() && *y > 0.0)
        .map(|(x, y)| format!("{:.2},{:.2}", panel.px(x), panel.py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn axes(s: &mut String, p: &Panel, label: &str, x_max: f64) {
    let bottom = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{MARGIN_TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        p.x0,
        p.width,
        bottom - MARGIN_TOP
    );
    let mut e = p.log_lo as i32;
    let step = (((p.log_hi - p.log_lo) / 8.0).ceil() as i32).max(1);
    while e as f64 <= p.log_hi {
        let y = p.py(10f64.powi(e));
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="lightgray"/><text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
            p.x0,
            p.x0 + p.width,
            p.x0 - 4.0,
            y + 4.0
        );
        e += step;
    }
    for k in 0..=4 {
        let x = x_max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            p.px(x),
            bottom + 14.0,
            tick_label(x)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{label}</text>"#,
        p.x0 + p.width / 2.0,
        bottom + 30.0
    );
}

fn tick_label(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x >= 100.0 || x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::median::MedianCurve;
    use crate::run::{DataSource, SolverSummary};
    use ica_core::datagen::Experiment;

    fn summary(solver: SolverId, by_iteration: Vec<f64>) -> SolverSummary {
        SolverSummary {
            solver,
            config: serde_json::json!({}),
            data: DataSource::Experiment { experiment: Experiment::A, n: None, t: None },
            n: 2,
            t: 10,
            base_seed: 0,
            seeds: vec![0],
            tol: 1e-8,
            runs: vec![],
            reached_tol_fraction: 1.0,
            failed_runs: 0,
            median_iterations_to_tol: None,
            warnings: vec![],
            median: MedianCurve { time_grid: vec![0.1, 0.2], by_time: by_iteration[..2].to_vec(), by_iteration },
        }
    }

    #[test]
    fn one_polyline_per_panel_and_solver() {
        let s = BenchSummary {
            solvers: vec![
                summary(SolverId::PicardH2, vec![1.0, 1e-3, 1e-9]),
                summary(SolverId::Infomax, vec![1.0, 0.5, 0.2]),
            ],
        };
        let svg = render_svg(&s);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg.matches("stroke-dasharray").count(), 3);
        assert!(svg.contains(">picard-h2<") && svg.contains(">infomax<"));
        assert!(svg.contains(">1e-9<"));
        assert_eq!(render_svg(&s), svg);
    }

    #[test]
    fn empty_summary_still_renders() {
        let svg = render_svg(&BenchSummary { solvers: vec![] });
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("<polyline"));
    }
}

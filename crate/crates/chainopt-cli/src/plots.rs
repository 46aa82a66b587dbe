//! Static SVG output for a result bundle: pairwise indicator scatter plots
//! with the non-dominated points highlighted, and a workshare bar chart for
//! the best solution. Layout and number formatting are fixed so the files
//! are byte-identical across re-runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use chainopt::pareto::{pareto_filter, KpiPoint};

const KPI_NAMES: [&str; 4] = ["C1", "C2", "C3", "C4"];
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 52.0;

fn svg_header(out: &mut String) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
}

fn placeholder(message: &str) -> String {
    let mut out = String::new();
    svg_header(&mut out);
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" fill=\"#444444\">{message}</text>",
        WIDTH / 2.0,
        HEIGHT / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// Data range padded by 5% (or a fixed pad for a degenerate range).
fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - 2.0 * MARGIN)
    }
    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn draw_axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (x1, y1) = (WIDTH - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"14.0\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14.0 {:.1})\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (v, at_origin) in [(frame.x_lo, true), (frame.x_hi, false)] {
        let px = if at_origin { x0 } else { x1 };
        let _ = writeln!(
            out,
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>",
            y0 + 16.0
        );
    }
    for (v, at_origin) in [(frame.y_lo, true), (frame.y_hi, false)] {
        let py = if at_origin { y0 } else { y1 };
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.3}</text>",
            x0 - 6.0,
            py + 3.0
        );
    }
}

fn scatter_svg(points: &[KpiPoint], front: &[KpiPoint], dims: (usize, usize)) -> String {
    if points.is_empty() {
        return placeholder("no feasible results");
    }
    let (x_lo, x_hi) = axis_range(points.iter().map(|p| p[dims.0]));
    let (y_lo, y_hi) = axis_range(points.iter().map(|p| p[dims.1]));
    let frame = Frame { x_lo, x_hi, y_lo, y_hi };
    let mut out = String::new();
    svg_header(&mut out);
    draw_axes(&mut out, &frame, KPI_NAMES[dims.0], KPI_NAMES[dims.1]);
    // Dominated points first so front markers stay on top.
    for p in points {
        if front.contains(p) {
            continue;
        }
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.0\" fill=\"#9e9e9e\"/>",
            frame.px(p[dims.0]),
            frame.py(p[dims.1])
        );
    }
    for p in front {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4.0\" fill=\"#d62728\" stroke=\"black\" stroke-width=\"0.8\"/>",
            frame.px(p[dims.0]),
            frame.py(p[dims.1])
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
struct WorkshareRow {
    kind: String,
    entity: String,
    share_pct: f64,
    ws_min: f64,
    ws_max: f64,
    ws_target: Option<f64>,
}

fn workshare_svg(rows: &[WorkshareRow]) -> String {
    if rows.is_empty() {
        return placeholder("no workshare data");
    }
    let frame = Frame {
        x_lo: 0.0,
        x_hi: rows.len() as f64,
        y_lo: 0.0,
        y_hi: rows
            .iter()
            .map(|r| r.share_pct.max(r.ws_max))
            .fold(10.0, f64::max)
            * 1.1,
    };
    let mut out = String::new();
    svg_header(&mut out);
    draw_axes(&mut out, &frame, "entity", "workshare %");
    let slot = (WIDTH - 2.0 * MARGIN) / rows.len() as f64;
    for (i, row) in rows.iter().enumerate() {
        let cx = MARGIN + (i as f64 + 0.5) * slot;
        let bw = slot * 0.55;
        let y_top = frame.py(row.share_pct);
        let fill = if row.kind == "site" { "#1f77b4" } else { "#2ca02c" };
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
            cx - bw / 2.0,
            y_top,
            bw,
            frame.py(0.0) - y_top
        );
        // Window bounds as dashes, target as a diamond.
        for (v, color) in [(row.ws_min, "#000000"), (row.ws_max, "#000000")] {
            let py = frame.py(v);
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                cx - bw * 0.7,
                cx + bw * 0.7
            );
        }
        if let Some(t) = row.ws_target {
            let py = frame.py(t);
            let _ = writeln!(
                out,
                "<path d=\"M {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z\" fill=\"#ff7f0e\"/>",
                cx - 4.0,
                py,
                cx,
                py - 4.0,
                cx + 4.0,
                py,
                cx,
                py + 4.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{cx:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{}</text>",
            HEIGHT - MARGIN + 28.0,
            row.entity
        );
    }
    out.push_str("</svg>\n");
    out
}

fn read_results(path: &Path) -> Result<Vec<KpiPoint>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.get(9) == Some("true") {
            let mut p = [0.0; 4];
            for (k, item) in p.iter_mut().enumerate() {
                *item = record
                    .get(10 + k)
                    .context("short results row")?
                    .parse()?;
            }
            points.push(p);
        }
    }
    Ok(points)
}

fn read_workshare(path: &Path) -> Result<Vec<WorkshareRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(WorkshareRow {
            kind: record.get(0).context("kind")?.to_string(),
            entity: record.get(1).context("entity")?.to_string(),
            share_pct: record.get(2).context("share")?.parse()?,
            ws_min: record.get(3).context("min")?.parse()?,
            ws_max: record.get(4).context("max")?.parse()?,
            ws_target: match record.get(5) {
                Some("") | None => None,
                Some(v) => Some(v.parse()?),
            },
        });
    }
    Ok(rows)
}

/// Renders all plots for a result bundle directory; returns the files
/// written.
pub fn emit_plots(bundle_dir: &Path) -> Result<Vec<PathBuf>> {
    let points = read_results(&bundle_dir.join("results.csv"))?;
    let front = pareto_filter(&points);
    let mut written = Vec::new();
    for (i, j) in PAIRS {
        let path = bundle_dir.join(format!(
            "kpi_{}_{}.svg",
            KPI_NAMES[i].to_lowercase(),
            KPI_NAMES[j].to_lowercase()
        ));
        fs::write(&path, scatter_svg(&points, &front, (i, j)))?;
        written.push(path);
    }
    let ws_path = bundle_dir.join("workshare.csv");
    let chart = if ws_path.exists() {
        workshare_svg(&read_workshare(&ws_path)?)
    } else {
        placeholder("no workshare data")
    };
    let out = bundle_dir.join("workshare.svg");
    fs::write(&out, chart)?;
    written.push(out);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_results(dir: &Path, rows: &[(bool, [f64; 4])]) {
        let mut text = String::from(
            "run_id,mode,w1,w2,w3,w4,alpha_spec,solver,seed,feasible,C1,C2,C3,C4,objective,wall_ms\n",
        );
        for (i, (feasible, k)) in rows.iter().enumerate() {
            let _ = writeln!(
                text,
                "{i},single,0.25,0.25,0.25,0.25,-,iqts,1,{feasible},{},{},{},{},1.0,5",
                k[0], k[1], k[2], k[3]
            );
        }
        fs::write(dir.join("results.csv"), text).unwrap();
    }

    #[test]
    fn single_point_produces_six_scatters() {
        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &[(true, [1.0, 1.0, 1.0, 1.0])]);
        let files = emit_plots(dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        for f in &files[..6] {
            let text = fs::read_to_string(f).unwrap();
            assert!(text.contains("<circle"));
        }
    }

    #[test]
    fn dominated_point_styled_differently() {
        let dir = tempfile::tempdir().unwrap();
        write_results(
            dir.path(),
            &[(true, [1.0, 1.0, 1.0, 1.0]), (true, [2.0, 2.0, 2.0, 2.0])],
        );
        let files = emit_plots(dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.contains("#9e9e9e"), "dominated marker missing");
        assert!(text.contains("#d62728"), "front marker missing");
    }

    #[test]
    fn empty_results_yield_placeholder() {
        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &[]);
        let files = emit_plots(dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.contains("no feasible results"));
    }

    #[test]
    fn plots_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_results(
            dir.path(),
            &[
                (true, [1.0, 2.0, 0.5, 0.25]),
                (true, [0.5, 3.0, 1.5, 0.75]),
                (false, [f64::NAN; 4]),
            ],
        );
        fs::write(
            dir.path().join("workshare.csv"),
            "kind,entity,share_pct,ws_min,ws_max,ws_target\nsite,s0,40.0,10,60,\nsupplier,u0,20.0,5,50,25\n",
        )
        .unwrap();
        let first: Vec<String> = emit_plots(dir.path())
            .unwrap()
            .iter()
            .map(|f| fs::read_to_string(f).unwrap())
            .collect();
        let second: Vec<String> = emit_plots(dir.path())
            .unwrap()
            .iter()
            .map(|f| fs::read_to_string(f).unwrap())
            .collect();
        assert_eq!(first, second);
        assert!(first[6].contains("<rect"));
        assert!(first[6].contains("<path"), "target diamond missing");
    }
}

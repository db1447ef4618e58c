use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fcgrad::harness::{read_results_file, ResultRow};
use plotters::prelude::*;

use crate::Failure;

/// Metrics drawn by `plot`, with axis labels.
const METRICS: [(&str, &str); 6] = [
    ("mean", "Mean return"),
    ("geomean", "GeoMean return"),
    ("min", "Min return"),
    ("gini", "Gini"),
    ("jain", "Jain index"),
    ("conflict_rate", "Conflict rate"),
];

/// Across-seed statistics at one x position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub x: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub type Series = BTreeMap<String, Vec<Band>>;

fn metric_of(row: &ResultRow, metric: &str) -> f64 {
    match metric {
        "mean" => row.mean,
        "geomean" => row.geomean,
        "min" => row.min,
        "gini" => row.gini,
        "jain" => row.jain,
        "conflict_rate" => row.conflict_rate,
        _ => unreachable!("unknown metric {metric}"),
    }
}

/// Series label, qualified by game and beta only when several are present.
fn labeller(rows: &[ResultRow]) -> impl Fn(&ResultRow) -> String {
    let envs: std::collections::BTreeSet<_> = rows.iter().map(|r| r.env.name()).collect();
    let mut betas: BTreeMap<String, std::collections::BTreeSet<u64>> = BTreeMap::new();
    for r in rows {
        betas.entry(r.method.to_string()).or_default().insert(r.beta.to_bits());
    }
    let multi_env = envs.len() > 1;
    move |r: &ResultRow| {
        let m = r.method.to_string();
        let mut label = if multi_env { format!("{}/{m}", r.env) } else { m.clone() };
        if betas.get(&m).is_some_and(|b| b.len() > 1) {
            label.push_str(&format!(" b={}", r.beta));
        }
        label
    }
}

/// Groups rows into labelled series of across-seed bands for `metric`.
/// Per-agent columns are averaged within a record first.
pub fn aggregate(rows: &[ResultRow], metric: &str) -> Series {
    let label = labeller(rows);
    // (label, env_steps) -> run_id -> (sum, count)
    let mut acc: BTreeMap<(String, u64), BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry((label(r), r.env_steps))
            .or_default()
            .entry(r.run_id.clone())
            .or_insert((0.0, 0));
        e.0 += metric_of(r, metric);
        e.1 += 1;
    }
    let mut out: Series = BTreeMap::new();
    for ((name, x), runs) in acc {
        let vals: Vec<f64> = runs.values().map(|(s, n)| s / *n as f64).collect();
        out.entry(name).or_default().push(Band {
            x: x as f64,
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            lo: vals.iter().copied().fold(f64::INFINITY, f64::min),
            hi: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        let w = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - w, hi + w)
    } else {
        (lo - 0.05 * span, hi + 0.05 * span)
    }
}

type DrawResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

fn draw_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    series: &Series,
) -> DrawResult
where
    DB::ErrorType: 'static,
{
    let all = series.values().flatten();
    let (x0, x1) = padded(
        all.clone().map(|b| b.x).fold(f64::INFINITY, f64::min),
        all.clone().map(|b| b.x).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        all.clone().map(|b| b.lo).fold(f64::INFINITY, f64::min),
        all.map(|b| b.hi).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart
        .configure_mesh()
        .x_desc("env steps")
        .y_desc(title)
        .draw()?;
    for (i, (name, bands)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if bands.len() > 1 {
            let mut poly: Vec<(f64, f64)> = bands.iter().map(|b| (b.x, b.hi)).collect();
            poly.extend(bands.iter().rev().map(|b| (b.x, b.lo)));
            chart.draw_series(std::iter::once(Polygon::new(poly, color.mix(0.2).filled())))?;
        } else {
            chart.draw_series(bands.iter().map(|b| {
                PathElement::new(vec![(b.x, b.lo), (b.x, b.hi)], color.stroke_width(1))
            }))?;
        }
        chart
            .draw_series(LineSeries::new(bands.iter().map(|b| (b.x, b.mean)), color.stroke_width(2)))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart.draw_series(bands.iter().map(|b| Circle::new((b.x, b.mean), 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()?;
    Ok(())
}

/// Writes one SVG per metric plus `panels.svg` with the Mean, GeoMean and
/// Min panels side by side. Returns the written paths.
pub fn render(rows: &[ResultRow], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (metric, title) in METRICS {
        let path = out.join(format!("{metric}.svg"));
        let root = SVGBackend::new(path.as_path(), (900, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
        draw_panel(&root, title, &aggregate(rows, metric)).map_err(|e| anyhow!("{metric}: {e}"))?;
        root.present().map_err(|e| anyhow!("{e}"))?;
        drop(root);
        written.push(path);
    }
    let path = out.join("panels.svg");
    let root = SVGBackend::new(&path, (1800, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    for (area, (metric, title)) in root.split_evenly((1, 3)).iter().zip(&METRICS[..3]) {
        draw_panel(area, title, &aggregate(rows, metric)).map_err(|e| anyhow!("{metric}: {e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    drop(root);
    written.push(path);
    Ok(written)
}

pub fn cmd_plot(inputs: &[PathBuf], out: &Path) -> Result<u8, Failure> {
    let mut rows = Vec::new();
    for p in inputs {
        let mut r = read_results_file(p).map_err(|e| {
            let code = e.exit_code() as u8;
            Failure {
                code,
                err: anyhow!("{}: {e}", p.display()),
            }
        })?;
        rows.append(&mut r);
    }
    if rows.is_empty() {
        return Err(Failure {
            code: 3,
            err: anyhow!("no result rows to plot"),
        });
    }
    let written = render(&rows, out).map_err(crate::io_failure)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fcgrad::agent::Method;
    use fcgrad::harness::EnvKind;

    fn row(method: Method, seed: u64, steps: u64, agent: usize, mean: f64) -> ResultRow {
        ResultRow {
            run_id: format!("coins-{method}-b0.5-s{seed}"),
            env: EnvKind::Coins,
            method,
            beta: 0.5,
            seed,
            update: 1,
            env_steps: steps,
            agent_id: agent,
            episodic_return: mean,
            mean,
            geomean: mean,
            min: mean,
            gini: 0.0,
            jain: 1.0,
            conflict_rate: agent as f64,
            branch_blend: 0,
            branch_proj_ind: 0,
            branch_proj_col: 0,
        }
    }

    #[test]
    fn bands_span_seeds() {
        let rows = vec![
            row(Method::FCGrad, 0, 100, 0, 1.0),
            row(Method::FCGrad, 0, 100, 1, 1.0),
            row(Method::FCGrad, 1, 100, 0, 3.0),
            row(Method::FCGrad, 1, 100, 1, 3.0),
            row(Method::Col, 0, 100, 0, 5.0),
        ];
        let s = aggregate(&rows, "mean");
        assert_eq!(s["fcgrad"], vec![Band { x: 100.0, mean: 2.0, lo: 1.0, hi: 3.0 }]);
        assert_eq!(s["col"][0].mean, 5.0);
        // conflict rate averaged over agents within a record
        assert_eq!(aggregate(&rows, "conflict_rate")["fcgrad"][0].mean, 0.5);
    }

    #[test]
    fn beta_qualifies_label_only_when_varied() {
        let mut a = row(Method::FCGrad, 0, 1, 0, 1.0);
        let mut b = a.clone();
        b.beta = 0.7;
        b.run_id = "x".into();
        assert_eq!(aggregate(&[a.clone()], "mean").keys().next().unwrap(), "fcgrad");
        a.run_id = "y".into();
        let s = aggregate(&[a, b], "mean");
        assert!(s.contains_key("fcgrad b=0.5") && s.contains_key("fcgrad b=0.7"));
    }

    #[test]
    fn renders_single_point() {
        let dir = tempfile::tempdir().unwrap();
        let files = render(&[row(Method::Col, 0, 10, 0, 1.0)], dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        let svg = std::fs::read_to_string(dir.path().join("mean.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("circle"));
    }
}

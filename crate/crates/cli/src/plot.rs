//! SVG rendering of the CSV files written by the other subcommands.
//!
//! Three-column files whose last column is `cost` are drawn as heat maps;
//! anything else as one series per numeric column against the first one
//! (`instant_ns` when present).

use std::path::Path;

use plotters::prelude::*;

use transmon_noise::{Error, Result};

struct Table {
    headers: Vec<String>,
    /// Column-major; `None` where a cell is empty or not a number.
    columns: Vec<Vec<Option<f64>>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(String::from)
        .collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(rec.get(c).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite()));
        }
    }
    if columns.first().is_none_or(|c| c.is_empty()) {
        return Err(Error::MissingData(format!("{} has no data rows", path.display())));
    }
    Ok(Table { headers, columns })
}

fn plot_error<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders `input` to `output`; touches nothing else.
pub fn render_csv(input: &Path, output: &Path, title: Option<&str>) -> Result<()> {
    let table = read_table(input)?;
    let title = title.map(String::from).unwrap_or_else(|| {
        input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    if table.headers.len() == 3 && table.headers[2] == "cost" {
        heat_map(&table, output, &title)
    } else {
        series(&table, output, &title)
    }
}

fn series(table: &Table, output: &Path, title: &str) -> Result<()> {
    let xi = table.headers.iter().position(|h| h == "instant_ns").unwrap_or(0);
    let numeric: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != xi && table.columns[c].iter().any(Option::is_some))
        .filter(|&c| !table.headers[c].ends_with("_deg"))
        .collect();
    if numeric.is_empty() {
        return Err(Error::MissingData("no numeric columns to plot".into()));
    }
    let x = &table.columns[xi];
    let pts = |c: usize| -> Vec<(f64, f64)> {
        x.iter().zip(&table.columns[c]).filter_map(|(a, b)| Some((((*a)?), (*b)?))).collect()
    };
    let all: Vec<(f64, f64)> = numeric.iter().flat_map(|&c| pts(c)).collect();
    if all.is_empty() {
        return Err(Error::MissingData(format!("column {} has no numbers", table.headers[xi])));
    }
    let (x0, x1) = padded(all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = padded(all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
    let root = SVGBackend::new(output, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_error)?;
    chart.configure_mesh().x_desc(&table.headers[xi]).draw().map_err(plot_error)?;
    let monotone = x.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
    for (k, &c) in numeric.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        let p = pts(c);
        let anno = if monotone {
            chart.draw_series(LineSeries::new(p, color.stroke_width(2))).map_err(plot_error)?
        } else {
            chart.draw_series(p.into_iter().map(|q| Circle::new(q, 2, color.filled()))).map_err(plot_error)?
        };
        anno.label(table.headers[c].clone())
            .legend(move |(lx, ly)| PathElement::new(vec![(lx, ly), (lx + 20, ly)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

/// Cell edges halfway between neighbouring grid values.
fn edges(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 1 {
        return vec![values[0] - 0.5, values[0] + 0.5];
    }
    let mut e = Vec::with_capacity(n + 1);
    e.push(values[0] - 0.5 * (values[1] - values[0]));
    for w in values.windows(2) {
        e.push(0.5 * (w[0] + w[1]));
    }
    e.push(values[n - 1] + 0.5 * (values[n - 1] - values[n - 2]));
    e
}

fn heat_map(table: &Table, output: &Path, title: &str) -> Result<()> {
    let cells: Vec<(f64, f64, f64)> = (0..table.columns[0].len())
        .filter_map(|r| Some((table.columns[0][r]?, table.columns[1][r]?, table.columns[2][r]?)))
        .collect();
    let unique = |k: usize| {
        let mut v: Vec<f64> = cells.iter().map(|c| if k == 0 { c.0 } else { c.1 }).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (u1, u2) = (unique(0), unique(1));
    if u1.is_empty() || u2.is_empty() {
        return Err(Error::MissingData("surface has no cells".into()));
    }
    let (e1, e2) = (edges(&u1), edges(&u2));
    let (cmin, cmax) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.2), b.max(c.2)));
    let root = SVGBackend::new(output, (700, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(e1[0]..e1[e1.len() - 1], e2[0]..e2[e2.len() - 1])
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc(&table.headers[0])
        .y_desc(&table.headers[1])
        .draw()
        .map_err(plot_error)?;
    let span = if cmax > cmin { cmax - cmin } else { 1.0 };
    chart
        .draw_series(cells.iter().map(|&(a, b, c)| {
            let i = u1.partition_point(|&v| v < a);
            let j = u2.partition_point(|&v| v < b);
            let s = (c - cmin) / span;
            let color = HSLColor(0.7 * (1.0 - s), 0.8, 0.25 + 0.5 * s);
            Rectangle::new([(e1[i], e2[j]), (e1[i + 1], e2[j + 1])], color.filled())
        }))
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

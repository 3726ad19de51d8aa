//! CSV to SVG line charts (loss curves, sweep summaries, recall, mAP@k).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use plotters::prelude::*;

use crate::CliError;

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// CSV file with a header row.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// SVG file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Column for the x axis.
    #[arg(long)]
    pub x: String,
    /// Columns to draw as series (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<String>,
    /// Column whose distinct values split each y column into separate series.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, default_value = "")]
    pub title: String,
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn read_series(path: &Path, a: &PlotArgs) -> Result<Series, CliError> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("no column named '{name}'")))
    };
    let xi = col(&a.x)?;
    let yis = a.y.iter().map(|y| col(y)).collect::<Result<Vec<_>, _>>()?;
    let gi = a.group.as_deref().map(col).transpose()?;
    let mut out = Series::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        // Non-numeric x or y (e.g. "mean" rows, empty cells) are skipped.
        let Ok(x) = rec[xi].parse::<f64>() else { continue };
        for (yname, &yi) in a.y.iter().zip(&yis) {
            let Ok(y) = rec[yi].parse::<f64>() else { continue };
            let name = match gi {
                Some(g) => format!("{yname} {}", &rec[g]),
                None => yname.clone(),
            };
            out.entry(name).or_default().push((x, y));
        }
    }
    if out.is_empty() {
        return Err(bad("no numeric rows to plot".into()));
    }
    for pts in out.values_mut() {
        pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    }
    Ok(out)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let m = (hi - lo) * 0.05;
        (lo - m, hi + m)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

pub fn plot(a: PlotArgs) -> Result<(), CliError> {
    if !a.input.is_file() {
        return Err(CliError::Validation(format!(
            "input {} does not exist",
            a.input.display()
        )));
    }
    let series = read_series(&a.input, &a)?;
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let draw_err = |e: String| CliError::Validation(format!("plotting failed: {e}"));
    {
        let root = SVGBackend::new(&a.out, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| draw_err(e.to_string()))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(&a.title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| draw_err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc(a.x.as_str())
            .y_desc(a.y.join(", "))
            .draw()
            .map_err(|e| draw_err(e.to_string()))?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(|e| draw_err(e.to_string()))?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            if pts.len() <= 50 {
                chart
                    .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                    .map_err(|e| draw_err(e.to_string()))?;
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| draw_err(e.to_string()))?;
        root.present().map_err(|e| draw_err(e.to_string()))?;
    }
    println!("{}", a.out.display());
    Ok(())
}

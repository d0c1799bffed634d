//! Static SVG line plots from run-folder CSVs.
//!
//! Per input folder, whichever files exist are rendered:
//! `params.csv` → `<run>_eta.svg` and `<run>_dv.svg`;
//! `decomposition.csv` → `<run>_station_<id>.svg` (east/north/up panels of
//! x_f, delta and x_c); `history.csv` → `<run>_loss.svg`;
//! `comparison.csv` → `<run>_comparison.svg`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::manifest::RunBuilder;
use crate::CliError;

const SIZE: (u32, u32) = (960, 540);
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |e: csv::Error| CliError::Validation(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(bad)?;
        let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("{}: missing column `{name}`", path.display())))
    }

    /// Numeric column; empty cells become NaN and are skipped when drawing.
    fn numbers(&self, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
        let j = self.col(name, path)?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r[j].trim();
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse()
                        .map_err(|_| CliError::Validation(format!("{}: `{cell}` in `{name}` is not a number", path.display())))
                }
            })
            .collect()
    }
}

struct Series<'a> {
    label: &'a str,
    xs: &'a [f64],
    ys: &'a [f64],
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(lo.abs() * 0.05) };
    (lo - pad, hi + pad)
}

fn draw_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    x_label: &str,
    series: &[Series<'_>],
) -> Result<(), CliError> {
    let err = |e: DrawingAreaErrorKind<DB::ErrorType>| CliError::Runtime(format!("plot `{title}`: {e:?}"));
    let (x0, x1) = extent(series.iter().flat_map(|s| s.xs.iter().copied()));
    let (y0, y1) = extent(series.iter().flat_map(|s| s.ys.iter().copied()));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(8)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart.configure_mesh().x_desc(x_label).draw().map_err(err)?;
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<(f64, f64)> = s
            .xs
            .iter()
            .zip(s.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (*x, *y))
            .collect();
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(err)?
            .label(s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    Ok(())
}

struct Renderer {
    dir: PathBuf,
    stamp: Option<String>,
    written: Vec<String>,
}

impl Renderer {
    fn save(&mut self, name: String, panels: &[(&str, &str, Vec<Series<'_>>)]) -> Result<(), CliError> {
        let mut svg = String::new();
        {
            let height = SIZE.1 * panels.len().max(1) as u32 / if panels.len() > 1 { 2 } else { 1 };
            let root = SVGBackend::with_string(&mut svg, (SIZE.0, height.max(SIZE.1))).into_drawing_area();
            root.fill(&WHITE)
                .map_err(|e| CliError::Runtime(format!("plot `{name}`: {e:?}")))?;
            let areas = root.split_evenly((panels.len().max(1), 1));
            for ((title, x_label, series), area) in panels.iter().zip(&areas) {
                draw_panel(area, title, x_label, series)?;
            }
            root.present()
                .map_err(|e| CliError::Runtime(format!("plot `{name}`: {e:?}")))?;
        }
        if let Some(stamp) = &self.stamp {
            let at = svg.find('>').map_or(0, |i| i + 1);
            svg.insert_str(at, &format!("\n<!-- generated {stamp} -->"));
        }
        let path = self.dir.join(&name);
        std::fs::write(&path, svg).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.written.push(name);
        Ok(())
    }
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "run".into())
}

fn render_params(r: &mut Renderer, prefix: &str, path: &Path) -> Result<(), CliError> {
    let t = Table::read(path)?;
    let day = t.numbers("day", path)?;
    let names = ["eta_x_m", "eta_y_m", "eta_depth", "eta_dv"];
    let cols = names.iter().map(|n| t.numbers(n, path)).collect::<Result<Vec<_>, _>>()?;
    let eta: Vec<Series<'_>> = names
        .iter()
        .zip(&cols)
        .map(|(n, ys)| Series { label: n, xs: &day, ys })
        .collect();
    r.save(format!("{prefix}_eta.svg"), &[("normalized variables", "day", eta)])?;
    let dv = t.numbers("dv", path)?;
    r.save(
        format!("{prefix}_dv.svg"),
        &[("volume change (m^3)", "day", vec![Series { label: "dv", xs: &day, ys: &dv }])],
    )
}

fn render_decomposition(r: &mut Renderer, prefix: &str, path: &Path) -> Result<(), CliError> {
    let t = Table::read(path)?;
    let (js, jc) = (t.col("station", path)?, t.col("component", path)?);
    let dirs = ["east_mm", "north_mm", "up_mm"];
    let vals = dirs.iter().map(|d| t.numbers(d, path)).collect::<Result<Vec<_>, _>>()?;
    // station → component → direction → values in sample order
    let mut by: BTreeMap<&str, BTreeMap<&str, [Vec<f64>; 3]>> = BTreeMap::new();
    for (i, row) in t.rows.iter().enumerate() {
        let slot = by.entry(&row[js]).or_default().entry(&row[jc]).or_default();
        for k in 0..3 {
            slot[k].push(vals[k][i]);
        }
    }
    for (station, comps) in &by {
        let n = comps.values().map(|c| c[0].len()).max().unwrap_or(0);
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let panels: Vec<(&str, &str, Vec<Series<'_>>)> = dirs
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let series = ["x_f", "delta", "x_c"]
                    .iter()
                    .filter_map(|c| comps.get(c).map(|v| Series { label: c, xs: &xs, ys: &v[k] }))
                    .collect();
                (*d, "test sample", series)
            })
            .collect();
        r.save(format!("{prefix}_station_{station}.svg"), &panels)?;
    }
    Ok(())
}

fn render_history(r: &mut Renderer, prefix: &str, path: &Path) -> Result<(), CliError> {
    let t = Table::read(path)?;
    let epoch = t.numbers("epoch", path)?;
    let total = t.numbers("total", path)?;
    let val = t.numbers("val_rec", path)?;
    r.save(
        format!("{prefix}_loss.svg"),
        &[(
            "training loss",
            "epoch",
            vec![
                Series { label: "total", xs: &epoch, ys: &total },
                Series { label: "val_rec", xs: &epoch, ys: &val },
            ],
        )],
    )
}

fn render_comparison(r: &mut Renderer, prefix: &str, path: &Path) -> Result<(), CliError> {
    let t = Table::read(path)?;
    let jv = t.col("value", path)?;
    let xs: Vec<f64> = (0..t.rows.len()).map(|i| i as f64).collect();
    let values: Vec<&str> = t.rows.iter().map(|row| row[jv].as_str()).collect();
    let x_label = format!("axis value: {}", values.join(" | "));
    let mse = t.numbers("test_mse", path)?;
    let loc = t.numbers("location_std_km", path)?;
    let sat = t.numbers("saturation", path)?;
    r.save(
        format!("{prefix}_comparison.svg"),
        &[
            ("test reconstruction MSE", x_label.as_str(), vec![Series { label: "test_mse", xs: &xs, ys: &mse }]),
            (
                "location spread and saturation",
                x_label.as_str(),
                vec![
                    Series { label: "location_std_km", xs: &xs, ys: &loc },
                    Series { label: "saturation", xs: &xs, ys: &sat },
                ],
            ),
        ],
    )
}

/// Renders every recognised CSV under `inputs` into a new run folder.
pub fn run(base: &Path, inputs: &[PathBuf], deterministic: bool) -> Result<PathBuf, CliError> {
    let mut b = RunBuilder::new("report", 0, String::new()).arg("deterministic", deterministic);
    for (i, dir) in inputs.iter().enumerate() {
        if !dir.is_dir() {
            return Err(CliError::Validation(format!("`--input`: `{}` is not a directory", dir.display())));
        }
        b = b.input(&format!("input{i}"), dir)?;
    }
    let mut run = b.create(base)?;
    let stamp = (!deterministic).then(|| {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        format!("unix {secs}")
    });
    let mut r = Renderer {
        dir: run.dir.clone(),
        stamp,
        written: Vec::new(),
    };
    for (i, dir) in inputs.iter().enumerate() {
        let prefix = format!("{i}-{}", run_name(dir));
        type Render = fn(&mut Renderer, &str, &Path) -> Result<(), CliError>;
        let renderers: [(&str, Render); 4] = [
            ("params.csv", render_params),
            ("decomposition.csv", render_decomposition),
            ("history.csv", render_history),
            ("comparison.csv", render_comparison),
        ];
        for (file, render) in renderers {
            let path = dir.join(file);
            if path.is_file() {
                render(&mut r, &prefix, &path)?;
            }
        }
    }
    if r.written.is_empty() {
        return Err(CliError::Validation(
            "`--input`: no params.csv, decomposition.csv, history.csv or comparison.csv found".into(),
        ));
    }
    for name in &r.written {
        run.path(name);
    }
    run.finish()
}

//! Cross-run reports: a summary table, curve CSVs and SVG figures. Output is
//! a pure function of the records, so re-running gives identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use super::record::RunRecord;
use crate::error::{Error, Result};

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt())
}

/// Records of one configuration across seeds.
#[derive(Debug, Clone)]
pub struct RunGroup<'a> {
    pub name: String,
    pub records: Vec<&'a RunRecord>,
}

impl RunGroup<'_> {
    fn dataset(&self) -> String {
        self.records[0].dataset.to_string()
    }

    fn tasks(&self) -> usize {
        self.records[0].accuracy.tasks
    }

    pub fn final_average(&self) -> (f64, f64) {
        mean_std(&self.records.iter().map(|r| r.final_average()).collect::<Vec<_>>())
    }

    /// Per-seed mean of `grid[i][j]`.
    fn mean_cell(&self, i: usize, j: usize) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter_map(|r| r.accuracy.get(i, j)).collect();
        (v.len() == self.records.len()).then(|| mean_std(&v).0)
    }

    /// Mean running-average curve on a task-progress axis: task `t` spans `[t-1, t]`.
    fn mean_curve(&self) -> Vec<(f64, f64)> {
        let curves: Vec<Vec<(f64, f64)>> = self
            .records
            .iter()
            .map(|r| {
                r.curve
                    .iter()
                    .map(|p| {
                        let iters = r.iterations.get(p.task - 1).copied().unwrap_or(1).max(1);
                        ((p.task - 1) as f64 + p.step as f64 / iters as f64, p.average)
                    })
                    .collect()
            })
            .collect();
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|k| {
                let n = curves.len() as f64;
                (curves.iter().map(|c| c[k].0).sum::<f64>() / n, curves.iter().map(|c| c[k].1).sum::<f64>() / n)
            })
            .collect()
    }
}

/// Groups records by configuration name, seeds sorted ascending.
pub fn group_records(records: &[RunRecord]) -> Vec<RunGroup<'_>> {
    let mut map: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        map.entry((r.dataset.to_string(), r.name.clone())).or_default().push(r);
    }
    map.into_iter()
        .map(|((_, name), mut records)| {
            records.sort_by_key(|r| r.seed);
            RunGroup { name, records }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub name: String,
    pub method: String,
    pub seeds: usize,
    pub buffer_images: usize,
    pub final_average_mean: f64,
    pub final_average_std: f64,
    pub final_task_mean: f64,
    pub max_average_last_task: Option<f64>,
    pub generator_snapshots: usize,
}

pub fn summary_rows(groups: &[RunGroup<'_>]) -> Vec<SummaryRow> {
    groups
        .iter()
        .map(|g| {
            let (mean, std) = g.final_average();
            let first = g.records[0];
            let last_max: Vec<f64> = g.records.iter().filter_map(|r| r.max_average.last().copied().flatten()).collect();
            SummaryRow {
                dataset: g.dataset(),
                name: g.name.clone(),
                method: first.method.to_string(),
                seeds: g.records.len(),
                buffer_images: first.memory.buffer_capacity,
                final_average_mean: mean,
                final_average_std: std,
                final_task_mean: mean_std(&g.records.iter().map(|r| r.accuracy.final_task_accuracy().unwrap_or(0.0)).collect::<Vec<_>>()).0,
                max_average_last_task: (last_max.len() == g.records.len()).then(|| mean_std(&last_max).0),
                generator_snapshots: first.memory.generator_snapshots,
            }
        })
        .collect()
}

fn markdown(groups: &[RunGroup<'_>], rows: &[SummaryRow]) -> String {
    let mut s = String::from("# Continual learning report\n\n## Performance after all tasks\n\n");
    s.push_str("| dataset | run | method | seeds | buffer | final avg acc (%) | last-task acc (%) | max avg, last task (%) | generator copies |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let max = r.max_average_last_task.map_or("-".into(), |m| format!("{:.2}", 100.0 * m));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.2} ± {:.2} | {:.2} | {} | {} |",
            r.dataset,
            r.name,
            r.method,
            r.seeds,
            r.buffer_images,
            100.0 * r.final_average_mean,
            100.0 * r.final_average_std,
            100.0 * r.final_task_mean,
            max,
            r.generator_snapshots
        );
    }
    s.push_str("\n± is the sample standard deviation over seeds.\n\n## Accuracy per task (mean over seeds)\n");
    for g in groups {
        let t = g.tasks();
        let _ = write!(s, "\n### {} ({})\n\n| after task |", g.name, g.dataset());
        for j in 1..=t {
            let _ = write!(s, " task {j} |");
        }
        s.push_str(" average |\n|---|");
        s.push_str(&"---|".repeat(t + 1));
        s.push('\n');
        let done = g.records.iter().map(|r| r.accuracy.rows.len()).min().unwrap_or(0);
        for i in 0..done {
            let _ = write!(s, "| {} |", i + 1);
            for j in 0..t {
                match g.mean_cell(i, j) {
                    Some(v) => {
                        let _ = write!(s, " {:.2} |", 100.0 * v);
                    }
                    None => s.push_str(" |"),
                }
            }
            let avg: Vec<f64> = g.records.iter().map(|r| r.accuracy.rows[i].average()).collect();
            let _ = writeln!(s, " {:.2} |", 100.0 * mean_std(&avg).0);
        }
    }
    s
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Running average accuracy of every run on one dataset, dashed lines at
/// task switches.
fn plot_average_curves(groups: &[&RunGroup<'_>], title: &str, path: &Path) -> Result<()> {
    let tasks = groups.iter().map(|g| g.tasks()).max().unwrap_or(1);
    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..tasks as f64, 0f64..1f64)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("task").y_desc("average accuracy").disable_mesh().draw().map_err(plot_err)?;
    for t in 1..tasks {
        let x = t as f64;
        chart.draw_series(DashedLineSeries::new([(x, 0.0), (x, 1.0)], 6, 4, BLACK.mix(0.4).stroke_width(1))).map_err(plot_err)?;
    }
    for (k, g) in groups.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        let curve = g.mean_curve();
        chart
            .draw_series(LineSeries::new(curve.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(g.name.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(curve.iter().map(|&p| Circle::new(p, 2, color.filled()))).map_err(plot_err)?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Accuracy of each task's classes as later tasks are learned.
fn plot_per_task(group: &RunGroup<'_>, path: &Path) -> Result<()> {
    let tasks = group.tasks();
    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: accuracy per task", group.name), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.5f64..tasks as f64 + 0.5, 0f64..1f64)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("after task").y_desc("accuracy").disable_mesh().draw().map_err(plot_err)?;
    let done = group.records.iter().map(|r| r.accuracy.rows.len()).min().unwrap_or(0);
    for j in 0..tasks {
        let color = Palette99::pick(j).to_rgba();
        let pts: Vec<(f64, f64)> = (j..done).filter_map(|i| group.mean_cell(i, j).map(|v| ((i + 1) as f64, v))).collect();
        if pts.is_empty() {
            continue;
        }
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("task {}", j + 1))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[derive(Serialize)]
struct CurveRow<'a> {
    dataset: String,
    name: &'a str,
    seed: u64,
    task: usize,
    step: usize,
    average: f64,
}

/// Writes `report.md`, `summary.csv`, `curves.csv` and SVG figures into
/// `out`. Returns the written paths.
pub fn emit_report(records: &[RunRecord], out: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::contract("no run records to report"));
    }
    fs::create_dir_all(out)?;
    let groups = group_records(records);
    let rows = summary_rows(&groups);
    let mut written = Vec::new();

    let md = out.join("report.md");
    fs::write(&md, markdown(&groups, &rows))?;
    written.push(md);

    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let summary = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    written.push(summary);

    let curves = out.join("curves.csv");
    let mut w = csv::Writer::from_path(&curves).map_err(csv_err)?;
    for g in &groups {
        for r in &g.records {
            for p in &r.curve {
                w.serialize(CurveRow { dataset: r.dataset.to_string(), name: &r.name, seed: r.seed, task: p.task, step: p.step, average: p.average }).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    written.push(curves);

    let mut by_dataset: BTreeMap<String, Vec<&RunGroup<'_>>> = BTreeMap::new();
    for g in &groups {
        by_dataset.entry(g.dataset()).or_default().push(g);
    }
    for (dataset, gs) in &by_dataset {
        let path = out.join(format!("average-{}.svg", file_stem(dataset)));
        plot_average_curves(gs, &format!("{dataset}: average accuracy over seen classes"), &path)?;
        written.push(path);
    }
    for g in &groups {
        let path = out.join(format!("tasks-{}-{}.svg", file_stem(&g.dataset()), file_stem(&g.name)));
        plot_per_task(g, &path)?;
        written.push(path);
    }
    Ok(written)
}

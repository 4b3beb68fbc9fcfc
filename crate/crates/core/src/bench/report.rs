use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::harness::{BenchMode, BenchRow};
use super::BenchError;

/// Reads rows written by [`super::write_rows`]; errors carry the line.
pub fn read_rows(source: &str, r: impl Read) -> Result<Vec<BenchRow>, BenchError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for result in reader.deserialize::<BenchRow>() {
        let row = result.map_err(|e| BenchError::Parse {
            file: source.to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            },
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_rows_file(path: &Path) -> Result<Vec<BenchRow>, BenchError> {
    let file =
        std::fs::File::open(path).map_err(|e| BenchError::Io(path.display().to_string(), e))?;
    read_rows(&path.display().to_string(), file)
}

/// Best case per worker count for one mode and image count.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCell {
    pub scenario: String,
    pub makespan_ms: f64,
    pub throughput_ratio: Option<f64>,
}

/// (mode, n_images) -> workers -> fastest case.
pub type Summary = BTreeMap<(String, usize), BTreeMap<usize, SummaryCell>>;

pub fn summarize(rows: &[BenchRow]) -> Summary {
    let mut out = Summary::new();
    for r in rows {
        let cell = SummaryCell {
            scenario: r.scenario.clone(),
            makespan_ms: r.makespan_ms,
            throughput_ratio: r.throughput_ratio,
        };
        let best = out
            .entry((r.mode.name().to_string(), r.n_images))
            .or_default()
            .entry(r.workers)
            .or_insert_with(|| cell.clone());
        // fastest wins; equal times keep the earlier case id
        let better = cell.makespan_ms < best.makespan_ms
            || (cell.makespan_ms == best.makespan_ms && cell.scenario < best.scenario);
        if better {
            *best = cell;
        }
    }
    out
}

const NUMERALS: [&str; 4] = ["", "I", "II", "III"];
const COUNTS: [&str; 4] = ["", "One", "Two", "Three"];

pub fn summary_markdown(summary: &Summary) -> String {
    let mut md = String::from("# Benchmark summary\n");
    if summary.is_empty() {
        md.push_str("\nNo benchmark rows.\n");
        return md;
    }
    for ((mode, n), by_workers) in summary {
        let _ = write!(
            md,
            "\n## {mode}, {n} images\n\n| Case | # worker | Best case | Throughput | Time (ms) |\n|---|---|---|---|---|\n"
        );
        for (&w, cell) in by_workers {
            let case = NUMERALS.get(w).copied().unwrap_or("-");
            let count = COUNTS
                .get(w)
                .map_or_else(|| w.to_string(), |c| c.to_string());
            let pct = cell
                .throughput_ratio
                .map_or_else(|| "-".to_string(), |r| format!("{:.0}%", r * 100.0));
            let _ = writeln!(
                md,
                "| {case} | {count} | {} | {pct} | {:.3} |",
                cell.scenario, cell.makespan_ms
            );
        }
    }
    md
}

/// Per mode: `n_images` and the best makespan for each worker count, one
/// series per column.
pub fn figure_series(summary: &Summary) -> BTreeMap<String, String> {
    type Points<'a> = Vec<(usize, &'a BTreeMap<usize, SummaryCell>)>;
    let mut by_mode: BTreeMap<String, Points> = BTreeMap::new();
    for ((mode, n), cells) in summary {
        by_mode.entry(mode.clone()).or_default().push((*n, cells));
    }
    by_mode
        .into_iter()
        .map(|(mode, points)| {
            let mut workers: Vec<usize> =
                points.iter().flat_map(|(_, c)| c.keys().copied()).collect();
            workers.sort_unstable();
            workers.dedup();
            let mut csv = String::from("n_images");
            for w in &workers {
                let _ = write!(csv, ",workers_{w}_ms");
            }
            csv.push('\n');
            for (n, cells) in points {
                csv.push_str(&n.to_string());
                for w in &workers {
                    csv.push(',');
                    if let Some(c) = cells.get(w) {
                        let _ = write!(csv, "{:.6}", c.makespan_ms);
                    }
                }
                csv.push('\n');
            }
            (format!("curve_{mode}.csv"), csv)
        })
        .collect()
}

/// Writes `summary.md` and the series files into `out`; returns their paths.
pub fn write_report(rows: &[BenchRow], out: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(out).map_err(|e| BenchError::Io(out.display().to_string(), e))?;
    let summary = summarize(rows);
    let mut files = vec![(String::from("summary.md"), summary_markdown(&summary))];
    files.extend(figure_series(&summary));
    files
        .into_iter()
        .map(|(name, body)| {
            let path = out.join(name);
            std::fs::write(&path, body)
                .map_err(|e| BenchError::Io(path.display().to_string(), e))?;
            Ok(path)
        })
        .collect()
}

/// Rows from one mode only.
pub fn rows_for_mode(rows: &[BenchRow], mode: BenchMode) -> Vec<BenchRow> {
    rows.iter().filter(|r| r.mode == mode).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::harness::write_rows;

    fn row(s: &str, w: usize, n: usize, ms: f64, ratio: f64) -> BenchRow {
        BenchRow {
            scenario: s.into(),
            mode: BenchMode::Simulate,
            workers: w,
            n_images: n,
            makespan_ms: ms,
            time_per_image_ms: Some(ms / n as f64),
            throughput_ratio: Some(ratio),
            steady_ratio: None,
        }
    }

    #[test]
    fn picks_fastest_per_worker_count() {
        let rows = vec![
            row("I.1", 1, 100, 540.0, 1.0),
            row("II.1", 2, 100, 400.0, 1.35),
            row("II.2", 2, 100, 350.0, 1.54),
            row("III.2", 3, 100, 330.0, 1.63),
            row("III.1", 3, 100, 312.0, 1.73),
        ];
        let md = summary_markdown(&summarize(&rows));
        assert!(md.contains("| II | Two | II.2 | 154% | 350.000 |"), "{md}");
        assert!(
            md.contains("| III | Three | III.1 | 173% | 312.000 |"),
            "{md}"
        );
        let series = figure_series(&summarize(&rows));
        assert_eq!(
            series["curve_simulate.csv"],
            "n_images,workers_1_ms,workers_2_ms,workers_3_ms\n100,540.000000,350.000000,312.000000\n"
        );
    }

    #[test]
    fn empty_input() {
        let md = summary_markdown(&summarize(&[]));
        assert!(md.contains("No benchmark rows"));
        assert!(figure_series(&summarize(&[])).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            row("I.1", 1, 100, 540.0, 1.0),
            row("II.2", 2, 100, 350.0, 1.5),
        ];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        assert_eq!(read_rows("mem", buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn malformed_csv_names_line() {
        let text = "scenario,mode,workers,n_images,makespan_ms,time_per_image_ms,throughput_ratio,steady_ratio\n\
                    I.1,simulate,1,100,540.0,5.4,1.0,1.0\n\
                    II.2,simulate,two,100,350.0,3.5,1.5,1.5\n";
        let err = read_rows("runs.csv", text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, BenchError::Parse { line: 3, .. }), "{msg}");
        assert!(msg.contains("runs.csv") && msg.contains("line 3"), "{msg}");
    }
}

//! Chained compaction over a grid of weight pairs.
//!
//! Each map is compacted from the map of the immediately larger weight pair:
//! `(i, j)` from `(i, j - 1)`, the first column from the row above, and
//! `(0, 0)` from the baseline.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::map_depth_stats;
use crate::compactor::{compact, CompactionReport, MeanChildModel};
use crate::error::Result;
use crate::evaluator::{count_records, evaluate, EvalOptions, GroundTruth};
use crate::lookup::MapFile;

pub const DEFAULT_WEIGHTS: [f64; 6] = [4.0, 2.0, 1.0, 0.5, 0.25, 0.0];

/// Lookup log and ground truth used to score every map of a sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepEval {
    pub log: Vec<String>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Descending weights; applied to both segments.
    pub weights: Vec<f64>,
    /// Defaults to a fit on the baseline's own depth statistics.
    pub model: Option<MeanChildModel>,
    pub eval: Option<SweepEval>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            weights: DEFAULT_WEIGHTS.to_vec(),
            model: None,
            eval: None,
        }
    }
}

/// One row of the sweep summary. `wh`/`wp` are `None` for the baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub input: String,
    pub output: PathBuf,
    pub wh: Option<f64>,
    pub wp: Option<f64>,
    pub lines: u64,
    pub size: u64,
    pub gzipped: u64,
    pub rollups: u64,
    pub seconds: f64,
    pub relative_cost: Option<f64>,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
}

/// Grid cell whose output feeds cell `(i, j)`; `None` means the baseline.
pub fn chain_parent(i: usize, j: usize) -> Option<(usize, usize)> {
    match (i, j) {
        (0, 0) => None,
        (i, 0) => Some((i - 1, 0)),
        (i, j) => Some((i, j - 1)),
    }
}

pub fn map_file_name(wh: f64, wp: f64) -> String {
    format!("h{wh}_p{wp}.ukvs")
}

struct CountingWriter(u64);

impl Write for CountingWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn gzipped_size(path: &Path) -> Result<u64> {
    let mut enc = GzEncoder::new(CountingWriter(0), Compression::default());
    io::copy(&mut File::open(path)?, &mut enc)?;
    Ok(enc.finish()?.0)
}

fn score(path: &Path, eval: Option<&SweepEval>, row: &mut SweepRow) -> Result<()> {
    let Some(eval) = eval else { return Ok(()) };
    let keys = count_records(BufReader::new(File::open(path)?))?;
    let mut map = MapFile::open(path)?;
    let report = evaluate(&mut map, keys, &eval.log, &eval.truth, EvalOptions::default())?;
    row.relative_cost = Some(report.relative_cost);
    row.accuracy = Some(report.accuracy);
    row.recall = Some(report.recall);
    Ok(())
}

fn name_of(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn run_cell(model: &MeanChildModel, input: &Path, outdir: &Path, wh: f64, wp: f64, eval: Option<&SweepEval>) -> Result<SweepRow> {
    let output = outdir.join(map_file_name(wh, wp));
    let params = model.params(wh, wp);
    let sink = File::options().read(true).write(true).create(true).truncate(false).open(&output)?;
    let report: CompactionReport = compact(BufReader::new(File::open(input)?), BufWriter::new(sink), &params)?;
    log::info!("{} -> {}: {} -> {} lines", name_of(input), name_of(&output), report.lines_in, report.lines_out);
    let gzipped = gzipped_size(&output)?;
    let mut row = SweepRow {
        input: name_of(input),
        wh: Some(wh),
        wp: Some(wp),
        lines: report.lines_out,
        size: report.bytes_out,
        gzipped,
        rollups: report.rollups,
        seconds: report.wall_seconds,
        output,
        relative_cost: None,
        accuracy: None,
        recall: None,
    };
    score(&outdir.join(map_file_name(wh, wp)), eval, &mut row)?;
    Ok(row)
}

/// Runs the full chained sweep over `baseline`, writing one map per weight
/// pair into `outdir`. Rows come back baseline first, then in grid order.
pub fn sweep(baseline: &Path, outdir: &Path, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(outdir)?;
    let model = match opts.model {
        Some(m) => m,
        None => MeanChildModel::fit(&map_depth_stats(BufReader::new(File::open(baseline)?))?)?,
    };
    let eval = opts.eval.as_ref();
    let w = &opts.weights;

    let mut base = SweepRow {
        input: name_of(baseline),
        output: baseline.to_path_buf(),
        wh: None,
        wp: None,
        lines: count_records(BufReader::new(File::open(baseline)?))?,
        size: fs::metadata(baseline)?.len(),
        gzipped: gzipped_size(baseline)?,
        rollups: 0,
        seconds: 0.0,
        relative_cost: None,
        accuracy: None,
        recall: None,
    };
    score(baseline, eval, &mut base)?;
    if w.is_empty() {
        return Ok(vec![base]);
    }

    let mut column = Vec::with_capacity(w.len());
    let mut input = baseline.to_path_buf();
    for &wh in w {
        let row = run_cell(&model, &input, outdir, wh, w[0], eval)?;
        input = row.output.clone();
        column.push(row);
    }
    let rows: Vec<Vec<SweepRow>> = column
        .into_par_iter()
        .map(|first| {
            let wh = first.wh.unwrap_or_default();
            let mut input = first.output.clone();
            let mut row = vec![first];
            for &wp in &w[1..] {
                let cell = run_cell(&model, &input, outdir, wh, wp, eval)?;
                input = cell.output.clone();
                row.push(cell);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(std::iter::once(base).chain(rows.into_iter().flatten()).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"))
}

/// Summary with columns Input, Wh, Wp, Lines, Size, Gzipped, Rollups, Time,
/// RelCost, Accuracy.
pub fn write_summary_tsv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "Input\tWh\tWp\tLines\tSize\tGzipped\tRollups\tTime\tRelCost\tAccuracy")?;
    for r in rows {
        let w = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| v.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{}\t{}",
            r.input,
            w(r.wh),
            w(r.wp),
            r.lines,
            r.size,
            r.gzipped,
            r.rollups,
            r.seconds,
            opt(r.relative_cost),
            opt(r.accuracy)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::PowerLawFit;
    use crate::ukvs::{write_document, FrequencyValue, UkvsRecord};

    #[test]
    fn chain_topology() {
        assert_eq!(chain_parent(0, 0), None);
        assert_eq!(chain_parent(3, 0), Some((2, 0)));
        assert_eq!(chain_parent(3, 4), Some((3, 3)));
        assert_eq!(map_file_name(0.25, 4.0), "h0.25_p4.ukvs");
    }

    fn fixture(dir: &Path) -> PathBuf {
        let mut records = Vec::new();
        for h in 0..6 {
            for s in 0..8 {
                for p in 0..(s + 1) {
                    records.push(format!("com,site{h},s{s})/d{p}/x"));
                }
            }
        }
        records.sort();
        let path = dir.join("base.ukvs");
        let recs = records.into_iter().map(|k| UkvsRecord::new(k, FrequencyValue::urim(2)));
        write_document(&[], recs, File::create(&path).unwrap(), false).unwrap();
        path
    }

    #[test]
    fn sweep_writes_chained_grid() {
        let dir = tempfile::tempdir().unwrap();
        let base = fixture(dir.path());
        let flat = PowerLawFit { a: 2.0, k: 0.0, rms_residual: 0.0 };
        let opts = SweepOptions {
            weights: vec![2.0, 1.0, 0.0],
            model: Some(MeanChildModel { host: flat, path: flat }),
            eval: Some(SweepEval {
                log: vec!["http://s0.site1.com/d0/x".into(), "http://s3.site1.com/d9/x".into()],
                truth: GroundTruth::from_map(BufReader::new(File::open(&base).unwrap())).unwrap(),
            }),
        };
        let out = dir.path().join("out");
        let rows = sweep(&base, &out, &opts).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[0].accuracy, Some(1.0));
        for r in &rows {
            assert_eq!(r.recall, Some(1.0));
            assert!(r.output.exists());
        }
        for i in 0..3 {
            for j in 1..3 {
                assert!(rows[1 + i * 3 + j].lines <= rows[i * 3 + j].lines);
            }
        }
        assert_eq!(rows[1 + 2].input, "h2_p1.ukvs");
        let mut tsv = Vec::new();
        write_summary_tsv(&rows, &mut tsv).unwrap();
        assert_eq!(String::from_utf8(tsv).unwrap().lines().count(), 11);
    }
}

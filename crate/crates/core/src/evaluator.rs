//! Routing quality of a MementoMap against known holdings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Seek};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lookup::{Disposition, MapFile};
use crate::surt::{canonicalize, hxpx_key, HxPxKey};
use crate::ukvs::{Line, MapReader};

/// HxPx keys known to be archived, plus the URI-R count used as the
/// denominator of relative cost.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub present_keys: HashSet<String>,
    pub urir_count: u64,
}

impl GroundTruth {
    /// From a URI list; URI-Rs are counted by full SURT, keys by HxPx.
    pub fn from_uris<R: BufRead>(input: R) -> Result<Self> {
        let mut keys = HashSet::new();
        let mut urirs = HashSet::new();
        for line in input.lines() {
            let line = line?;
            let uri = line.trim();
            if uri.is_empty() {
                continue;
            }
            match canonicalize(uri) {
                Ok(c) => {
                    keys.insert(c.to_hxpx().key.into_string());
                    urirs.insert(c.to_surt().into_string());
                }
                Err(e) => log::debug!("truth: {e}"),
            }
        }
        Ok(GroundTruth {
            urir_count: urirs.len() as u64,
            present_keys: keys,
        })
    }

    /// From a baseline map. Without a better figure the URI-R count is the
    /// number of keys.
    pub fn from_map<R: BufRead>(input: R) -> Result<Self> {
        let mut keys = HashSet::new();
        for line in MapReader::new(input) {
            if let Line::Record(r) = line? {
                if !crate::surt::is_wildcard(&r.key) && !r.frequency.is_blacklist() {
                    keys.insert(HxPxKey::parse(&r.key)?.key.into_string());
                }
            }
        }
        Ok(GroundTruth {
            urir_count: keys.len() as u64,
            present_keys: keys,
        })
    }

    pub fn contains(&self, hxpx: &str) -> bool {
        self.present_keys.contains(hxpx)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub relative_cost: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub lookups: u64,
    pub map_keys: u64,
    pub skipped: u64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Lookups\t{}", self.lookups)?;
        writeln!(f, "Map keys\t{}", self.map_keys)?;
        writeln!(f, "Relative cost\t{:.6}", self.relative_cost)?;
        writeln!(f, "Accuracy\t{:.6}", self.accuracy)?;
        writeln!(f, "Recall\t{:.6}", self.recall)?;
        writeln!(f, "Precision\t{:.6}", self.precision)?;
        write!(f, "TP/TN/FP/FN\t{}/{}/{}/{}", self.tp, self.tn, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Score every log line instead of unique HxPx keys.
    pub raw: bool,
}

/// Number of data records in a map stream.
pub fn count_records<R: BufRead>(input: R) -> Result<u64> {
    let mut n = 0;
    for line in MapReader::new(input).unchecked() {
        if let Line::Record(_) = line? {
            n += 1;
        }
    }
    Ok(n)
}

/// Scores `map` on the URIs of `log`. Predicted present means a match with
/// a non-zero URI-M count; actually present means the URI's HxPx key is in
/// `truth`.
pub fn evaluate<R, I, S>(map: &mut MapFile<R>, map_keys: u64, log: I, truth: &GroundTruth, opts: EvalOptions) -> Result<EvalReport>
where
    R: Read + Seek,
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut report = EvalReport {
        map_keys,
        ..EvalReport::default()
    };
    let mut seen = HashSet::new();
    for uri in log {
        let uri = uri.as_ref().trim();
        if uri.is_empty() {
            continue;
        }
        let key = match hxpx_key(uri) {
            Ok(k) => k.key.into_string(),
            Err(e) => {
                log::debug!("log: {e}");
                report.skipped += 1;
                continue;
            }
        };
        if !opts.raw && !seen.insert(key.clone()) {
            continue;
        }
        let predicted = match map.lookup_key(&key)? {
            Some(r) => r.disposition() == Disposition::Present && r.frequency.urim.value >= 1,
            None => false,
        };
        let actual = truth.contains(&key);
        match (predicted, actual) {
            (true, true) => report.tp += 1,
            (false, false) => report.tn += 1,
            (true, false) => report.fp += 1,
            (false, true) => report.fn_ += 1,
        }
        report.lookups += 1;
    }
    if report.lookups == 0 {
        return Err(Error::EmptyLog);
    }
    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    report.accuracy = ratio(report.tp + report.tn, report.lookups);
    report.recall = ratio(report.tp, report.tp + report.fn_);
    report.precision = ratio(report.tp, report.tp + report.fp);
    report.relative_cost = if truth.urir_count == 0 {
        0.0
    } else {
        map_keys as f64 / truth.urir_count as f64
    };
    Ok(report)
}

/// Order-of-magnitude bucket: 0 for zero, else the number of decimal digits.
pub fn magnitude_bucket(n: u64) -> usize {
    if n == 0 {
        0
    } else {
        n.ilog10() as usize + 1
    }
}

pub fn bucket_label(bucket: usize) -> String {
    const NAMES: [&str; 8] = ["Zero", "Ones", "Tens", "Hundreds", "Thousands", "TenThousands", "HundredThousands", "Millions"];
    NAMES
        .get(bucket)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("1e{}", bucket - 1))
}

/// URI-R counts bucketed by archived mementos (rows) and requests (columns).
/// Cell (0, 0) is undefined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverlapMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Option<u64>>>,
}

impl OverlapMatrix {
    pub fn get(&self, archived: usize, accessed: usize) -> Option<u64> {
        self.cells.get(archived)?.get(accessed).copied().flatten()
    }

    pub fn write_tsv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "Archived\\Accessed\t{}", self.labels.join("\t"))?;
        for (label, row) in self.labels.iter().zip(&self.cells) {
            let cells: Vec<String> = row.iter().map(|c| c.map_or("NA".into(), |v| v.to_string())).collect();
            writeln!(out, "{label}\t{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

pub fn overlap_matrix<A, B>(archive: A, access: B) -> OverlapMatrix
where
    A: IntoIterator<Item = (String, u64)>,
    B: IntoIterator<Item = (String, u64)>,
{
    let mut archived: HashMap<String, u64> = HashMap::new();
    for (k, c) in archive {
        *archived.entry(k).or_default() += c;
    }
    let mut accessed: HashMap<String, u64> = HashMap::new();
    for (k, c) in access {
        *accessed.entry(k).or_default() += c;
    }
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (k, &a) in &archived {
        let r = accessed.get(k).copied().unwrap_or(0);
        *counts.entry((magnitude_bucket(a), magnitude_bucket(r))).or_default() += 1;
    }
    for (k, &r) in &accessed {
        if !archived.contains_key(k) {
            *counts.entry((0, magnitude_bucket(r))).or_default() += 1;
        }
    }
    let size = counts.keys().map(|&(a, b)| a.max(b)).max().unwrap_or(0) + 1;
    let mut cells = vec![vec![Some(0); size]; size];
    for ((a, b), n) in counts {
        cells[a][b] = Some(n);
    }
    cells[0][0] = None;
    OverlapMatrix {
        labels: (0..size).map(bucket_label).collect(),
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn map(text: &str) -> MapFile<Cursor<Vec<u8>>> {
        MapFile::from_reader(Cursor::new(text.as_bytes().to_vec())).unwrap()
    }

    #[test]
    fn complete_profile_is_exact() {
        let truth = GroundTruth::from_uris("http://a.com/x\nhttp://a.com/y\nhttp://b.com/\n".as_bytes()).unwrap();
        let mut m = map("com,a)/x 1\ncom,a)/y 1\ncom,b)/ 1\n");
        let log = ["http://a.com/x", "http://a.com/x?q=1", "http://c.com/", "http://b.com/"];
        let r = evaluate(&mut m, 3, log, &truth, EvalOptions::default()).unwrap();
        assert_eq!((r.tp, r.tn, r.fp, r.fn_, r.lookups), (2, 1, 0, 0, 3));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.relative_cost, 1.0);
        let raw = evaluate(&mut m, 3, log, &truth, EvalOptions { raw: true }).unwrap();
        assert_eq!(raw.lookups, 4);
    }

    #[test]
    fn wildcards_trade_accuracy_not_recall() {
        let truth = GroundTruth::from_map("com,a)/x 1\ncom,a)/y 1\n".as_bytes()).unwrap();
        let mut m = map("com,a)/* 2\n");
        let log = ["http://a.com/x", "http://a.com/y", "http://a.com/z"];
        let r = evaluate(&mut m, 1, log, &truth, EvalOptions::default()).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 1, 0));
        assert_eq!(r.recall, 1.0);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.relative_cost, 0.5);
    }

    #[test]
    fn explicit_absence_predicts_absent() {
        let truth = GroundTruth::default();
        let mut m = map("org,arxiv)/pdf/* 0\n");
        let r = evaluate(&mut m, 1, ["http://arxiv.org/pdf/1"], &truth, EvalOptions::default()).unwrap();
        assert_eq!(r.tn, 1);
        assert!(matches!(evaluate(&mut m, 1, Vec::<String>::new(), &truth, EvalOptions::default()), Err(Error::EmptyLog)));
    }

    #[test]
    fn overlap_buckets() {
        let m = overlap_matrix(vec![("a".into(), 12)], vec![("a".into(), 3)]);
        assert_eq!(m.get(2, 1), Some(1));
        assert_eq!(m.get(0, 0), None);
        let m = overlap_matrix(vec![("a".into(), 5)], vec![("b".into(), 7)]);
        assert_eq!((m.get(1, 0), m.get(0, 1)), (Some(1), Some(1)));
        assert_eq!(m.labels, ["Zero", "Ones"]);
        assert_eq!(magnitude_bucket(1000), 4);
    }
}

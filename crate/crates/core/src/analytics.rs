//! Holdings statistics: per-depth key distributions, RedQ, Gini, Pareto
//! break point and power-law fits of mean child counts.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::surt::{is_wildcard, MAX_HOST_DEPTH, MAX_PATH_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Segment {
    Host,
    Path,
}

impl Segment {
    pub fn letter(self) -> char {
        match self {
            Segment::Host => 'H',
            Segment::Path => 'P',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthStatsRow {
    pub segment: Segment,
    pub depth: usize,
    /// Last row of its segment, aggregating all deeper keys (`H10+`).
    pub overflow: bool,
    pub count: u64,
    pub sum: u64,
    pub max: u64,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub redq: f64,
    pub parents: u64,
    pub children: u64,
    pub mean_child: f64,
}

impl DepthStatsRow {
    pub fn label(&self) -> String {
        format!(
            "{}{}{}",
            self.segment.letter(),
            self.depth,
            if self.overflow { "+" } else { "" }
        )
    }
}

/// `(sum - count) / total`: the fraction of keys eliminated by chopping
/// every key at one depth.
pub fn redq(count: u64, sum: u64, total: u64) -> Result<f64> {
    if total == 0 || sum > total || count > sum {
        return Err(Error::DomainError(format!(
            "redq requires total >= sum >= count and total > 0 (count {count}, sum {sum}, total {total})"
        )));
    }
    Ok((sum - count) as f64 / total as f64)
}

/// Exact summary of a multiset of counts held as a histogram.
#[derive(Debug, Clone, Default)]
struct Histogram {
    bins: BTreeMap<u64, u64>,
}

impl Histogram {
    fn add(&mut self, value: u64) {
        *self.bins.entry(value).or_default() += 1;
    }

    fn n(&self) -> u64 {
        self.bins.values().sum()
    }

    fn total(&self) -> u128 {
        self.bins.iter().map(|(&v, &m)| v as u128 * m as u128).sum()
    }

    fn max(&self) -> u64 {
        self.bins.keys().next_back().copied().unwrap_or(0)
    }

    /// Value at 0-based rank in ascending order.
    fn nth(&self, rank: u64) -> u64 {
        let mut seen = 0;
        for (&v, &m) in &self.bins {
            seen += m;
            if rank < seen {
                return v;
            }
        }
        self.max()
    }

    fn median(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        if n % 2 == 1 {
            self.nth(n / 2) as f64
        } else {
            (self.nth(n / 2 - 1) as f64 + self.nth(n / 2) as f64) / 2.0
        }
    }

    fn mean(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            0.0
        } else {
            self.total() as f64 / n as f64
        }
    }

    /// Population standard deviation.
    fn stddev(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .bins
            .iter()
            .map(|(&v, &m)| m as f64 * (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        var.sqrt()
    }
}

#[derive(Debug, Default)]
struct Pending {
    prefix: String,
    keys: u64,
    deeper: bool,
}

#[derive(Debug, Default)]
struct DepthAccumulator {
    pending: Vec<Pending>,
    hist: Histogram,
    /// Prefixes at this depth with at least one strictly deeper key.
    with_deeper: u64,
}

impl DepthAccumulator {
    fn finalize(&mut self, p: Pending) {
        self.hist.add(p.keys);
        if p.deeper {
            self.with_deeper += 1;
        }
    }

    /// Registers a key whose prefix at this depth is `prefix`. A prefix may
    /// reappear after keys that extend it with a byte below `sep`, so such
    /// prefixes stay pending until sort order proves they are finished.
    fn push(&mut self, prefix: &str, sep: u8, deeper: bool) {
        while let Some(top) = self.pending.last_mut() {
            if top.prefix == prefix {
                top.keys += 1;
                top.deeper |= deeper;
                return;
            }
            let nests = prefix.len() > top.prefix.len()
                && prefix.starts_with(top.prefix.as_str())
                && prefix.as_bytes()[top.prefix.len()] < sep;
            if nests {
                break;
            }
            let done = self.pending.pop().expect("non-empty");
            self.finalize(done);
        }
        self.pending.push(Pending {
            prefix: prefix.to_owned(),
            keys: 1,
            deeper,
        });
    }

    fn flush(&mut self) {
        while let Some(p) = self.pending.pop() {
            self.finalize(p);
        }
    }
}

/// Streaming per-depth statistics over sorted unique HxPx keys.
#[derive(Debug)]
pub struct DepthStats {
    max_host_depth: usize,
    max_path_depth: usize,
    host: Vec<DepthAccumulator>,
    path: Vec<DepthAccumulator>,
    total: u64,
    last: Option<String>,
    scratch: String,
}

impl Default for DepthStats {
    fn default() -> Self {
        Self::new(MAX_HOST_DEPTH, MAX_PATH_DEPTH - 1)
    }
}

impl DepthStats {
    /// Host rows run 1..=`max_host_depth`, path rows 0..=`max_path_depth`;
    /// the last row of each segment aggregates deeper keys.
    pub fn new(max_host_depth: usize, max_path_depth: usize) -> Self {
        let max_host_depth = max_host_depth.max(1);
        DepthStats {
            max_host_depth,
            max_path_depth,
            host: (0..max_host_depth).map(|_| DepthAccumulator::default()).collect(),
            path: (0..=max_path_depth).map(|_| DepthAccumulator::default()).collect(),
            total: 0,
            last: None,
            scratch: String::new(),
        }
    }

    /// Adds the next key. Wildcard keys are ignored.
    pub fn push(&mut self, key: &str) -> Result<()> {
        if is_wildcard(key) {
            return Ok(());
        }
        if let Some(prev) = &self.last {
            if key <= prev.as_str() {
                return Err(Error::UnsortedInput {
                    previous: prev.clone(),
                    key: key.to_owned(),
                });
            }
        }
        let key = key.split('?').next().unwrap_or(key);
        let (host, path) = key.split_once(')').unwrap_or((key, ""));
        let labels: Vec<&str> = host.split(',').collect();
        let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();

        let host_rows = labels.len().min(self.max_host_depth);
        for d in 1..=host_rows {
            let prefix = &labels[..d];
            self.scratch.clear();
            self.scratch.push_str(&prefix.join(","));
            let deeper = labels.len() > d && d < self.max_host_depth;
            self.host[d - 1].push(&self.scratch, b',', deeper);
        }
        let path_rows = segments.len().min(self.max_path_depth);
        for d in 0..=path_rows {
            self.scratch.clear();
            self.scratch.push_str(host);
            self.scratch.push_str(")/");
            self.scratch.push_str(&segments[..d].join("/"));
            let deeper = segments.len() > d && d < self.max_path_depth;
            self.path[d].push(&self.scratch, b'/', deeper);
        }
        self.total += 1;
        match &mut self.last {
            Some(k) => {
                k.clear();
                k.push_str(key);
            }
            None => self.last = Some(key.to_owned()),
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn finish(mut self) -> Vec<DepthStatsRow> {
        let total = self.total;
        let mut rows = Vec::new();
        for acc in self.host.iter_mut().chain(self.path.iter_mut()) {
            acc.flush();
        }
        let host_used = self.host.iter().take_while(|a| a.hist.n() > 0).count();
        for d in 1..=host_used {
            let parents = if d == 1 { 1 } else { self.host[d - 2].with_deeper };
            rows.push(make_row(Segment::Host, d, d == self.max_host_depth, &self.host[d - 1].hist, parents, total));
        }
        let path_used = self.path.iter().take_while(|a| a.hist.n() > 0).count();
        for d in 0..path_used {
            let parents = if d == 0 { self.path[0].hist.n() } else { self.path[d - 1].with_deeper };
            rows.push(make_row(Segment::Path, d, d == self.max_path_depth, &self.path[d].hist, parents, total));
        }
        rows
    }
}

fn make_row(segment: Segment, depth: usize, overflow: bool, hist: &Histogram, parents: u64, total: u64) -> DepthStatsRow {
    let count = hist.n();
    let sum = hist.total() as u64;
    DepthStatsRow {
        segment,
        depth,
        overflow,
        count,
        sum,
        max: hist.max(),
        mean: hist.mean(),
        median: hist.median(),
        stddev: hist.stddev(),
        redq: if total == 0 { 0.0 } else { (sum - count) as f64 / total as f64 },
        parents,
        children: count,
        mean_child: if parents == 0 { 0.0 } else { count as f64 / parents as f64 },
    }
}

/// Per-depth statistics of a sorted stream of unique HxPx keys.
pub fn depth_stats<I, S>(keys: I) -> Result<Vec<DepthStatsRow>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut stats = DepthStats::default();
    for key in keys {
        stats.push(key.as_ref())?;
    }
    Ok(stats.finish())
}

/// Per-depth statistics of the data records of a map stream.
pub fn map_depth_stats<R: std::io::BufRead>(input: R) -> Result<Vec<DepthStatsRow>> {
    let mut stats = DepthStats::default();
    for line in crate::ukvs::MapReader::new(input) {
        if let crate::ukvs::Line::Record(r) = line? {
            stats.push(&r.key)?;
        }
    }
    Ok(stats.finish())
}

/// Writes rows as TSV with a header line.
pub fn write_depth_stats_tsv<W: std::io::Write>(rows: &[DepthStatsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "Depth\tCount\tSum\tMax\tMean\tMedian\tStdDev\tRedQ\tParents\tChildren\tMeanChild")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.2}\t{}\t{:.2}\t{:.5}\t{}\t{}\t{:.2}",
            r.label(),
            r.count,
            r.sum,
            r.max,
            r.mean,
            r.median,
            r.stddev,
            r.redq,
            r.parents,
            r.children,
            r.mean_child
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchiveSummary {
    pub unique_urirs: u64,
    pub total_urims: u64,
    pub gamma: f64,
    pub max_urims_per_urir: u64,
    pub median: f64,
    pub stddev: f64,
    pub gini: f64,
    /// (percent of URI-Rs, percent of mementos they hold)
    pub pareto_break: (f64, f64),
}

impl fmt::Display for ArchiveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Unique URI-Rs\t{}", self.unique_urirs)?;
        writeln!(f, "Total URI-Ms\t{}", self.total_urims)?;
        writeln!(f, "Gamma\t{:.2}", self.gamma)?;
        writeln!(f, "Max URI-Ms per URI-R\t{}", self.max_urims_per_urir)?;
        writeln!(f, "Median\t{}", self.median)?;
        writeln!(f, "StdDev\t{:.2}", self.stddev)?;
        writeln!(f, "Gini\t{:.4}", self.gini)?;
        write!(f, "Pareto break\t{:.2}/{:.2}", self.pareto_break.0, self.pareto_break.1)
    }
}

fn gini_of(hist: &Histogram) -> f64 {
    let n = hist.n() as u128;
    let total = hist.total();
    if n == 0 || total == 0 {
        return 0.0;
    }
    // sum over ascending ranks i of i * x_i, with runs of equal values
    let mut weighted: u128 = 0;
    let mut seen: u128 = 0;
    for (&v, &m) in &hist.bins {
        let m = m as u128;
        let rank_sum = m * seen + m * (m + 1) / 2;
        weighted += rank_sum * v as u128;
        seen += m;
    }
    let num = 2 * weighted as i128 - ((n + 1) * total) as i128;
    num as f64 / (n * total) as f64
}

fn pareto_of(hist: &Histogram) -> (f64, f64) {
    let n = hist.n() as f64;
    let total = hist.total() as f64;
    if n == 0.0 || total == 0.0 {
        return (0.0, 0.0);
    }
    let (mut k, mut c) = (0.0f64, 0.0f64);
    for (&v, &m) in hist.bins.iter().rev() {
        let v = v as f64;
        let m = m as f64;
        // x + y - 1 is linear inside a run of equal values
        let end = (k + m) / n + (c + m * v) / total - 1.0;
        if end >= 0.0 {
            let t = (1.0 - k / n - c / total) / (1.0 / n + v / total);
            let x = (k + t) / n;
            return (100.0 * x, 100.0 * (1.0 - x));
        }
        k += m;
        c += m * v;
    }
    (100.0, 0.0)
}

/// Gini coefficient of a count distribution.
pub fn gini<I: IntoIterator<Item = u64>>(counts: I) -> f64 {
    let mut hist = Histogram::default();
    counts.into_iter().for_each(|c| hist.add(c));
    gini_of(&hist)
}

/// Point on the descending cumulative curve where the top `x`% of items
/// hold `100 - x`% of the mass, as (x, 100 - x).
pub fn pareto_break<I: IntoIterator<Item = u64>>(counts: I) -> (f64, f64) {
    let mut hist = Histogram::default();
    counts.into_iter().for_each(|c| hist.add(c));
    pareto_of(&hist)
}

/// Summary of URI-M counts, one count per unique URI-R.
pub fn archive_summary<I: IntoIterator<Item = u64>>(urim_counts: I) -> Result<ArchiveSummary> {
    let mut hist = Histogram::default();
    urim_counts.into_iter().for_each(|c| hist.add(c));
    let n = hist.n();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let total = hist.total() as u64;
    Ok(ArchiveSummary {
        unique_urirs: n,
        total_urims: total,
        gamma: total as f64 / n as f64,
        max_urims_per_urir: hist.max(),
        median: hist.median(),
        stddev: hist.stddev(),
        gini: gini_of(&hist),
        pareto_break: pareto_of(&hist),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub k: f64,
    /// Root mean square residual in log space.
    pub rms_residual: f64,
}

impl PowerLawFit {
    pub fn eval(&self, depth: f64) -> f64 {
        self.a * depth.powf(-self.k)
    }
}

/// Least-squares fit of `y = a * x^-k` in log-log space.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::DomainError("power-law points must be positive".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all depths are identical".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = logs.iter().map(|p| (p.1 - (intercept + slope * p.0)).powi(2)).sum();
    Ok(PowerLawFit {
        a: intercept.exp(),
        k: -slope,
        rms_residual: (rss / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn redq_table_rows() {
        let total = 1_138_923_169;
        assert!((redq(2_158_880, 630_309_184, total).unwrap() - 0.55153).abs() < 5e-6);
        assert!((redq(145_687_459, 1_134_466_338, total).unwrap() - 0.86817).abs() < 5e-6);
        assert_eq!(redq(5, 5, 10).unwrap(), 0.0);
        assert!(redq(6, 5, 10).is_err());
        assert!(redq(1, 1, 0).is_err());
    }

    fn row<'a>(rows: &'a [DepthStatsRow], label: &str) -> &'a DepthStatsRow {
        rows.iter().find(|r| r.label() == label).unwrap()
    }

    #[test]
    fn single_root_key() {
        let rows = depth_stats(["com,example)/"]).unwrap();
        let labels: Vec<_> = rows.iter().map(|r| r.label()).collect();
        assert_eq!(labels, ["H1", "H2", "P0"]);
        for r in &rows {
            assert_eq!((r.count, r.sum), (1, 1));
        }
    }

    #[test]
    fn reappearing_prefix_counted_once() {
        let keys = ["com,a)/x", "com,a)/x-y", "com,a)/x/1", "com,a)/x/2"];
        let rows = depth_stats(keys).unwrap();
        let p1 = row(&rows, "P1");
        assert_eq!((p1.count, p1.sum, p1.max), (2, 4, 3));
        assert_eq!(p1.parents, 1);
        let p2 = row(&rows, "P2");
        assert_eq!((p2.count, p2.parents), (2, 1));
        assert_eq!(p2.mean_child, 2.0);
        let p0 = row(&rows, "P0");
        assert_eq!((p0.count, p0.parents), (1, 1));
    }

    #[test]
    fn unsorted_rejected() {
        assert!(matches!(depth_stats(["com,b)/", "com,a)/"]), Err(Error::UnsortedInput { .. })));
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini([5, 5, 5, 5]), 0.0);
        // brute force: sorted [1,1,1,1,6], sum i*x = 1+2+3+4+30 = 40
        let expected = (2.0 * 40.0 - 6.0 * 10.0) / (5.0 * 10.0);
        assert!((gini([1, 1, 1, 1, 6]) - expected).abs() < 1e-12);
        let s = archive_summary([1, 1, 1, 1, 6]).unwrap();
        assert_eq!(s.gamma, 2.0);
        assert!(archive_summary(Vec::new()).is_err());
    }

    #[test]
    fn pareto_uniform_is_half() {
        let (x, y) = pareto_break([3, 3, 3, 3]);
        assert!((x - 50.0).abs() < 1e-9 && (y - 50.0).abs() < 1e-9);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn power_law_fits() {
        let pts: Vec<_> = (1..=8).map(|d| (d as f64, 20.0 * (d as f64).powf(-1.3))).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.a - 20.0).abs() < 1e-6 && (fit.k - 1.3).abs() < 1e-6);
        let flat = fit_power_law(&[(1.0, 4.0), (2.0, 4.0), (5.0, 4.0)]).unwrap();
        assert!((flat.a - 4.0).abs() < 1e-12 && flat.k.abs() < 1e-12);
        assert!(matches!(fit_power_law(&[(3.0, 1.0), (3.0, 2.0)]), Err(Error::DegenerateFit(_))));
        let host = [(3.0, 8.53), (4.0, 8.95), (5.0, 7.77), (6.0, 6.28), (7.0, 3.42), (8.0, 4.55), (9.0, 1.00)];
        let fit = fit_power_law(&host).unwrap();
        assert!(fit.k > 0.0 && fit.rms_residual > 0.0);
    }

    fn brute_rows(keys: &[String]) -> BTreeMap<(Segment, usize), (u64, u64)> {
        use std::collections::HashMap;
        let mut per: HashMap<(Segment, usize), HashMap<String, u64>> = HashMap::new();
        for k in keys {
            let (host, path) = k.split_once(')').unwrap();
            let labels: Vec<&str> = host.split(',').collect();
            let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
            for d in 1..=labels.len().min(MAX_HOST_DEPTH) {
                *per.entry((Segment::Host, d)).or_default().entry(labels[..d].join(",")).or_default() += 1;
            }
            for d in 0..=segs.len().min(MAX_PATH_DEPTH - 1) {
                let p = format!("{host})/{}", segs[..d].join("/"));
                *per.entry((Segment::Path, d)).or_default().entry(p).or_default() += 1;
            }
        }
        per.into_iter()
            .map(|(k, m)| (k, (m.len() as u64, m.values().sum())))
            .collect()
    }

    fn key_strategy() -> impl Strategy<Value = String> {
        let label = prop::sample::select(vec!["a", "b", "a-b", "ab", "c"]);
        let seg = prop::sample::select(vec!["x", "x-y", "x.y", "y", "x0"]);
        (prop::collection::vec(label, 1..4), prop::collection::vec(seg, 0..4))
            .prop_map(|(h, p)| format!("{})/{}", h.join(","), p.join("/")))
    }

    proptest! {
        #[test]
        fn streaming_matches_brute_force(keys in prop::collection::btree_set(key_strategy(), 1..60)) {
            let keys: Vec<String> = keys.into_iter().collect();
            let rows = depth_stats(&keys).unwrap();
            let brute = brute_rows(&keys);
            prop_assert_eq!(rows.len(), brute.len());
            for r in &rows {
                prop_assert_eq!(Some(&(r.count, r.sum)), brute.get(&(r.segment, r.depth)), "{}", r.label());
            }
            prop_assert_eq!(row(&rows, "H1").sum, keys.len() as u64);
            prop_assert_eq!(row(&rows, "P0").sum, keys.len() as u64);
        }

        #[test]
        fn gini_in_unit_interval(counts in prop::collection::vec(1u64..1000, 1..200)) {
            let g = gini(counts.clone());
            prop_assert!((0.0..1.0).contains(&g));
            let (x, y) = pareto_break(counts);
            prop_assert!((x + y - 100.0).abs() < 1e-9);
        }
    }
}

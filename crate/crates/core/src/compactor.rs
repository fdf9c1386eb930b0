//! Single-pass compaction of a sorted MementoMap.
//!
//! Keys are read as paths through a tree whose levels are host labels
//! (H1, H2, ...), the path root (P0) and path segments (P1, P2, ...). A node
//! is a maximal run of adjacent keys sharing a level-token prefix. When a
//! node closes with more same-segment children than the cutoff for their
//! depth, those children are replaced by one wildcard record (`h1,h2,*` or
//! `host)/p1/*`) carrying their accumulated frequency.

use std::fs::File;
use std::io::{self, BufRead, BufWriter, Cursor, Seek, SeekFrom, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytics::{fit_power_law, DepthStatsRow, PowerLawFit, Segment};
use crate::error::{Error, Result};
use crate::surt::{MAX_HOST_DEPTH, MAX_PATH_DEPTH};
use crate::ukvs::{FrequencyValue, Line, MapReader, Modifier, UkvsRecord};

/// Output that supports the seek-back-and-truncate pattern of compaction.
pub trait CompactionSink: Write + Seek {
    fn truncate(&mut self, len: u64) -> io::Result<()>;
}

impl CompactionSink for File {
    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.set_len(len)
    }
}

impl CompactionSink for BufWriter<File> {
    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.flush()?;
        self.get_ref().set_len(len)
    }
}

impl CompactionSink for Cursor<Vec<u8>> {
    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.get_mut().truncate(len as usize);
        Ok(())
    }
}

impl<S: CompactionSink + ?Sized> CompactionSink for &mut S {
    fn truncate(&mut self, len: u64) -> io::Result<()> {
        (**self).truncate(len)
    }
}

fn cutoffs_serde_default() -> Vec<Option<f64>> {
    Vec::new()
}

/// Per-depth rollup thresholds in the on-disk JSON form: `null` means
/// never roll up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CutoffTable {
    #[serde(default = "cutoffs_serde_default")]
    pub host: Vec<Option<f64>>,
    #[serde(default = "cutoffs_serde_default")]
    pub path: Vec<Option<f64>>,
}

impl CutoffTable {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("cutoff table: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cutoff table serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionParams {
    pub wh: f64,
    pub wp: f64,
    pub max_host_depth: usize,
    pub max_path_depth: usize,
    /// Indexed by host depth of the children being counted.
    pub host_cutoffs: Vec<f64>,
    /// Indexed by path depth of the children being counted.
    pub path_cutoffs: Vec<f64>,
}

impl Default for CompactionParams {
    fn default() -> Self {
        CompactionParams {
            wh: f64::INFINITY,
            wp: f64::INFINITY,
            max_host_depth: MAX_HOST_DEPTH,
            max_path_depth: MAX_PATH_DEPTH,
            host_cutoffs: Vec::new(),
            path_cutoffs: Vec::new(),
        }
    }
}

impl CompactionParams {
    pub fn host_cutoff(&self, depth: usize) -> f64 {
        if depth <= 2 {
            return f64::INFINITY;
        }
        self.host_cutoffs.get(depth).copied().unwrap_or(f64::INFINITY)
    }

    pub fn path_cutoff(&self, depth: usize) -> f64 {
        if depth == 0 {
            return f64::INFINITY;
        }
        self.path_cutoffs.get(depth).copied().unwrap_or(f64::INFINITY)
    }

    pub fn from_table(table: &CutoffTable) -> Self {
        let conv = |v: &Vec<Option<f64>>| v.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect();
        CompactionParams {
            host_cutoffs: conv(&table.host),
            path_cutoffs: conv(&table.path),
            ..CompactionParams::default()
        }
    }

    pub fn to_table(&self) -> CutoffTable {
        let conv = |v: &Vec<f64>| v.iter().map(|c| c.is_finite().then_some(*c)).collect();
        CutoffTable {
            host: conv(&self.host_cutoffs),
            path: conv(&self.path_cutoffs),
        }
    }
}

/// Power-law models of mean child count per depth, one per segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanChildModel {
    pub host: PowerLawFit,
    pub path: PowerLawFit,
}

impl MeanChildModel {
    /// Fits host depths >= 3 and path depths >= 1, skipping overflow rows.
    pub fn fit(rows: &[DepthStatsRow]) -> Result<Self> {
        let points = |segment: Segment, min_depth: usize| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r.segment == segment && r.depth >= min_depth && !r.overflow && r.mean_child > 0.0)
                .map(|r| (r.depth as f64, r.mean_child))
                .collect()
        };
        let host = points(Segment::Host, 3);
        let path = points(Segment::Path, 1);
        if host.len() < 2 {
            return Err(Error::InsufficientStats {
                segment: "host",
                usable: host.len(),
            });
        }
        if path.len() < 2 {
            return Err(Error::InsufficientStats {
                segment: "path",
                usable: path.len(),
            });
        }
        Ok(MeanChildModel {
            host: fit_power_law(&host)?,
            path: fit_power_law(&path)?,
        })
    }

    /// Cutoff tables scaled by the given weights.
    pub fn params(&self, wh: f64, wp: f64) -> CompactionParams {
        let scale = |w: f64, v: f64| if w == 0.0 { 0.0 } else { w * v };
        let mut host_cutoffs = vec![f64::INFINITY; MAX_HOST_DEPTH + 1];
        for (d, c) in host_cutoffs.iter_mut().enumerate().skip(3) {
            *c = scale(wh, self.host.eval(d as f64));
        }
        let mut path_cutoffs = vec![f64::INFINITY; MAX_PATH_DEPTH];
        for (d, c) in path_cutoffs.iter_mut().enumerate().skip(1) {
            *c = scale(wp, self.path.eval(d as f64));
        }
        CompactionParams {
            wh,
            wp,
            host_cutoffs,
            path_cutoffs,
            ..CompactionParams::default()
        }
    }
}

/// Fits mean-child curves to `rows` and scales them by the weights.
pub fn derive_cutoffs(rows: &[DepthStatsRow], wh: f64, wp: f64) -> Result<CompactionParams> {
    if !(wh >= 0.0 && wp >= 0.0) {
        return Err(Error::Config(format!("weights must be non-negative, got wh={wh} wp={wp}")));
    }
    Ok(MeanChildModel::fit(rows)?.params(wh, wp))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CompactionReport {
    pub lines_in: u64,
    pub lines_out: u64,
    pub rollups: u64,
    pub bytes_out: u64,
    /// Largest number of simultaneously open trail entries.
    pub peak_trail: usize,
    pub wall_seconds: f64,
}

/// Position of a node in the key tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Root,
    Host(usize),
    Path(usize),
}

impl Level {
    fn is_eligible_child(self, child: Level) -> bool {
        match (self, child) {
            (Level::Root, Level::Host(1)) => true,
            (Level::Host(d), Level::Host(c)) => c == d + 1,
            (Level::Path(d), Level::Path(c)) => c == d + 1,
            _ => false,
        }
    }

    fn child_cutoff(self, params: &CompactionParams) -> f64 {
        match self {
            Level::Root | Level::Host(1) => f64::INFINITY,
            Level::Host(d) => params.host_cutoff(d + 1),
            Level::Path(d) => params.path_cutoff(d + 1),
        }
    }
}

/// Splits a key into its level tokens. Query text stays attached to the last
/// path token.
fn tokenize<'a>(key: &'a str, params: &CompactionParams, out: &mut Vec<(Level, &'a str)>) {
    out.clear();
    let (host, rest) = match key.find(')') {
        Some(i) => (&key[..i], Some(&key[i + 1..])),
        None => (key, None),
    };
    for (i, label) in host.splitn(params.max_host_depth.max(1), ',').enumerate() {
        out.push((Level::Host(i + 1), label));
    }
    let Some(rest) = rest else { return };
    out.push((Level::Path(0), ""));
    let rest = rest.strip_prefix('/').unwrap_or(rest);
    if rest.is_empty() {
        return;
    }
    let q = rest.find('?').unwrap_or(rest.len());
    let (path, query) = rest.split_at(q);
    let cap = params.max_path_depth.saturating_sub(1).max(1);
    let mut tokens: Vec<&str> = if path.is_empty() { vec![""] } else { path.splitn(cap, '/').collect() };
    if !query.is_empty() {
        let last = tokens.pop().unwrap_or("");
        let start = last.as_ptr() as usize - rest.as_ptr() as usize;
        tokens.push(&rest[start..]);
    }
    for (i, t) in tokens.into_iter().enumerate() {
        out.push((Level::Path(i + 1), t));
    }
}

/// Text of the wildcard replacing the eligible children of the node reached
/// by `tokens`.
fn wildcard_key(tokens: &[(Level, &str)]) -> String {
    let mut host = Vec::new();
    let mut path = Vec::new();
    let mut in_path = false;
    for &(level, t) in tokens {
        match level {
            Level::Host(_) => host.push(t),
            Level::Path(0) => in_path = true,
            Level::Path(_) => path.push(t),
            Level::Root => {}
        }
    }
    let mut key = host.join(",");
    if in_path {
        key.push_str(")/");
        for p in path {
            key.push_str(p);
            key.push('/');
        }
    } else {
        key.push(',');
    }
    key.push('*');
    key
}

/// Sum used for rollups: exact only if every part is exact.
fn rollup_add(acc: Option<FrequencyValue>, f: &FrequencyValue) -> Option<FrequencyValue> {
    let Some(a) = acc else { return Some(*f) };
    let add = |x: crate::ukvs::Count, y: crate::ukvs::Count| crate::ukvs::Count {
        value: x.value.saturating_add(y.value),
        modifier: if x.modifier == Modifier::Exact && y.modifier == Modifier::Exact {
            Modifier::Exact
        } else {
            Modifier::Approx
        },
    };
    Some(FrequencyValue {
        urim: add(a.urim, f.urim),
        urir: match (a.urir, f.urir) {
            (Some(x), Some(y)) => Some(add(x, y)),
            _ => None,
        },
    })
}

#[derive(Debug)]
struct TrailEntry {
    level: Level,
    token: String,
    subtree_freq: Option<FrequencyValue>,
    child_freq: Option<FrequencyValue>,
    children: usize,
    first_child_pos: u64,
    lines_at_first_child: u64,
}

struct Compactor<'p, S: CompactionSink> {
    params: &'p CompactionParams,
    sink: S,
    pos: u64,
    lines_out: u64,
    rollups: u64,
    peak_trail: usize,
    trail: Vec<TrailEntry>,
    line_buf: String,
}

impl<'p, S: CompactionSink> Compactor<'p, S> {
    fn write_line(&mut self, record: &UkvsRecord) -> Result<()> {
        use std::fmt::Write as _;
        self.line_buf.clear();
        write!(self.line_buf, "{record}").expect("write to String");
        self.line_buf.push('\n');
        self.sink.write_all(self.line_buf.as_bytes())?;
        self.pos += self.line_buf.len() as u64;
        Ok(())
    }

    /// Closes trail entries deeper than `keep`, rolling up where due.
    fn close_to(&mut self, keep: usize) -> Result<()> {
        while self.trail.len() > keep {
            let entry = self.trail.pop().expect("non-empty");
            let rolls = entry.children > 0
                && (entry.children as f64) > entry.level.child_cutoff(self.params);
            if rolls {
                let tokens: Vec<(Level, &str)> = self
                    .trail
                    .iter()
                    .skip(1)
                    .map(|e| (e.level, e.token.as_str()))
                    .chain(std::iter::once((entry.level, entry.token.as_str())))
                    .collect();
                let record = UkvsRecord::new(wildcard_key(&tokens), entry.child_freq.expect("children present"));
                self.sink.seek(SeekFrom::Start(entry.first_child_pos))?;
                self.pos = entry.first_child_pos;
                self.write_line(&record)?;
                self.lines_out = entry.lines_at_first_child + 1;
                self.rollups += 1;
            }
            if let Some(parent) = self.trail.last_mut() {
                let sf = entry.subtree_freq.expect("closed node holds records");
                parent.subtree_freq = rollup_add(parent.subtree_freq, &sf);
                if parent.level.is_eligible_child(entry.level) {
                    parent.child_freq = rollup_add(parent.child_freq, &sf);
                }
            }
        }
        Ok(())
    }

    fn push_record(&mut self, record: &UkvsRecord, tokens: &[(Level, &str)]) -> Result<()> {
        // trail[0] is the root; trail[i] matches tokens[i - 1]
        let mut common = 1;
        while common < self.trail.len()
            && common <= tokens.len()
            && self.trail[common].level == tokens[common - 1].0
            && self.trail[common].token == tokens[common - 1].1
        {
            common += 1;
        }
        self.close_to(common)?;
        for &(level, token) in &tokens[self.trail.len() - 1..] {
            let parent = self.trail.last_mut().expect("root present");
            if parent.level.is_eligible_child(level) {
                parent.children += 1;
                if parent.children == 1 {
                    parent.first_child_pos = self.pos;
                    parent.lines_at_first_child = self.lines_out;
                }
            }
            self.trail.push(TrailEntry {
                level,
                token: token.to_owned(),
                subtree_freq: None,
                child_freq: None,
                children: 0,
                first_child_pos: 0,
                lines_at_first_child: 0,
            });
        }
        self.peak_trail = self.peak_trail.max(self.trail.len());
        self.write_line(record)?;
        self.lines_out += 1;
        let node = self.trail.last_mut().expect("record node");
        node.subtree_freq = rollup_add(node.subtree_freq, &record.frequency);
        Ok(())
    }
}

/// Reuses a token buffer's allocation across borrows of different lifetimes.
fn recycle<'b>(mut v: Vec<(Level, &str)>) -> Vec<(Level, &'b str)> {
    v.clear();
    v.into_iter().map(|_| unreachable!()).collect()
}

/// Compacts a sorted map read from `input` into `sink`. Headers are copied
/// verbatim; the sink is truncated at the end of the output.
pub fn compact<R: BufRead, S: CompactionSink>(input: R, sink: S, params: &CompactionParams) -> Result<CompactionReport> {
    let started = Instant::now();
    let mut c = Compactor {
        params,
        sink,
        pos: 0,
        lines_out: 0,
        rollups: 0,
        peak_trail: 0,
        trail: vec![TrailEntry {
            level: Level::Root,
            token: String::new(),
            subtree_freq: None,
            child_freq: None,
            children: 0,
            first_child_pos: 0,
            lines_at_first_child: 0,
        }],
        line_buf: String::new(),
    };
    c.sink.seek(SeekFrom::Start(0)).map_err(|_| Error::SinkNotSeekable)?;
    let mut lines_in = 0;
    let mut tokens = Vec::new();
    for line in MapReader::new(input) {
        match line? {
            Line::Header(h) => {
                let text = format!("{h}\n");
                c.sink.write_all(text.as_bytes())?;
                c.pos += text.len() as u64;
            }
            Line::Record(rec) => {
                lines_in += 1;
                let mut toks = recycle(std::mem::take(&mut tokens));
                tokenize(&rec.key, params, &mut toks);
                c.push_record(&rec, &toks)?;
                tokens = recycle(toks);
            }
        }
    }
    c.close_to(0)?;
    c.sink.flush()?;
    c.sink.truncate(c.pos)?;
    c.sink.seek(SeekFrom::Start(c.pos))?;
    Ok(CompactionReport {
        lines_in,
        lines_out: c.lines_out,
        rollups: c.rollups,
        bytes_out: c.pos,
        peak_trail: c.peak_trail,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug)]
struct Node {
    level: Level,
    token: String,
    records: Vec<UkvsRecord>,
    children: Vec<Node>,
}

/// In-memory compaction over an explicit tree. Produces the same records
/// as [`compact`] and serves as its test oracle.
pub fn reference_prune(records: &[UkvsRecord], params: &CompactionParams) -> Vec<UkvsRecord> {
    let mut root = Node {
        level: Level::Root,
        token: String::new(),
        records: Vec::new(),
        children: Vec::new(),
    };
    let mut tokens = Vec::new();
    let mut prev_len = 0;
    for rec in records {
        tokenize(&rec.key, params, &mut tokens);
        let mut node = &mut root;
        let mut on_trail = true;
        for (i, &(level, token)) in tokens.iter().enumerate() {
            let reuse = on_trail
                && i < prev_len
                && node
                    .children
                    .last()
                    .is_some_and(|c| c.level == level && c.token == token);
            if !reuse {
                on_trail = false;
                node.children.push(Node {
                    level,
                    token: token.to_owned(),
                    records: Vec::new(),
                    children: Vec::new(),
                });
            }
            node = node.children.last_mut().expect("just ensured");
        }
        node.records.push(rec.clone());
        prev_len = tokens.len();
    }
    let mut out = Vec::new();
    let mut path = Vec::new();
    emit(&root, params, &mut path, &mut out);
    out
}

fn emit<'a>(
    node: &'a Node,
    params: &CompactionParams,
    path: &mut Vec<(Level, &'a str)>,
    out: &mut Vec<UkvsRecord>,
) -> Option<FrequencyValue> {
    let mut sum = None;
    for r in &node.records {
        out.push(r.clone());
        sum = rollup_add(sum, &r.frequency);
    }
    let mut eligible_out = Vec::new();
    let mut eligible_sum = None;
    let mut eligible = 0usize;
    for child in &node.children {
        path.push((child.level, child.token.as_str()));
        if node.level.is_eligible_child(child.level) {
            eligible += 1;
            let s = emit(child, params, path, &mut eligible_out).expect("non-empty subtree");
            eligible_sum = rollup_add(eligible_sum, &s);
        } else {
            debug_assert!(eligible_out.is_empty(), "non-eligible child after eligible ones");
            let s = emit(child, params, path, out).expect("non-empty subtree");
            sum = rollup_add(sum, &s);
        }
        path.pop();
    }
    if eligible > 0 && (eligible as f64) > node.level.child_cutoff(params) {
        let f = eligible_sum.expect("eligible children present");
        out.push(UkvsRecord::new(wildcard_key(path), f));
    } else {
        out.append(&mut eligible_out);
    }
    match eligible_sum {
        Some(s) => rollup_add(sum, &s),
        None => sum,
    }
}

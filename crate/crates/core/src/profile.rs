//! Baseline MementoMap generation from CDXJ indexes or plain URI lists.

use std::io::{self, BufRead, Read, Write};

use extsort::{ExternalSorter, Sortable};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::surt::{hxpx_key, surt_to_uri};
use crate::ukvs::{DocumentWriter, FrequencyValue, ParseMode, UkvsHeader, UkvsRecord};

/// One capture line of a CDXJ index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdxjLine {
    pub surt: String,
    pub datetime: String,
    pub status: Option<String>,
    pub mime: Option<String>,
    /// Raw JSON block.
    pub meta: String,
}

fn json_field(map: &serde_json::Map<String, serde_json::Value>, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| match map.get(*n)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Null => None,
        other => Some(other.to_string()),
    })
}

pub fn parse_cdxj(line: &str) -> Result<CdxjLine> {
    let bad = |reason: &str| Error::MalformedCdxj(format!("{reason}: `{line}`"));
    let line = line.trim_end_matches(['\n', '\r']);
    let mut parts = line.splitn(3, [' ', '\t']);
    let surt = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("empty line"))?;
    let datetime = parts.next().ok_or_else(|| bad("missing datetime column"))?;
    if datetime.len() != 14 || !datetime.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad("datetime is not 14 digits"));
    }
    let meta = parts.next().ok_or_else(|| bad("missing JSON block"))?.trim();
    let value: serde_json::Value = serde_json::from_str(meta).map_err(|e| bad(&e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| bad("JSON block is not an object"))?;
    Ok(CdxjLine {
        surt: surt.to_owned(),
        datetime: datetime.to_owned(),
        status: json_field(obj, &["status", "statuscode"]),
        mime: json_field(obj, &["mime", "mimetype"]),
        meta: meta.to_owned(),
    })
}

/// Which captures count toward a baseline map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    /// Allowed status codes; empty allows all.
    pub statuses: Vec<String>,
    /// Allowed MIME prefixes, case-insensitive; empty allows all.
    pub mimes: Vec<String>,
    /// Final path segments to drop.
    pub exclude_paths: Vec<String>,
    /// Count `warc/revisit` captures regardless of status and MIME.
    pub include_revisits: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            statuses: vec!["200".into()],
            mimes: vec!["text/html".into()],
            exclude_paths: vec!["robots.txt".into(), "sitemap.xml".into()],
            include_revisits: false,
        }
    }
}

impl FilterPolicy {
    /// Keeps every capture.
    pub fn none() -> Self {
        FilterPolicy {
            statuses: Vec::new(),
            mimes: Vec::new(),
            exclude_paths: Vec::new(),
            include_revisits: true,
        }
    }

    pub fn accepts(&self, line: &CdxjLine) -> bool {
        let path = line
            .surt
            .split_once(')')
            .map_or("", |(_, p)| p)
            .split('?')
            .next()
            .unwrap_or("");
        let last = path.rsplit('/').next().unwrap_or("");
        if self.exclude_paths.iter().any(|x| x.eq_ignore_ascii_case(last)) {
            return false;
        }
        let mime = line.mime.as_deref().unwrap_or("");
        if mime.eq_ignore_ascii_case("warc/revisit") {
            return self.include_revisits;
        }
        let status_ok = self.statuses.is_empty() || line.status.as_ref().is_some_and(|s| self.statuses.contains(s));
        let mime_ok = self.mimes.is_empty()
            || self.mimes.iter().any(|m| {
                mime.len() >= m.len() && mime.as_bytes()[..m.len()].eq_ignore_ascii_case(m.as_bytes())
            });
        status_ok && mime_ok
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerationReport {
    pub lines_in: u64,
    pub lines_kept: u64,
    pub lines_malformed: u64,
    pub unique_hxpx: u64,
    pub urim_total: u64,
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub policy: FilterPolicy,
    pub mode: ParseMode,
    pub headers: Vec<UkvsHeader>,
    /// Items held in memory before a sorted run spills to disk.
    pub sort_buffer: usize,
    /// Trust input order instead of sorting; out-of-order keys are an error.
    pub presorted: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            policy: FilterPolicy::default(),
            mode: ParseMode::Lenient,
            headers: crate::ukvs::default_headers(&crate::ukvs::now_timestamp()),
            sort_buffer: 1 << 24,
            presorted: false,
        }
    }
}

struct KeyCount(String, u64);

impl Sortable for KeyCount {
    fn encode<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&(self.0.len() as u32).to_le_bytes())?;
        w.write_all(self.0.as_bytes())?;
        w.write_all(&self.1.to_le_bytes())
    }

    fn decode<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut key = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut key)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let key = String::from_utf8(key).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(KeyCount(key, u64::from_le_bytes(count)))
    }
}

type KeySorter = extsort::PushExternalSorter<KeyCount, fn(&KeyCount, &KeyCount) -> std::cmp::Ordering>;

/// Counts keys, merging adjacent repeats before they reach the sorter.
struct KeyCounter<W: Write> {
    writer: DocumentWriter<W>,
    sorter: Option<KeySorter>,
    run: Option<KeyCount>,
    segment: usize,
    pushed: u64,
    last_pushed: String,
    unique: u64,
    total: u64,
}

fn by_key(a: &KeyCount, b: &KeyCount) -> std::cmp::Ordering {
    a.0.cmp(&b.0)
}

impl<W: Write> KeyCounter<W> {
    fn new(sink: W, opts: &GenerateOptions) -> Result<Self> {
        let mut writer = DocumentWriter::new(sink);
        for h in &opts.headers {
            writer.write_header(h)?;
        }
        let sorter = (!opts.presorted).then(|| {
            ExternalSorter::new()
                .with_segment_size(opts.sort_buffer.max(1))
                .pushed_by(by_key as fn(&KeyCount, &KeyCount) -> std::cmp::Ordering)
        });
        Ok(KeyCounter {
            writer,
            sorter,
            run: None,
            segment: opts.sort_buffer.max(1),
            pushed: 0,
            last_pushed: String::new(),
            unique: 0,
            total: 0,
        })
    }

    fn add(&mut self, key: String) -> Result<()> {
        match &mut self.run {
            Some(run) if run.0 == key => run.1 += 1,
            _ => {
                if let Some(done) = self.run.replace(KeyCount(key, 1)) {
                    self.flush_run(done)?;
                }
            }
        }
        Ok(())
    }

    fn flush_run(&mut self, kc: KeyCount) -> Result<()> {
        match &mut self.sorter {
            Some(sorter) => {
                self.pushed += 1;
                self.last_pushed.clone_from(&kc.0);
                sorter.push(kc)?;
            }
            None => self.emit(kc)?,
        }
        Ok(())
    }

    fn emit(&mut self, kc: KeyCount) -> Result<()> {
        self.unique += 1;
        self.total += kc.1;
        self.writer.write_record(&UkvsRecord::new(kc.0, FrequencyValue::urim(kc.1)))
    }

    fn finish(mut self) -> Result<(u64, u64)> {
        if let Some(done) = self.run.take() {
            self.flush_run(done)?;
        }
        if let Some(mut sorter) = self.sorter.take() {
            // extsort 0.5.0 drops its spilled runs when the in-memory buffer
            // happens to be empty at `done`; a zero-count duplicate keeps it
            // non-empty and merges away below.
            if self.pushed > 0 && self.pushed.is_multiple_of(self.segment as u64 + 1) {
                sorter.push(KeyCount(std::mem::take(&mut self.last_pushed), 0))?;
            }
            let mut pending: Option<KeyCount> = None;
            for item in sorter.done()? {
                let item = item?;
                match &mut pending {
                    Some(p) if p.0 == item.0 => p.1 += item.1,
                    _ => {
                        if let Some(done) = pending.replace(item) {
                            self.emit(done)?;
                        }
                    }
                }
            }
            if let Some(done) = pending {
                self.emit(done)?;
            }
        }
        self.writer.finish()?;
        Ok((self.unique, self.total))
    }
}

fn skip_or_fail(mode: ParseMode, err: Error, report: &mut GenerationReport) -> Result<()> {
    match mode {
        ParseMode::Strict => Err(err),
        ParseMode::Lenient => {
            log::debug!("skipped: {err}");
            report.lines_malformed += 1;
            Ok(())
        }
    }
}

/// Builds a baseline map from a CDXJ stream: one record per HxPx key, its
/// count being the number of kept captures.
pub fn generate<R: BufRead, W: Write>(input: R, sink: W, opts: &GenerateOptions) -> Result<GenerationReport> {
    let mut report = GenerationReport::default();
    let mut counter = KeyCounter::new(sink, opts)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('!') {
            continue;
        }
        report.lines_in += 1;
        let cdxj = match parse_cdxj(&line) {
            Ok(c) => c,
            Err(e) => {
                skip_or_fail(opts.mode, e, &mut report)?;
                continue;
            }
        };
        if !opts.policy.accepts(&cdxj) {
            continue;
        }
        let key = match surt_to_uri(&cdxj.surt).and_then(|u| hxpx_key(&u)) {
            Ok(k) => k,
            Err(e) => {
                skip_or_fail(opts.mode, e, &mut report)?;
                continue;
            }
        };
        report.lines_kept += 1;
        counter.add(key.key.into_string())?;
    }
    (report.unique_hxpx, report.urim_total) = counter.finish()?;
    Ok(report)
}

/// Builds a baseline map from newline-delimited URIs, one capture each.
pub fn generate_from_urilist<R: BufRead, W: Write>(input: R, sink: W, opts: &GenerateOptions) -> Result<GenerationReport> {
    let mut report = GenerationReport::default();
    let mut counter = KeyCounter::new(sink, opts)?;
    for line in input.lines() {
        let line = line?;
        let uri = line.trim();
        if uri.is_empty() {
            continue;
        }
        report.lines_in += 1;
        match hxpx_key(uri) {
            Ok(k) => {
                report.lines_kept += 1;
                counter.add(k.key.into_string())?;
            }
            Err(e) => skip_or_fail(opts.mode, e, &mut report)?,
        }
    }
    (report.unique_hxpx, report.urim_total) = counter.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ukvs::{merge_documents, MementoMapDocument};

    fn opts() -> GenerateOptions {
        GenerateOptions {
            headers: Vec::new(),
            sort_buffer: 3,
            ..GenerateOptions::default()
        }
    }

    fn gen(cdxj: &str, opts: &GenerateOptions) -> (String, GenerationReport) {
        let mut out = Vec::new();
        let report = generate(cdxj.as_bytes(), &mut out, opts).unwrap();
        (String::from_utf8(out).unwrap(), report)
    }

    #[test]
    fn parse_examples() {
        let c = parse_cdxj(r#"com,example)/ 20160103030405 {"status":"200","mime":"text/html"}"#).unwrap();
        assert_eq!((c.surt.as_str(), c.datetime.as_str()), ("com,example)/", "20160103030405"));
        assert_eq!((c.status.as_deref(), c.mime.as_deref()), (Some("200"), Some("text/html")));
        assert!(matches!(parse_cdxj("com,example)/"), Err(Error::MalformedCdxj(_))));
        let c = parse_cdxj(r#"com,example)/ 20160103030405 {"status":"3xx","mime":"text/html"}"#).unwrap();
        assert!(!FilterPolicy::default().accepts(&c));
        let c = parse_cdxj(r#"a)/ 20160103030405 {"status":200,"mime":"Text/HTML; charset=utf-8"}"#).unwrap();
        assert!(FilterPolicy::default().accepts(&c));
    }

    #[test]
    fn counts_and_filters() {
        let ok = r#"{"status":"200","mime":"text/html"}"#;
        let mut text = String::new();
        for _ in 0..3 {
            text.push_str(&format!("com,example)/a 20200101000000 {ok}\n"));
        }
        let (out, r) = gen(&text, &opts());
        assert_eq!(out, "com,example)/a 3\n");
        assert_eq!((r.lines_kept, r.unique_hxpx, r.urim_total), (3, 1, 3));

        let mut text = String::new();
        for i in 0..5 {
            text.push_str(&format!("com,example)/a?p={i} 20200101000000 {ok}\n"));
        }
        for _ in 0..3 {
            text.push_str(&format!("com,example)/b 20200101000000 {ok}\n"));
        }
        text.push_str(r#"com,example)/b 20200101000000 {"status":"404","mime":"text/html"}"#);
        text.push('\n');
        text.push_str(r#"com,example)/c 20200101000000 {"status":"200","mime":"text/css"}"#);
        text.push('\n');
        text.push_str(&format!("com,example)/robots.txt 20200101000000 {ok}\n"));
        text.push_str(r#"com,example)/d 20200101000000 {"mime":"warc/revisit"}"#);
        text.push('\n');
        let (out, r) = gen(&text, &opts());
        assert_eq!(out, "com,example)/a 5\ncom,example)/b 3\n");
        assert_eq!((r.lines_in, r.lines_kept, r.urim_total), (12, 8, 8));

        let mut all = opts();
        all.policy = FilterPolicy::none();
        let (out, _) = gen(&text, &all);
        assert_eq!(out.lines().count(), 5);
    }

    #[test]
    fn urilist_merges_queries() {
        let mut out = Vec::new();
        let r = generate_from_urilist("http://example.com/a\nhttp://example.com/a?x=1\n".as_bytes(), &mut out, &opts()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "com,example)/a 2\n");
        assert_eq!(r.unique_hxpx, 1);
        let mut out = Vec::new();
        let mut o = opts();
        o.headers = crate::ukvs::default_headers("t");
        generate_from_urilist("".as_bytes(), &mut out, &o).unwrap();
        assert!(String::from_utf8(out).unwrap().lines().all(|l| l.starts_with('!')));
    }

    #[test]
    fn strict_mode_rejects_malformed() {
        let mut o = opts();
        o.mode = ParseMode::Strict;
        let mut out = Vec::new();
        assert!(generate("bad line\n".as_bytes(), &mut out, &o).is_err());
        let (_, r) = gen("bad line\n", &opts());
        assert_eq!(r.lines_malformed, 1);
    }

    #[test]
    fn presorted_mode_checks_order() {
        let mut o = opts();
        o.presorted = true;
        let mut out = Vec::new();
        let err = generate_from_urilist("http://b.com/\nhttp://a.com/\n".as_bytes(), &mut out, &o).unwrap_err();
        assert!(matches!(err, Error::UnsortedInput { .. }));
    }

    #[test]
    fn spill_boundaries_keep_every_key() {
        for n in 1..40 {
            let uris: Vec<String> = (0..n).map(|i| format!("http://e.com/{i}")).collect();
            let mut out = Vec::new();
            let r = generate_from_urilist(uris.join("\n").as_bytes(), &mut out, &opts()).unwrap();
            assert_eq!((r.unique_hxpx, r.urim_total), (n, n), "n={n}");
            assert_eq!(String::from_utf8(out).unwrap().lines().count() as u64, n);
        }
    }

    #[test]
    fn partition_merge_equivalence() {
        let uris: Vec<String> = (0..200).map(|i| format!("http://h{}.example.com/p{}", i % 7, i % 13)).collect();
        let (a, b) = uris.split_at(90);
        let run = |u: &[String]| {
            let mut out = Vec::new();
            generate_from_urilist(u.join("\n").as_bytes(), &mut out, &opts()).unwrap();
            out
        };
        let whole = run(&uris);
        let mut merged = Vec::new();
        merge_documents(vec![&run(a)[..], &run(b)[..]], &mut merged).unwrap();
        assert_eq!(whole, merged);
        let doc = MementoMapDocument::read(&whole[..], ParseMode::Strict).unwrap();
        assert_eq!(doc.records.iter().map(|r| r.frequency.urim.value).sum::<u64>(), 200);
    }
}

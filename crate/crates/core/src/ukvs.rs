//! The UKVS flat-file format carrying MementoMaps.
//!
//! A document is a block of `!`-prefixed header lines followed by data lines
//! sorted byte-wise by key. Each data line holds whitespace-separated
//! columns: a SURT key, a frequency value and an optional single-line JSON
//! block kept as opaque text.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

/// Suffix on a count telling how exact it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Modifier {
    #[default]
    Exact,
    /// `+`: lower bound
    AtLeast,
    /// `-`: upper bound
    AtMost,
    /// `~`: rough estimate
    Approx,
}

impl Modifier {
    fn suffix(self) -> &'static str {
        match self {
            Modifier::Exact => "",
            Modifier::AtLeast => "+",
            Modifier::AtMost => "-",
            Modifier::Approx => "~",
        }
    }

    /// Combination used when two bounded counts are added.
    pub fn merge(self, other: Modifier) -> Modifier {
        use Modifier::*;
        match (self, other) {
            (Exact, Exact) => Exact,
            (Approx, _) | (_, Approx) => Approx,
            (AtLeast, AtMost) | (AtMost, AtLeast) => Approx,
            (AtLeast, _) | (_, AtLeast) => AtLeast,
            (AtMost, _) | (_, AtMost) => AtMost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Count {
    pub value: u64,
    pub modifier: Modifier,
}

impl Count {
    pub fn exact(value: u64) -> Self {
        Count {
            value,
            modifier: Modifier::Exact,
        }
    }

    fn parse(token: &str) -> Option<Count> {
        let (digits, modifier) = match token.as_bytes().last()? {
            b'+' => (&token[..token.len() - 1], Modifier::AtLeast),
            b'-' => (&token[..token.len() - 1], Modifier::AtMost),
            b'~' => (&token[..token.len() - 1], Modifier::Approx),
            _ => (token, Modifier::Exact),
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(Count {
            value: digits.parse().ok()?,
            modifier,
        })
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.modifier.suffix())
    }
}

/// `[URI-M count][/URI-R count]`, each optionally suffixed with `+`, `-` or `~`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrequencyValue {
    pub urim: Count,
    pub urir: Option<Count>,
}

impl FrequencyValue {
    pub fn urim(count: u64) -> Self {
        FrequencyValue {
            urim: Count::exact(count),
            urir: None,
        }
    }

    /// An exact zero: explicit absence of the key's sub-tree.
    pub fn is_blacklist(&self) -> bool {
        self.urim.value == 0 && self.urim.modifier == Modifier::Exact
    }

    /// Lenient duplicate-merge rule: counts add, modifiers widen.
    pub fn merge(&self, other: &FrequencyValue) -> FrequencyValue {
        let add = |a: Count, b: Count| Count {
            value: a.value.saturating_add(b.value),
            modifier: a.modifier.merge(b.modifier),
        };
        FrequencyValue {
            urim: add(self.urim, other.urim),
            urir: match (self.urir, other.urir) {
                (Some(a), Some(b)) => Some(add(a, b)),
                _ => None,
            },
        }
    }
}

impl fmt::Display for FrequencyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.urim)?;
        if let Some(urir) = self.urir {
            write!(f, "/{urir}")?;
        }
        Ok(())
    }
}

impl FromStr for FrequencyValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_frequency(s)
    }
}

pub fn parse_frequency(text: &str) -> Result<FrequencyValue> {
    let bad = || Error::MalformedFrequency(text.to_owned());
    let (urim, urir) = match text.split_once('/') {
        Some((m, r)) => (m, Some(r)),
        None => (text, None),
    };
    let urim = Count::parse(urim).ok_or_else(bad)?;
    let urir = match urir {
        Some(r) => Some(Count::parse(r).ok_or_else(bad)?),
        None => None,
    };
    Ok(FrequencyValue { urim, urir })
}

pub fn serialize_frequency(f: &FrequencyValue) -> String {
    f.to_string()
}

/// One `!name body` metadata line. The body is kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UkvsHeader {
    pub name: String,
    pub body: String,
}

impl UkvsHeader {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        UkvsHeader {
            name: name.into(),
            body: body.into(),
        }
    }
}

impl fmt::Display for UkvsHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body.is_empty() {
            write!(f, "!{}", self.name)
        } else {
            write!(f, "!{} {}", self.name, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UkvsRecord {
    pub key: String,
    pub frequency: FrequencyValue,
    /// Optional single-line JSON block, opaque.
    pub extra: Option<String>,
}

impl UkvsRecord {
    pub fn new(key: impl Into<String>, frequency: FrequencyValue) -> Self {
        UkvsRecord {
            key: key.into(),
            frequency,
            extra: None,
        }
    }
}

impl fmt::Display for UkvsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.key, self.frequency)?;
        if let Some(extra) = &self.extra {
            write!(f, " {extra}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Header(UkvsHeader),
    Record(UkvsRecord),
}

fn is_sep(c: char) -> bool {
    c == ' ' || c == '\t'
}

/// Splits off the first whitespace-delimited column.
fn next_column(s: &str) -> (&str, &str) {
    let s = s.trim_start_matches(is_sep);
    match s.find(is_sep) {
        Some(i) => (&s[..i], s[i..].trim_start_matches(is_sep)),
        None => (s, ""),
    }
}

/// Parses one line (without its terminator) into a header or a record.
pub fn parse_line(line: &str) -> std::result::Result<Line, String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.contains('\n') {
        return Err("embedded newline".into());
    }
    if let Some(rest) = line.strip_prefix('!') {
        let (name, body) = next_column(rest);
        if name.is_empty() {
            return Err("header without a name".into());
        }
        return Ok(Line::Header(UkvsHeader::new(name, body.trim_end_matches(is_sep))));
    }
    let (key, rest) = next_column(line);
    if key.is_empty() {
        return Err("empty line".into());
    }
    let (freq, rest) = next_column(rest);
    if freq.is_empty() {
        return Err(format!("missing frequency column for key `{key}`"));
    }
    let frequency = parse_frequency(freq).map_err(|e| e.to_string())?;
    let extra = rest.trim_end_matches(is_sep);
    Ok(Line::Record(UkvsRecord {
        key: key.to_owned(),
        frequency,
        extra: (!extra.is_empty()).then(|| extra.to_owned()),
    }))
}

/// Line-numbered variant of [`parse_line`].
pub fn parse_record(line: &str, line_no: u64) -> Result<Line> {
    parse_line(line).map_err(|reason| Error::MalformedLine {
        line: line_no,
        reason,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Report malformed lines on the log and skip them.
    Lenient,
}

/// Streams the lines of a document, enforcing sorted unique keys.
pub struct MapReader<R> {
    inner: R,
    mode: ParseMode,
    check_order: bool,
    line_no: u64,
    buf: String,
    last_key: Option<String>,
    seen_record: bool,
    skipped: u64,
}

impl<R: BufRead> MapReader<R> {
    pub fn new(inner: R) -> Self {
        MapReader {
            inner,
            mode: ParseMode::Strict,
            check_order: true,
            line_no: 0,
            buf: String::new(),
            last_key: None,
            seen_record: false,
            skipped: 0,
        }
    }

    pub fn with_mode(mut self, mode: ParseMode) -> Self {
        self.mode = mode;
        self
    }

    /// Disables the sorted-unique check.
    pub fn unchecked(mut self) -> Self {
        self.check_order = false;
        self
    }

    /// Malformed lines skipped so far in lenient mode.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn line_number(&self) -> u64 {
        self.line_no
    }

    fn read_next(&mut self) -> Result<Option<Line>> {
        loop {
            self.buf.clear();
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let parsed = parse_record(text, self.line_no);
            let line = match (parsed, self.mode) {
                (Ok(line), _) => line,
                (Err(e), ParseMode::Strict) => return Err(e),
                (Err(e), ParseMode::Lenient) => {
                    log::warn!("{e}");
                    self.skipped += 1;
                    continue;
                }
            };
            match &line {
                Line::Header(_) if self.seen_record => {
                    let e = Error::MalformedLine {
                        line: self.line_no,
                        reason: "header after data lines".into(),
                    };
                    if self.mode == ParseMode::Strict {
                        return Err(e);
                    }
                    log::warn!("{e}");
                    self.skipped += 1;
                    continue;
                }
                Line::Header(_) => {}
                Line::Record(rec) => {
                    self.seen_record = true;
                    if self.check_order {
                        if let Some(prev) = &self.last_key {
                            if rec.key.as_str() <= prev.as_str() {
                                return Err(Error::UnsortedInput {
                                    previous: prev.clone(),
                                    key: rec.key.clone(),
                                });
                            }
                        }
                        self.last_key = Some(rec.key.clone());
                    }
                }
            }
            return Ok(Some(line));
        }
    }

    /// Reads all leading headers, returning them and the first record, if any.
    pub fn read_headers(&mut self) -> Result<(Vec<UkvsHeader>, Option<UkvsRecord>)> {
        let mut headers = Vec::new();
        loop {
            match self.read_next()? {
                Some(Line::Header(h)) => headers.push(h),
                Some(Line::Record(r)) => return Ok((headers, Some(r))),
                None => return Ok((headers, None)),
            }
        }
    }
}

impl<R: BufRead> Iterator for MapReader<R> {
    type Item = Result<Line>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_next().transpose()
    }
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// True when the file starts with the gzip magic bytes.
pub fn is_gzip(path: impl AsRef<Path>) -> io::Result<bool> {
    let mut magic = [0u8; 2];
    let mut f = File::open(path)?;
    let n = f.read(&mut magic)?;
    Ok(n == 2 && magic == GZIP_MAGIC)
}

/// Opens a map or key file for streaming, transparently decompressing gzip.
/// `-` reads standard input.
pub fn open_input(path: impl AsRef<Path>) -> io::Result<Box<dyn BufRead + Send>> {
    let path = path.as_ref();
    if path.as_os_str() == "-" {
        let mut stdin = BufReader::new(io::stdin());
        let gz = stdin.fill_buf()?.starts_with(&GZIP_MAGIC);
        return Ok(if gz {
            Box::new(BufReader::new(MultiGzDecoder::new(stdin)))
        } else {
            Box::new(stdin)
        });
    }
    let file = File::open(path)?;
    if is_gzip(path)? {
        Ok(Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::with_capacity(1 << 16, file)))
    }
}

/// Headers this tool stamps on documents it generates.
pub fn default_headers(updated_at: &str) -> Vec<UkvsHeader> {
    vec![
        UkvsHeader::new("context", r#"["https://git.io/mementomap"]"#),
        UkvsHeader::new("fields", r#"{keys: ["surt"], values: ["frequency"]}"#),
        UkvsHeader::new("meta", r#"{type: "MementoMap"}"#),
        UkvsHeader::new("meta", format!(r#"{{updated_at: "{updated_at}"}}"#)),
    ]
}

/// Current UTC time in the `updated_at` header format.
pub fn now_timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Writes a document incrementally, rejecting out-of-order keys.
pub struct DocumentWriter<W: Write> {
    sink: W,
    bytes: u64,
    records: u64,
    last_key: Option<String>,
}

impl<W: Write> DocumentWriter<W> {
    pub fn new(sink: W) -> Self {
        DocumentWriter {
            sink,
            bytes: 0,
            records: 0,
            last_key: None,
        }
    }

    pub fn write_header(&mut self, header: &UkvsHeader) -> Result<()> {
        if self.records > 0 {
            return Err(Error::InvalidDocument("header after data lines".into()));
        }
        let line = format!("{header}\n");
        self.sink.write_all(line.as_bytes())?;
        self.bytes += line.len() as u64;
        Ok(())
    }

    pub fn write_record(&mut self, record: &UkvsRecord) -> Result<()> {
        if let Some(prev) = &self.last_key {
            if record.key.as_str() <= prev.as_str() {
                return Err(Error::UnsortedInput {
                    previous: prev.clone(),
                    key: record.key.clone(),
                });
            }
        }
        let line = format!("{record}\n");
        self.sink.write_all(line.as_bytes())?;
        self.bytes += line.len() as u64;
        self.records += 1;
        match &mut self.last_key {
            Some(k) => {
                k.clear();
                k.push_str(&record.key);
            }
            None => self.last_key = Some(record.key.clone()),
        }
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    pub fn finish(mut self) -> Result<(W, u64)> {
        self.sink.flush()?;
        Ok((self.sink, self.bytes))
    }
}

/// Writes headers and a sorted record stream; returns the byte count of
/// the uncompressed document.
pub fn write_document<W, I>(headers: &[UkvsHeader], records: I, sink: W, gzip: bool) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = UkvsRecord>,
{
    fn fill<W: Write>(w: &mut DocumentWriter<W>, headers: &[UkvsHeader], records: impl IntoIterator<Item = UkvsRecord>) -> Result<()> {
        for h in headers {
            w.write_header(h)?;
        }
        for r in records {
            w.write_record(&r)?;
        }
        Ok(())
    }
    if gzip {
        let mut w = DocumentWriter::new(GzEncoder::new(sink, Compression::default()));
        fill(&mut w, headers, records)?;
        let (enc, bytes) = w.finish()?;
        enc.finish()?;
        Ok(bytes)
    } else {
        let mut w = DocumentWriter::new(sink);
        fill(&mut w, headers, records)?;
        Ok(w.finish()?.1)
    }
}

/// An in-memory document: headers plus sorted records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MementoMapDocument {
    pub headers: Vec<UkvsHeader>,
    pub records: Vec<UkvsRecord>,
}

impl MementoMapDocument {
    pub fn read<R: BufRead>(reader: R, mode: ParseMode) -> Result<Self> {
        let mut doc = MementoMapDocument::default();
        for line in MapReader::new(reader).with_mode(mode) {
            match line? {
                Line::Header(h) => doc.headers.push(h),
                Line::Record(r) => doc.records.push(r),
            }
        }
        Ok(doc)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_document(&self.headers, self.records.iter().cloned(), &mut out, false)?;
        Ok(out)
    }
}

/// Merges sorted documents into one, combining duplicate keys with
/// [`FrequencyValue::merge`]. Headers come from the first input.
pub fn merge_documents<R: BufRead, W: Write>(inputs: Vec<R>, sink: W) -> Result<u64> {
    let mut readers: Vec<MapReader<R>> = inputs.into_iter().map(MapReader::new).collect();
    let mut heads: Vec<Option<UkvsRecord>> = Vec::with_capacity(readers.len());
    let mut writer = DocumentWriter::new(sink);
    for (i, reader) in readers.iter_mut().enumerate() {
        let (headers, first) = reader.read_headers()?;
        if i == 0 {
            for h in &headers {
                writer.write_header(h)?;
            }
        }
        heads.push(first);
    }
    while let Some(min_key) = heads.iter().flatten().map(|r| r.key.clone()).min() {
        let mut merged: Option<UkvsRecord> = None;
        for (head, reader) in heads.iter_mut().zip(readers.iter_mut()) {
            if head.as_ref().is_some_and(|r| r.key == min_key) {
                let rec = head.take().expect("checked above");
                merged = Some(match merged {
                    Some(mut m) => {
                        m.frequency = m.frequency.merge(&rec.frequency);
                        m
                    }
                    None => rec,
                });
                *head = match reader.next().transpose()? {
                    Some(Line::Record(r)) => Some(r),
                    Some(Line::Header(_)) => unreachable!("reader rejects late headers"),
                    None => None,
                };
            }
        }
        writer.write_record(&merged.expect("min key exists"))?;
    }
    Ok(writer.finish()?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_exemplars() {
        let f = parse_frequency("54321/20000").unwrap();
        assert_eq!(f.urim, Count::exact(54321));
        assert_eq!(f.urir, Some(Count::exact(20000)));

        let f = parse_frequency("10000+").unwrap();
        assert_eq!(f.urim.modifier, Modifier::AtLeast);
        assert_eq!(f.urir, None);

        let f = parse_frequency("2500~/900").unwrap();
        assert_eq!((f.urim.value, f.urim.modifier), (2500, Modifier::Approx));
        assert_eq!(f.urir, Some(Count::exact(900)));

        let f = parse_frequency("300+/20-").unwrap();
        assert_eq!(f.urim.modifier, Modifier::AtLeast);
        assert_eq!(f.urir.unwrap().modifier, Modifier::AtMost);

        let f = parse_frequency("0").unwrap();
        assert!(f.is_blacklist());

        for text in ["54321/20000", "10000+", "2500~/900", "300+/20-", "0"] {
            assert_eq!(serialize_frequency(&parse_frequency(text).unwrap()), text);
        }
    }

    #[test]
    fn malformed_frequencies() {
        for bad in ["", "+", "/5", "5/", "1x", "-3", "1++", "1/2/3", "1 2"] {
            assert!(parse_frequency(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn parse_lines() {
        match parse_line(r#"!meta {type: "MementoMap"}"#).unwrap() {
            Line::Header(h) => {
                assert_eq!(h.name, "meta");
                assert_eq!(h.body, r#"{type: "MementoMap"}"#);
            }
            other => panic!("{other:?}"),
        }
        match parse_line("org,arxiv)/pdf/*    0").unwrap() {
            Line::Record(r) => {
                assert_eq!(r.key, "org,arxiv)/pdf/*");
                assert!(r.frequency.is_blacklist());
            }
            other => panic!("{other:?}"),
        }
        match parse_line("com,a)/ 3\t{\"k\": \"v w\"}").unwrap() {
            Line::Record(r) => assert_eq!(r.extra.as_deref(), Some("{\"k\": \"v w\"}")),
            other => panic!("{other:?}"),
        }
        assert!(parse_line("lonely-key").is_err());
        assert!(parse_record("k x", 7).is_err());
    }

    #[test]
    fn reader_modes() {
        let text = "!meta {}\na 1\nb bogus\nc 2\n";
        let strict: Result<Vec<_>> = MapReader::new(text.as_bytes()).collect();
        assert!(matches!(strict, Err(Error::MalformedLine { line: 3, .. })));
        let mut lenient = MapReader::new(text.as_bytes()).with_mode(ParseMode::Lenient);
        let lines: Vec<_> = lenient.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lenient.skipped(), 1);

        let unsorted: Result<Vec<_>> = MapReader::new("b 1\na 1\n".as_bytes()).collect();
        assert!(matches!(unsorted, Err(Error::UnsortedInput { .. })));
        let dup: Result<Vec<_>> = MapReader::new("a 1\na 1\n".as_bytes()).collect();
        assert!(matches!(dup, Err(Error::UnsortedInput { .. })));
    }

    #[test]
    fn writer_rejects_unsorted() {
        let mut out = Vec::new();
        let recs = vec![UkvsRecord::new("b", FrequencyValue::urim(1)), UkvsRecord::new("a", FrequencyValue::urim(1))];
        let err = write_document(&[], recs, &mut out, false).unwrap_err();
        assert!(matches!(err, Error::UnsortedInput { .. }));
    }

    #[test]
    fn empty_stream_writes_headers_only() {
        let mut out = Vec::new();
        let headers = default_headers("2018-09-03T13:27:52Z");
        let n = write_document(&headers, Vec::new(), &mut out, false).unwrap();
        assert_eq!(n as usize, out.len());
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.starts_with('!')));
    }

    #[test]
    fn gzip_output_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ukvs.gz");
        let recs = vec![UkvsRecord::new("a)/", FrequencyValue::urim(1)), UkvsRecord::new("b)/", FrequencyValue::urim(2))];
        write_document(&default_headers("t"), recs.clone(), File::create(&path).unwrap(), true).unwrap();
        assert!(is_gzip(&path).unwrap());
        let doc = MementoMapDocument::read(open_input(&path).unwrap(), ParseMode::Strict).unwrap();
        assert_eq!(doc.records, recs);
    }

    #[test]
    fn merge_rules() {
        use Modifier::*;
        assert_eq!(Exact.merge(Exact), Exact);
        assert_eq!(Exact.merge(Approx), Approx);
        assert_eq!(AtLeast.merge(Exact), AtLeast);
        assert_eq!(AtMost.merge(AtMost), AtMost);
        assert_eq!(AtLeast.merge(AtMost), Approx);

        let a = "!meta {}\na 1\nc 2+\n";
        let b = "!other {}\nb 5\nc 3\n";
        let mut out = Vec::new();
        merge_documents(vec![a.as_bytes(), b.as_bytes()], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "!meta {}\na 1\nb 5\nc 5+\n");
    }
}

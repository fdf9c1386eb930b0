//! Binary search over a sorted MementoMap file.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::surt::{cascade, lookup_keys};
use crate::ukvs::{parse_line, FrequencyValue, Line, ParseMode, UkvsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    Present,
    /// Matched a record with an exact zero count.
    AbsentExplicit,
    #[serde(rename = "absent-nomatch")]
    AbsentNoMatch,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::Present => "present",
            Disposition::AbsentExplicit => "absent-explicit",
            Disposition::AbsentNoMatch => "absent-nomatch",
        }
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LookupResult {
    pub matched_key: String,
    #[serde(serialize_with = "crate::lookup::ser_display")]
    pub frequency: FrequencyValue,
    /// Seeks spent on this lookup.
    pub probes: u64,
}

pub(crate) fn ser_display<T: fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl LookupResult {
    pub fn disposition(&self) -> Disposition {
        if self.frequency.is_blacklist() {
            Disposition::AbsentExplicit
        } else {
            Disposition::Present
        }
    }
}

/// A map opened for repeated lookups. Seek state is per handle.
pub struct MapFile<R> {
    reader: BufReader<R>,
    len: u64,
    data_start: u64,
    first: Option<UkvsRecord>,
    mode: ParseMode,
    probes: u64,
    buf: String,
}

impl MapFile<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        MapFile::from_reader(file).map_err(|e| match e {
            Error::GzipNotSeekable(_) => Error::GzipNotSeekable(path.display().to_string()),
            other => other,
        })
    }
}

impl<R: Read + Seek> MapFile<R> {
    pub fn from_reader(mut inner: R) -> Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        // Each probe discards the buffer, so keep it near one line.
        let mut reader = BufReader::with_capacity(512, inner);
        if reader.fill_buf()?.starts_with(&[0x1f, 0x8b]) {
            return Err(Error::GzipNotSeekable("<input>".into()));
        }
        let mut map = MapFile {
            reader,
            len,
            data_start: 0,
            first: None,
            mode: ParseMode::Strict,
            probes: 0,
            buf: String::new(),
        };
        let mut pos = 0u64;
        loop {
            map.buf.clear();
            let n = map.reader.read_line(&mut map.buf)? as u64;
            if n == 0 {
                map.data_start = pos;
                break;
            }
            if map.buf.starts_with('!') || map.buf.trim().is_empty() {
                pos += n;
                continue;
            }
            map.data_start = pos;
            map.first = map.parse_current()?;
            break;
        }
        Ok(map)
    }

    pub fn with_mode(mut self, mode: ParseMode) -> Self {
        self.mode = mode;
        self
    }

    /// Total seeks performed through this handle.
    pub fn probes(&self) -> u64 {
        self.probes
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_none()
    }

    fn parse_current(&self) -> Result<Option<UkvsRecord>> {
        let text = self.buf.trim_end_matches(['\n', '\r']);
        match parse_line(text) {
            Ok(Line::Record(r)) => Ok(Some(r)),
            Ok(Line::Header(_)) => Ok(None),
            Err(reason) => match self.mode {
                ParseMode::Strict => Err(Error::MalformedLine { line: 0, reason }),
                ParseMode::Lenient => {
                    log::warn!("skipping malformed line during search: {reason}");
                    Ok(None)
                }
            },
        }
    }

    fn line_key(&self) -> &str {
        let text = self.buf.trim_start_matches([' ', '\t']);
        let end = text.find([' ', '\t', '\n', '\r']).unwrap_or(text.len());
        &text[..end]
    }

    /// Exact-match search for `key`.
    pub fn bin_search(&mut self, key: &str) -> Result<Option<UkvsRecord>> {
        let Some(first) = &self.first else {
            return Ok(None);
        };
        match key.cmp(first.key.as_str()) {
            std::cmp::Ordering::Equal => return Ok(Some(first.clone())),
            std::cmp::Ordering::Less => return Ok(None),
            std::cmp::Ordering::Greater => {}
        }
        let (mut left, mut right) = (self.data_start, self.len);
        while left < right {
            let mid = left + (right - left) / 2;
            self.reader.seek(SeekFrom::Start(mid))?;
            self.probes += 1;
            self.buf.clear();
            // skip partial line
            let skipped = self.reader.read_line(&mut self.buf)? as u64;
            self.buf.clear();
            let n = self.reader.read_line(&mut self.buf)?;
            if n == 0 {
                right = mid;
                continue;
            }
            let line_start = mid + skipped;
            match key.cmp(self.line_key()) {
                std::cmp::Ordering::Equal => {
                    return match self.parse_current()? {
                        Some(r) => Ok(Some(r)),
                        None => Ok(None),
                    };
                }
                std::cmp::Ordering::Greater => left = line_start,
                std::cmp::Ordering::Less => right = mid,
            }
        }
        Ok(None)
    }

    /// Probes the cascade of an HxPx key text, most specific first.
    pub fn lookup_key(&mut self, hxpx: &str) -> Result<Option<LookupResult>> {
        let before = self.probes;
        for key in cascade(hxpx) {
            if let Some(rec) = self.bin_search(&key)? {
                return Ok(Some(LookupResult {
                    matched_key: rec.key,
                    frequency: rec.frequency,
                    probes: self.probes - before,
                }));
            }
        }
        Ok(None)
    }

    pub fn lookup(&mut self, uri: &str) -> Result<Option<LookupResult>> {
        let keys = lookup_keys(uri)?;
        self.lookup_key(keys[0].as_str())
    }
}

/// One line of batch output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchItem {
    pub uri: String,
    pub disposition: Option<Disposition>,
    pub result: Option<LookupResult>,
    pub error: Option<String>,
}

impl BatchItem {
    /// `uri\tdisposition\tmatched_key\tfrequency`; errors use disposition `error`.
    pub fn to_tsv(&self) -> String {
        match (&self.disposition, &self.result, &self.error) {
            (Some(d), Some(r), _) => format!("{}\t{}\t{}\t{}", self.uri, d, r.matched_key, r.frequency),
            (Some(d), None, _) => format!("{}\t{}\t\t", self.uri, d),
            (None, _, e) => format!("{}\terror\t\t{}", self.uri, e.as_deref().unwrap_or("")),
        }
    }
}

/// Looks up each URI in order; per-line errors are reported, not fatal.
pub fn batch_lookup<'a, R, I, S>(map: &'a mut MapFile<R>, uris: I) -> impl Iterator<Item = BatchItem> + 'a
where
    R: Read + Seek + 'a,
    I: IntoIterator<Item = S> + 'a,
    S: AsRef<str>,
{
    uris.into_iter().map(move |uri| {
        let uri = uri.as_ref().trim().to_owned();
        match map.lookup(&uri) {
            Ok(Some(r)) => BatchItem {
                uri,
                disposition: Some(r.disposition()),
                result: Some(r),
                error: None,
            },
            Ok(None) => BatchItem {
                uri,
                disposition: Some(Disposition::AbsentNoMatch),
                result: None,
                error: None,
            },
            Err(e) => BatchItem {
                uri,
                disposition: None,
                result: None,
                error: Some(e.to_string()),
            },
        }
    })
}

/// Convenience single lookup against a map path.
pub fn lookup(path: impl AsRef<Path>, uri: &str) -> Result<Option<LookupResult>> {
    MapFile::open(path)?.lookup(uri)
}

//! Finding and retrieving published MementoMaps: the well-known URI, the
//! `mementomap` link relation and paginated fetches.

use std::io::{BufRead, BufReader, Read, Write};
use std::time::Duration;

use flate2::read::MultiGzDecoder;
use serde::Serialize;
use url::Url;

use crate::error::{Error, Result};
use crate::ukvs::{parse_line, DocumentWriter, Line, UkvsHeader, UkvsRecord};

pub const WELL_KNOWN_PATH: &str = "/.well-known/mementomap";
pub const LINK_RELATION: &str = "mementomap";
pub const DEFAULT_MAX_PAGES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiscoveryMethod {
    WellKnown,
    LinkHeader,
    HtmlLink,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscoverySource {
    pub archive_base: String,
    pub resolved_map_uri: String,
    pub method: DiscoveryMethod,
    /// Context the map describes when it is not the publishing host.
    pub anchor: Option<String>,
}

fn parse_http_url(uri: &str) -> Result<Url> {
    let url = Url::parse(uri.trim()).map_err(|e| Error::malformed_uri(uri, e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
        return Err(Error::malformed_uri(uri, "expected an absolute http(s) URI"));
    }
    Ok(url)
}

/// `scheme://authority/.well-known/mementomap` for an archive base URI.
pub fn well_known_uri(archive_base: &str) -> Result<String> {
    let mut url = parse_http_url(archive_base)?;
    url.set_path(WELL_KNOWN_PATH);
    url.set_query(None);
    url.set_fragment(None);
    let _ = url.set_username("");
    let _ = url.set_password(None);
    Ok(url.into())
}

/// Splits on `sep` outside `<...>` and double quotes.
fn split_top_level(text: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut in_angle, mut in_quote, mut start) = (false, false, 0);
    for (i, c) in text.char_indices() {
        match c {
            '<' if !in_quote => in_angle = true,
            '>' if !in_quote => in_angle = false,
            '"' if !in_angle => in_quote = !in_quote,
            c if c == sep && !in_angle && !in_quote => {
                parts.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

/// A parsed link: target plus lowercase-named parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub target: String,
    pub params: Vec<(String, String)>,
}

impl Link {
    pub fn param(&self, name: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn has_rel(&self, rel: &str) -> bool {
        self.param("rel")
            .is_some_and(|r| r.split_ascii_whitespace().any(|x| x.eq_ignore_ascii_case(rel)))
    }
}

/// Parses an HTTP `Link` header value.
pub fn parse_link_header(value: &str) -> Vec<Link> {
    let mut links = Vec::new();
    for part in split_top_level(value, ',') {
        let mut fields = split_top_level(part, ';').into_iter();
        let target = fields.next().unwrap_or("").trim();
        let Some(target) = target.strip_prefix('<').and_then(|t| t.strip_suffix('>')) else {
            if !target.is_empty() {
                log::debug!("skipping unparseable link `{part}`");
            }
            continue;
        };
        let params = fields
            .filter_map(|f| {
                let (k, v) = f.split_once('=')?;
                Some((k.trim().to_ascii_lowercase(), unquote(v).to_owned()))
            })
            .collect();
        links.push(Link {
            target: target.trim().to_owned(),
            params,
        });
    }
    links
}

/// Attributes of every `<link ...>` element in an HTML document.
fn parse_html_links(html: &str) -> Vec<Link> {
    let lower = html.to_ascii_lowercase();
    let mut links = Vec::new();
    let mut from = 0;
    while let Some(i) = lower[from..].find("<link") {
        let start = from + i + 5;
        let end = lower[start..].find('>').map_or(html.len(), |e| start + e);
        links.extend(parse_attributes(&html[start..end]));
        from = end;
    }
    links
}

fn parse_attributes(tag: &str) -> Option<Link> {
    let bytes = tag.as_bytes();
    let mut params = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'/') {
            i += 1;
        }
        let name_start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'=' && bytes[i] != b'/' {
            i += 1;
        }
        let name = tag[name_start..i].to_ascii_lowercase();
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < bytes.len() && bytes[i] == b'=' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                let q = bytes[i];
                let vs = i + 1;
                i = vs;
                while i < bytes.len() && bytes[i] != q {
                    i += 1;
                }
                value = tag[vs..i].to_owned();
                i += 1;
            } else {
                let vs = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                value = tag[vs..i].to_owned();
            }
        }
        if !name.is_empty() {
            params.push((name, value));
        }
    }
    let href = params.iter().find(|(k, _)| k == "href")?.1.clone();
    Some(Link { target: href, params })
}

/// Every `mementomap` link in a `Link` header value or HTML document.
/// Targets are resolved against `base` when given.
pub fn extract_link_relation_from(text: &str, base: Option<&str>) -> Vec<DiscoverySource> {
    let html = text.to_ascii_lowercase().contains("<link");
    let (links, method) = if html {
        (parse_html_links(text), DiscoveryMethod::HtmlLink)
    } else {
        (parse_link_header(text), DiscoveryMethod::LinkHeader)
    };
    let base_url = base.and_then(|b| Url::parse(b).ok());
    links
        .into_iter()
        .filter(|l| l.has_rel(LINK_RELATION))
        .filter_map(|l| {
            let resolved = match &base_url {
                Some(b) => b.join(&l.target).ok()?.to_string(),
                None => l.target.clone(),
            };
            Some(DiscoverySource {
                archive_base: base.unwrap_or_default().to_owned(),
                resolved_map_uri: resolved,
                method,
                anchor: l.param("anchor").map(str::to_owned),
            })
        })
        .collect()
}

pub fn extract_link_relation(text: &str) -> Vec<DiscoverySource> {
    extract_link_relation_from(text, None)
}

/// Minimal HTTP GET abstraction so fetching can be exercised offline.
pub trait Transport {
    fn get(&self, uri: &str) -> Result<HttpResponse>;
}

pub struct HttpResponse {
    pub status: u16,
    /// URI after redirects.
    pub final_uri: String,
    pub link_headers: Vec<String>,
    pub body: Box<dyn Read + Send>,
}

/// `ureq`-backed transport: gzip transfer encoding, up to 5 redirects.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .max_redirects(5)
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, uri: &str) -> Result<HttpResponse> {
        use ureq::ResponseExt;
        let resp = self.agent.get(uri).call().map_err(|e| Error::Transport(e.to_string()))?;
        let final_uri = resp.get_uri().to_string();
        let link_headers = resp
            .headers()
            .get_all("link")
            .iter()
            .filter_map(|v| v.to_str().ok().map(str::to_owned))
            .collect();
        let status = resp.status().as_u16();
        Ok(HttpResponse {
            status,
            final_uri,
            link_headers,
            body: Box::new(resp.into_body().into_reader()),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    pub bytes: u64,
    pub pages: usize,
    pub records: u64,
}

/// The `next` target of a `!meta {next: "<uri>"}` header.
fn next_from_header(h: &UkvsHeader) -> Option<String> {
    if h.name != "meta" {
        return None;
    }
    let body = h.body.trim().trim_start_matches('{').trim_end_matches('}');
    body.split(',').find_map(|field| {
        let (k, v) = field.split_once(':')?;
        let k = k.trim().trim_matches('"');
        (k == "next").then(|| unquote(v).to_owned())
    })
}

/// Fetches a map and every page it links to, writing one revalidated
/// document to `sink`. `next` headers are dropped; later pages contribute
/// records only.
pub fn fetch_mementomap<T: Transport + ?Sized, W: Write>(
    uri: &str,
    transport: &T,
    sink: W,
    max_pages: usize,
) -> Result<FetchReport> {
    let mut writer = DocumentWriter::new(sink);
    let mut report = FetchReport::default();
    let mut next = Some(uri.to_owned());
    while let Some(page_uri) = next.take() {
        if report.pages >= max_pages {
            return Err(Error::TooManyPages(max_pages));
        }
        let resp = transport.get(&page_uri)?;
        if resp.status != 200 {
            return Err(Error::HttpFailure {
                uri: page_uri,
                status: resp.status,
            });
        }
        report.pages += 1;
        let base = Url::parse(&resp.final_uri).ok();
        let resolve = |target: &str| match &base {
            Some(b) => b.join(target).map(String::from).unwrap_or_else(|_| target.to_owned()),
            None => target.to_owned(),
        };
        for value in &resp.link_headers {
            if let Some(l) = parse_link_header(value).into_iter().find(|l| l.has_rel("next")) {
                next = Some(resolve(&l.target));
            }
        }
        let mut reader = BufReader::new(resp.body);
        let body: Box<dyn BufRead> = if reader.fill_buf()?.starts_with(&[0x1f, 0x8b]) {
            Box::new(BufReader::new(MultiGzDecoder::new(reader)))
        } else {
            Box::new(reader)
        };
        for (n, line) in body.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let invalid = |reason: String| Error::InvalidDocument(format!("{page_uri} line {}: {reason}", n + 1));
            match parse_line(&line).map_err(invalid)? {
                Line::Header(h) => {
                    if let Some(target) = next_from_header(&h) {
                        next = Some(resolve(&target));
                    } else if report.pages == 1 {
                        writer.write_header(&h).map_err(|e| invalid(e.to_string()))?;
                    }
                }
                Line::Record(r) => {
                    writer.write_record(&r).map_err(|e| invalid(e.to_string()))?;
                    report.records += 1;
                }
            }
        }
    }
    report.bytes = writer.bytes_written();
    writer.finish()?;
    Ok(report)
}

/// Tries the well-known URI first, then `mementomap` links on the base
/// page (Link header, then HTML).
pub fn discover<T: Transport + ?Sized>(archive_base: &str, transport: &T) -> Result<DiscoverySource> {
    let wk = well_known_uri(archive_base)?;
    let resp = transport.get(&wk)?;
    if resp.status == 200 {
        return Ok(DiscoverySource {
            archive_base: archive_base.to_owned(),
            resolved_map_uri: resp.final_uri,
            method: DiscoveryMethod::WellKnown,
            anchor: None,
        });
    }
    log::info!("{wk} returned {}, trying link relations", resp.status);
    let resp = transport.get(archive_base)?;
    for value in &resp.link_headers {
        if let Some(src) = extract_link_relation_from(value, Some(&resp.final_uri)).into_iter().next() {
            return Ok(DiscoverySource {
                archive_base: archive_base.to_owned(),
                ..src
            });
        }
    }
    let mut html = String::new();
    resp.body.take(4 << 20).read_to_string(&mut html).ok();
    extract_link_relation_from(&html, Some(&resp.final_uri))
        .into_iter()
        .next()
        .map(|src| DiscoverySource {
            archive_base: archive_base.to_owned(),
            ..src
        })
        .ok_or(Error::HttpFailure {
            uri: wk,
            status: resp.status,
        })
}

/// One page of a paginated document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    pub body: String,
    pub next: Option<String>,
}

/// Splits headers and records into pages of at most `per_page` records.
/// Page `i` links to `page_uri(i + 1)` through a `!meta {next: ...}` header;
/// the original headers go on the first page only.
pub fn paginate(headers: &[UkvsHeader], records: &[UkvsRecord], per_page: usize, page_uri: impl Fn(usize) -> String) -> Vec<Page> {
    let chunks: Vec<&[UkvsRecord]> = if records.is_empty() {
        vec![&[]]
    } else {
        records.chunks(per_page.max(1)).collect()
    };
    let count = chunks.len();
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let next = (i + 1 < count).then(|| page_uri(i + 1));
            let mut body = String::new();
            if i == 0 {
                for h in headers {
                    body.push_str(&format!("{h}\n"));
                }
            }
            if let Some(n) = &next {
                body.push_str(&format!("!meta {{next: \"{n}\"}}\n"));
            }
            for r in chunk {
                body.push_str(&format!("{r}\n"));
            }
            Page { body, next }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ukvs::FrequencyValue;
    use std::collections::HashMap;
    use std::io::Cursor;

    #[test]
    fn well_known_examples() {
        assert_eq!(
            well_known_uri("https://archive.example.org/").unwrap(),
            "https://archive.example.org/.well-known/mementomap"
        );
        assert_eq!(well_known_uri("https://a.org/wayback/?q#f").unwrap(), "https://a.org/.well-known/mementomap");
        assert_eq!(well_known_uri("http://a.org:8080/x").unwrap(), "http://a.org:8080/.well-known/mementomap");
        let once = well_known_uri("https://a.org/x").unwrap();
        assert_eq!(well_known_uri(&once).unwrap(), once);
        assert!(well_known_uri("ftp://a.org/").is_err());
    }

    #[test]
    fn link_header_examples() {
        let s = extract_link_relation(r#"<https://a.org/mm.ukvs>; rel="mementomap""#);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].resolved_map_uri.as_str(), s[0].method), ("https://a.org/mm.ukvs", DiscoveryMethod::LinkHeader));
        assert!(extract_link_relation(r#"<https://a.org/>; rel="original""#).is_empty());
        let s = extract_link_relation(
            r#"<https://a.org/x>; rel="original", <https://a.org/mm>; rel="MementoMap alternate"; anchor="https://other.archive/""#,
        );
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].anchor.as_deref(), Some("https://other.archive/"));
    }

    #[test]
    fn html_link() {
        let html = r#"<html><head><LINK rel='mementomap' href="/mm.ukvs"><link rel=stylesheet href=a.css></head></html>"#;
        let s = extract_link_relation_from(html, Some("https://a.org/wayback/"));
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].resolved_map_uri.as_str(), s[0].method), ("https://a.org/mm.ukvs", DiscoveryMethod::HtmlLink));
    }

    struct Fake(HashMap<String, (u16, String)>);

    impl Transport for Fake {
        fn get(&self, uri: &str) -> Result<HttpResponse> {
            let (status, body) = self.0.get(uri).cloned().unwrap_or((404, String::new()));
            Ok(HttpResponse {
                status,
                final_uri: uri.to_owned(),
                link_headers: Vec::new(),
                body: Box::new(Cursor::new(body.into_bytes())),
            })
        }
    }

    fn records(n: usize) -> Vec<UkvsRecord> {
        (0..n).map(|i| UkvsRecord::new(format!("com,e)/{i:03}"), FrequencyValue::urim(1))).collect()
    }

    #[test]
    fn paginated_fetch() {
        let headers = crate::ukvs::default_headers("t");
        let pages = paginate(&headers, &records(7), 3, |i| format!("http://h/p{i}"));
        assert_eq!(pages.len(), 3);
        let mut served = HashMap::new();
        for (i, p) in pages.iter().enumerate() {
            served.insert(format!("http://h/p{i}"), (200, p.body.clone()));
        }
        let mut out = Vec::new();
        let r = fetch_mementomap("http://h/p0", &Fake(served.clone()), &mut out, 10).unwrap();
        assert_eq!((r.pages, r.records), (3, 7));
        let text = String::from_utf8(out).unwrap();
        assert!(!text.contains("next"));
        assert_eq!(text.lines().filter(|l| l.starts_with('!')).count(), 4);

        assert!(matches!(fetch_mementomap("http://h/p0", &Fake(served.clone()), Vec::new(), 2), Err(Error::TooManyPages(2))));
        assert!(matches!(
            fetch_mementomap("http://h/none", &Fake(served), Vec::new(), 2),
            Err(Error::HttpFailure { status: 404, .. })
        ));
    }

    #[test]
    fn unsorted_pages_rejected() {
        let mut served = HashMap::new();
        served.insert("http://h/0".into(), (200, "!meta {next: \"/1\"}\nb 1\n".into()));
        served.insert("http://h/1".into(), (200, "a 1\n".into()));
        let err = fetch_mementomap("http://h/0", &Fake(served), Vec::new(), 5).unwrap_err();
        assert!(matches!(err, Error::InvalidDocument(_)));
    }

    #[test]
    fn discover_falls_back_to_html() {
        let mut served = HashMap::new();
        served.insert("https://a.org/".into(), (200, r#"<link rel="mementomap" href="/maps/mm.ukvs">"#.into()));
        let src = discover("https://a.org/", &Fake(served.clone())).unwrap();
        assert_eq!(src.resolved_map_uri, "https://a.org/maps/mm.ukvs");
        served.insert("https://a.org/.well-known/mementomap".into(), (200, String::new()));
        assert_eq!(discover("https://a.org/", &Fake(served)).unwrap().method, DiscoveryMethod::WellKnown);
    }
}

//! URI canonicalization into SURT keys, HxPx keys and lookup-key cascades.
//!
//! Key grammar (see `docs/formats.md`):
//!
//! ```text
//! key      = "*" | host-wc | host ")" path [ "?" query ]
//! host-wc  = label *( "," label ) ",*"
//! host     = label *( "," label ) [ ":" port ]
//! path     = "/" | 1*( "/" segment ) [ "/*" ] | "/*"
//! ```
//!
//! Host labels are reversed DNS labels (`com,example,foo`). Byte-wise order
//! of keys groups every host and path prefix together, which the compactor
//! and the on-file binary search both rely on.

use std::fmt;

use url::{Host, Url};

use crate::error::{Error, Result};

/// Default cap on host labels considered by prefix operations.
pub const MAX_HOST_DEPTH: usize = 10;
/// Default cap on path tokens (including the host-terminal `P0` token).
pub const MAX_PATH_DEPTH: usize = 12;

/// A URI decomposed into canonical SURT components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalUri {
    pub scheme: String,
    /// Reversed DNS labels, TLD first.
    pub host_parts: Vec<String>,
    /// Present only when not the scheme default.
    pub port: Option<u16>,
    pub path_segments: Vec<String>,
    /// `key=value` tokens, sorted byte-wise.
    pub query_params: Vec<String>,
}

impl CanonicalUri {
    /// Host section of the SURT, port included.
    pub fn surt_host(&self) -> String {
        let mut host = self.host_parts.join(",");
        if let Some(port) = self.port {
            host.push(':');
            host.push_str(&port.to_string());
        }
        host
    }

    fn surt_path(&self) -> String {
        let mut path = String::from("/");
        path.push_str(&self.path_segments.join("/"));
        path
    }

    pub fn to_surt(&self) -> SurtKey {
        let mut text = self.surt_host();
        text.push(')');
        text.push_str(&self.surt_path());
        if !self.query_params.is_empty() {
            text.push('?');
            text.push_str(&self.query_params.join("&"));
        }
        SurtKey(text)
    }

    pub fn to_hxpx(&self) -> HxPxKey {
        let mut text = self.surt_host();
        text.push(')');
        text.push_str(&self.surt_path());
        HxPxKey {
            key: SurtKey(text),
            host_depth: self.host_parts.len(),
            path_depth: self.path_segments.len(),
        }
    }

    /// Reassembles an absolute URI that canonicalizes back to `self`.
    pub fn to_uri(&self) -> String {
        let mut labels: Vec<&str> = self.host_parts.iter().map(String::as_str).collect();
        labels.reverse();
        let mut uri = format!("{}://{}", self.scheme, labels.join("."));
        if let Some(port) = self.port {
            uri.push(':');
            uri.push_str(&port.to_string());
        }
        uri.push_str(&self.surt_path());
        if !self.query_params.is_empty() {
            uri.push('?');
            uri.push_str(&self.query_params.join("&"));
        }
        uri
    }
}

/// A SURT key, possibly wildcard-terminated. Ordering is byte-wise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SurtKey(String);

impl SurtKey {
    /// Validates key syntax: no whitespace, at most one `)`, and a `*` only
    /// as the final token of a wildcard key.
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        validate_key(&text)?;
        Ok(SurtKey(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn is_wildcard(&self) -> bool {
        is_wildcard(&self.0)
    }
}

impl fmt::Display for SurtKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for SurtKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// True for `*`, `...,*` and `.../*` keys.
pub fn is_wildcard(key: &str) -> bool {
    key == "*" || key.ends_with(",*") || key.ends_with("/*")
}

fn validate_key(text: &str) -> Result<()> {
    let bad = |reason: &str| Err(Error::malformed_uri(text, reason));
    if text.is_empty() {
        return bad("empty key");
    }
    if text.bytes().any(|b| b.is_ascii_whitespace()) {
        return bad("key contains whitespace");
    }
    if text.matches(')').count() > 1 {
        return bad("more than one `)` separator");
    }
    let stars = text.matches('*').count();
    if stars > 1 || (stars == 1 && !is_wildcard(text)) {
        return bad("`*` is only allowed as the final wildcard token");
    }
    if is_wildcard(text) && text.ends_with(",*") && text.contains(')') {
        return bad("host wildcard after `)`");
    }
    Ok(())
}

/// A query-free, wildcard-free SURT with its host and path depths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HxPxKey {
    pub key: SurtKey,
    pub host_depth: usize,
    pub path_depth: usize,
}

impl HxPxKey {
    /// Interprets an existing key text (e.g. from a map file). Queries are
    /// stripped and non-root trailing slashes removed.
    pub fn parse(text: &str) -> Result<Self> {
        let key = SurtKey::new(text)?;
        if key.is_wildcard() {
            return Err(Error::malformed_uri(text, "wildcard is not an HxPx key"));
        }
        let Some((host, rest)) = text.split_once(')') else {
            return Err(Error::malformed_uri(text, "missing `)` separator"));
        };
        let path = rest.split('?').next().unwrap_or("");
        let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
        let mut norm = String::with_capacity(text.len());
        norm.push_str(host);
        norm.push_str(")/");
        norm.push_str(&segments.join("/"));
        Ok(HxPxKey {
            key: SurtKey(norm),
            host_depth: host.split(',').count(),
            path_depth: segments.len(),
        })
    }

    pub fn as_str(&self) -> &str {
        self.key.as_str()
    }
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

fn push_pct(out: &mut String, b: u8) {
    const HEX: &[u8; 16] = b"0123456789ABCDEF";
    out.push('%');
    out.push(HEX[(b >> 4) as usize] as char);
    out.push(HEX[(b & 0xF) as usize] as char);
}

/// Uppercases percent-escapes, decodes escaped unreserved bytes, and
/// escapes bytes that would collide with the key grammar.
fn normalize_component(raw: &str) -> String {
    let bytes = raw.as_bytes();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'%' {
            let hex = bytes
                .get(i + 1..i + 3)
                .and_then(|h| std::str::from_utf8(h).ok())
                .and_then(|h| u8::from_str_radix(h, 16).ok());
            match hex {
                Some(v) if is_unreserved(v) => out.push(v as char),
                Some(v) => push_pct(&mut out, v),
                None => {
                    push_pct(&mut out, b'%');
                    i += 1;
                    continue;
                }
            }
            i += 3;
            continue;
        }
        if matches!(b, b')' | b'*') || b.is_ascii_whitespace() || !b.is_ascii() {
            push_pct(&mut out, b);
        } else {
            out.push(b as char);
        }
        i += 1;
    }
    out
}

fn is_www(label: &str) -> bool {
    label
        .strip_prefix("www")
        .is_some_and(|rest| rest.bytes().all(|b| b.is_ascii_digit()))
}

/// Canonicalizes an absolute http(s) URI. A missing scheme defaults to `http`.
pub fn canonicalize(uri: &str) -> Result<CanonicalUri> {
    let trimmed = uri.trim();
    if trimmed.is_empty() {
        return Err(Error::malformed_uri(uri, "empty URI"));
    }
    let owned;
    let absolute = if trimmed.contains("://") {
        trimmed
    } else {
        owned = format!("http://{trimmed}");
        &owned
    };
    let url = Url::parse(absolute).map_err(|e| Error::malformed_uri(uri, e.to_string()))?;
    let scheme = url.scheme().to_owned();
    if scheme != "http" && scheme != "https" {
        return Err(Error::malformed_uri(uri, format!("unsupported scheme `{scheme}`")));
    }

    let mut host_parts: Vec<String> = match url.host() {
        Some(Host::Domain(domain)) => {
            let domain = domain.trim_end_matches('.').to_ascii_lowercase();
            let labels: Vec<String> = domain.split('.').map(str::to_owned).collect();
            if labels
                .iter()
                .any(|l| l.is_empty() || l.bytes().any(|b| matches!(b, b',' | b')' | b'*' | b'/' | b'?')))
            {
                return Err(Error::malformed_uri(uri, "invalid host label"));
            }
            let mut labels = labels;
            labels.reverse();
            labels
        }
        Some(Host::Ipv4(addr)) => addr.to_string().split('.').rev().map(str::to_owned).collect(),
        Some(Host::Ipv6(addr)) => vec![format!("[{addr}]")],
        None => return Err(Error::malformed_uri(uri, "missing host")),
    };
    if matches!(url.host(), Some(Host::Domain(_)))
        && host_parts.len() > 2
        && host_parts.last().is_some_and(|l| is_www(l))
    {
        host_parts.pop();
    }

    let path_segments = url
        .path()
        .split('/')
        .filter(|s| !s.is_empty())
        .map(normalize_component)
        .collect();

    let mut query_params: Vec<String> = url
        .query()
        .unwrap_or("")
        .split('&')
        .filter(|s| !s.is_empty())
        .map(normalize_component)
        .collect();
    query_params.sort_unstable();

    Ok(CanonicalUri {
        scheme,
        host_parts,
        port: url.port(),
        path_segments,
        query_params,
    })
}

/// Full SURT of a URI, query included, scheme omitted.
pub fn surtify(uri: &str) -> Result<SurtKey> {
    Ok(canonicalize(uri)?.to_surt())
}

pub fn hxpx_key(uri: &str) -> Result<HxPxKey> {
    Ok(canonicalize(uri)?.to_hxpx())
}

/// Rebuilds an `http` URI from a non-wildcard SURT key.
pub fn surt_to_uri(key: &str) -> Result<String> {
    let surt = SurtKey::new(key)?;
    if surt.is_wildcard() {
        return Err(Error::malformed_uri(key, "wildcard keys have no URI"));
    }
    let (host, rest) = key
        .split_once(')')
        .ok_or_else(|| Error::malformed_uri(key, "missing `)` separator"))?;
    let (host, port) = match host.rsplit_once(':') {
        Some((h, p)) if !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()) => (h, Some(p)),
        _ => (host, None),
    };
    let mut labels: Vec<&str> = host.split(',').collect();
    labels.reverse();
    let mut uri = format!("http://{}", labels.join("."));
    if let Some(port) = port {
        uri.push(':');
        uri.push_str(port);
    }
    if rest.is_empty() {
        uri.push('/');
    } else {
        uri.push_str(rest);
    }
    Ok(uri)
}

/// Host-prefix keys of increasing depth. At most `max_depth` keys; the last
/// one keeps any remaining labels unsplit.
pub fn host_keys(surt: &str, max_depth: usize) -> Vec<String> {
    let host = surt.split(')').next().unwrap_or("");
    prefixes(host, ',', max_depth)
}

/// Path-prefix keys of increasing depth, the first being the host-terminal
/// `host)` key. Query and trailing slashes are stripped first.
pub fn path_keys(surt: &str, max_depth: usize) -> Vec<String> {
    let base = surt.split('?').next().unwrap_or("").trim_end_matches('/');
    prefixes(base, '/', max_depth)
}

fn prefixes(text: &str, sep: char, max_depth: usize) -> Vec<String> {
    let parts: Vec<&str> = text.splitn(max_depth.max(1), sep).collect();
    (1..=parts.len()).map(|i| parts[..i].join(&sep.to_string())).collect()
}

/// Lookup keys for an HxPx key text in decreasing specificity.
///
/// `com,example)/a/b` gives `com,example)/a/b`, `com,example)/a/b/*`,
/// `com,example)/a/*`, `com,example)/*`, `com,*`. The root key `H)/` is
/// followed directly by the host wildcards.
pub fn cascade(hxpx: &str) -> Vec<String> {
    let mut keys = vec![hxpx.to_owned()];
    let (host, path) = match hxpx.split_once(')') {
        Some((h, p)) => (h, p),
        None => (hxpx, ""),
    };
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    if !segments.is_empty() {
        for depth in (0..=segments.len()).rev() {
            let mut key = String::with_capacity(hxpx.len() + 2);
            key.push_str(host);
            key.push_str(")/");
            for seg in &segments[..depth] {
                key.push_str(seg);
                key.push('/');
            }
            key.push('*');
            keys.push(key);
        }
    }
    let labels: Vec<&str> = host.split(',').collect();
    for depth in (1..labels.len()).rev() {
        let mut key = labels[..depth].join(",");
        key.push_str(",*");
        keys.push(key);
    }
    keys
}

/// Lookup keys for a URI, most specific first; element 0 is its HxPx key.
pub fn lookup_keys(uri: &str) -> Result<Vec<SurtKey>> {
    let hxpx = hxpx_key(uri)?;
    Ok(cascade(hxpx.as_str()).into_iter().map(SurtKey).collect())
}

//! Synthetic archives shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use mementomap::surt::hxpx_key;
use mementomap::ukvs::{write_document, FrequencyValue, UkvsRecord};
use rand::Rng;
use rand_distr::{Distribution, Zipf};

/// URI generator whose hosts and path segments follow Zipf laws, so a few
/// sub-trees are dense and most are sparse.
pub struct UriGen {
    domain: Zipf<f64>,
    label: Zipf<f64>,
    segment: Zipf<f64>,
}

const TLDS: [&str; 5] = ["com", "org", "net", "uk", "pt"];

impl UriGen {
    pub fn new(domains: u64, labels: u64, segments: u64) -> Self {
        UriGen {
            domain: Zipf::new(domains, 1.1).unwrap(),
            label: Zipf::new(labels, 1.0).unwrap(),
            segment: Zipf::new(segments, 1.1).unwrap(),
        }
    }

    pub fn standard() -> Self {
        Self::new(2000, 20, 300)
    }

    pub fn uri<R: Rng>(&self, rng: &mut R) -> String {
        let mut host = Vec::new();
        let extra = match rng.gen_range(0..100) {
            0..=49 => 0,
            50..=79 => 1,
            80..=94 => 2,
            _ => 3,
        };
        for _ in 0..extra {
            host.push(format!("s{}", self.label.sample(rng) as u64));
        }
        host.push(format!("d{}", self.domain.sample(rng) as u64));
        host.push(TLDS[rng.gen_range(0..TLDS.len())].to_owned());
        let depth = match rng.gen_range(0..100) {
            0..=9 => 0,
            10..=34 => 1,
            35..=64 => 2,
            65..=84 => 3,
            85..=94 => 4,
            _ => 5,
        };
        let path: Vec<String> = (0..depth).map(|_| format!("p{}", self.segment.sample(rng) as u64)).collect();
        let mut uri = format!("http://{}/{}", host.join("."), path.join("/"));
        if rng.gen_bool(0.2) {
            uri.push_str(&format!("?id={}", rng.gen_range(0..50)));
        }
        uri
    }

    /// `n` distinct URIs.
    pub fn unique_uris<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<String> {
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u = self.uri(rng);
            if seen.insert(u.clone()) {
                out.push(u);
            }
        }
        out
    }

    /// `n` sorted unique HxPx keys.
    pub fn keys<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<String> {
        let mut keys = BTreeSet::new();
        while keys.len() < n {
            keys.insert(hxpx_key(&self.uri(rng)).unwrap().key.into_string());
        }
        keys.into_iter().collect()
    }
}

/// Records with exact URI-M counts in `1..=max`.
pub fn records<R: Rng>(rng: &mut R, keys: &[String], max: u64) -> Vec<UkvsRecord> {
    keys.iter()
        .map(|k| UkvsRecord::new(k.clone(), FrequencyValue::urim(rng.gen_range(1..=max))))
        .collect()
}

pub fn document(records: &[UkvsRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_document(&[], records.iter().cloned(), &mut out, false).unwrap();
    out
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ConnRecord, Proto};

/// Name of the catch-all bucket.
pub const OTHER: &str = "Other";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBucket {
    pub name: String,
    pub members: Vec<(Proto, u16)>,
}

impl PortBucket {
    pub fn new(name: impl Into<String>, members: Vec<(Proto, u16)>) -> Self {
        PortBucket { name: name.into(), members }
    }

    /// TCP and UDP on the same port number.
    fn both(name: &str, port: u16) -> Self {
        PortBucket::new(name, vec![(Proto::Tcp, port), (Proto::Udp, port)])
    }
}

/// Ordered, disjoint port buckets plus the implicit trailing `Other`.
///
/// Bucket order defines feature column order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<PortBucket>", into = "Vec<PortBucket>")]
pub struct PortBucketConfig {
    buckets: Vec<PortBucket>,
    lookup: HashMap<(Proto, u16), usize>,
}

impl PartialEq for PortBucketConfig {
    fn eq(&self, other: &Self) -> bool {
        self.buckets == other.buckets
    }
}

impl PortBucketConfig {
    pub fn new(buckets: Vec<PortBucket>) -> Result<Self> {
        let mut lookup = HashMap::new();
        let mut names = std::collections::HashSet::new();
        for (i, b) in buckets.iter().enumerate() {
            if b.name == OTHER || b.name.is_empty() || b.name.contains(['.', ',']) {
                return Err(Error::Config(format!("invalid bucket name `{}`", b.name)));
            }
            if !names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("duplicate bucket name `{}`", b.name)));
            }
            for &(proto, port) in &b.members {
                if let Some(prev) = lookup.insert((proto, port), i) {
                    return Err(Error::Config(format!(
                        "{proto}/{port} is in both `{}` and `{}`",
                        buckets[prev].name, b.name
                    )));
                }
            }
        }
        Ok(PortBucketConfig { buckets, lookup })
    }

    /// Number of buckets including `Other`.
    pub fn len(&self) -> usize {
        self.buckets.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, proto: Proto, port: u16) -> usize {
        self.lookup.get(&(proto, port)).copied().unwrap_or(self.buckets.len())
    }

    pub fn name(&self, index: usize) -> &str {
        self.buckets.get(index).map_or(OTHER, |b| b.name.as_str())
    }

    /// Bucket names in column order, `Other` last.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.buckets.iter().map(|b| b.name.as_str()).chain(std::iter::once(OTHER))
    }

    pub fn buckets(&self) -> &[PortBucket] {
        &self.buckets
    }

    /// Bucket index of a record.
    pub fn index_of_record(&self, rec: &ConnRecord) -> usize {
        let (proto, port) = service_key(rec);
        self.index_of(proto, port)
    }
}

impl Default for PortBucketConfig {
    /// Seventeen application ports (TCP and UDP share a bucket), SNMP 161,
    /// ICMP types 3 and 8, then `Other`.
    fn default() -> Self {
        let mut buckets: Vec<PortBucket> = [
            ("ftp-21", 21),
            ("ssh-22", 22),
            ("telnet-23", 23),
            ("smtp-25", 25),
            ("dns-53", 53),
            ("http-80", 80),
            ("pop3-110", 110),
            ("ntp-123", 123),
            ("msrpc-135", 135),
            ("netbios-dgm-138", 138),
            ("netbios-ssn-139", 139),
            ("imap-143", 143),
            ("snmp-161", 161),
            ("https-443", 443),
            ("smb-445", 445),
            ("imaps-993", 993),
            ("pop3s-995", 995),
            ("rdp-3389", 3389),
        ]
        .into_iter()
        .map(|(name, port)| PortBucket::both(name, port))
        .collect();
        buckets.push(PortBucket::new("icmp-3", vec![(Proto::Icmp, 3)]));
        buckets.push(PortBucket::new("icmp-8", vec![(Proto::Icmp, 8)]));
        PortBucketConfig::new(buckets).expect("default buckets are disjoint")
    }
}

impl TryFrom<Vec<PortBucket>> for PortBucketConfig {
    type Error = Error;

    fn try_from(v: Vec<PortBucket>) -> Result<Self> {
        PortBucketConfig::new(v)
    }
}

impl From<PortBucketConfig> for Vec<PortBucket> {
    fn from(c: PortBucketConfig) -> Self {
        c.buckets
    }
}

/// The (proto, port) pair that selects a record's bucket: the destination
/// port for TCP/UDP, the ICMP type (recorded in `orig_p`) for ICMP.
pub fn service_key(rec: &ConnRecord) -> (Proto, u16) {
    match rec.proto {
        Proto::Icmp => (Proto::Icmp, rec.orig_p),
        p => (p, rec.dest_p),
    }
}

pub fn bucket_port(proto: Proto, dest_port: u16, cfg: &PortBucketConfig) -> &str {
    cfg.name(cfg.index_of(proto, dest_port))
}

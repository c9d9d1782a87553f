//! Per-host, per-window traffic and inter-arrival statistics.

use std::net::IpAddr;

use ipnet::IpNet;

use super::buckets::PortBucketConfig;
use super::matrix::Column;
use super::Direction;
use crate::error::{Error, Result};
use crate::ingest::{ConnRecord, Proto};

/// Per-bucket traffic statistics, in column order.
pub const TRAFFIC_STATS: [(&str, &str); 17] = [
    ("peer_ips.distinct", "distinct peer IPs"),
    ("peer_subnets.distinct", "distinct peer /24 subnets"),
    ("duration.sum", "total connection duration"),
    ("duration.min", "min connection duration"),
    ("duration.max", "max connection duration"),
    ("orig_bytes.sum", "total orig_bytes"),
    ("orig_bytes.min", "min orig_bytes in a connection"),
    ("orig_bytes.max", "max orig_bytes in a connection"),
    ("resp_bytes.sum", "total resp_bytes"),
    ("resp_bytes.min", "min resp_bytes in a connection"),
    ("resp_bytes.max", "max resp_bytes in a connection"),
    ("orig_pkts.sum", "total orig_pkts"),
    ("orig_pkts.min", "min orig_pkts in a connection"),
    ("orig_pkts.max", "max orig_pkts in a connection"),
    ("resp_pkts.sum", "total resp_pkts"),
    ("resp_pkts.min", "min resp_pkts in a connection"),
    ("resp_pkts.max", "max resp_pkts in a connection"),
];

/// Per-direction statistics over all buckets.
pub const GLOBAL_STATS: [(&str, &str); 6] = [
    ("conns.tcp", "TCP connection count"),
    ("conns.udp", "UDP connection count"),
    ("conns.icmp", "ICMP connection count"),
    ("src_ports.distinct", "distinct source ports"),
    ("ext_peer_ips.distinct", "distinct peer IPs outside the internal prefix"),
    ("dst_ports.distinct", "distinct destination ports"),
];

/// Per-bucket inter-arrival statistics.
pub const TEMPORAL_STATS: [(&str, &str); 5] = [
    ("iat.mean", "mean inter-arrival time"),
    ("iat.std", "population std. dev. of inter-arrival time"),
    ("iat.median", "median inter-arrival time"),
    ("iat.min", "min inter-arrival time"),
    ("iat.max", "max inter-arrival time"),
];

pub(crate) fn traffic_columns(buckets: &PortBucketConfig, dir: Direction) -> Vec<Column> {
    let mut cols = Vec::with_capacity(buckets.len() * TRAFFIC_STATS.len());
    for b in buckets.names() {
        for (stat, desc) in TRAFFIC_STATS {
            cols.push(Column::new(
                format!("{}.{b}.{stat}", dir.prefix()),
                format!("{} {desc}, bucket {b}", dir.describe()),
            ));
        }
    }
    cols
}

pub(crate) fn global_columns(dir: Direction) -> Vec<Column> {
    GLOBAL_STATS
        .iter()
        .map(|(stat, desc)| {
            Column::new(format!("{}.global.{stat}", dir.prefix()), format!("{} {desc}", dir.describe()))
        })
        .collect()
}

pub(crate) fn temporal_columns(buckets: &PortBucketConfig, dir: Direction) -> Vec<Column> {
    let mut cols = Vec::with_capacity(buckets.len() * TEMPORAL_STATS.len());
    for b in buckets.names() {
        for (stat, desc) in TEMPORAL_STATS {
            cols.push(Column::new(
                format!("{}.{b}.{stat}", dir.prefix()),
                format!("{} {desc}, bucket {b}", dir.describe()),
            ));
        }
    }
    cols
}

/// The remote endpoint of a record, seen from the entity.
pub(crate) fn peer(rec: &ConnRecord, dir: Direction) -> IpAddr {
    match dir {
        Direction::Outgoing => rec.dest_h,
        Direction::Incoming => rec.orig_h,
    }
}

/// /24 for IPv4, /64 for IPv6.
pub(crate) fn subnet_of(ip: IpAddr) -> IpNet {
    let prefix = if ip.is_ipv4() { 24 } else { 64 };
    IpNet::new(ip, prefix).expect("valid prefix").trunc()
}

#[derive(Clone, Copy)]
struct MinMaxSum<T> {
    sum: T,
    min: T,
    max: T,
}

impl MinMaxSum<u64> {
    fn new() -> Self {
        MinMaxSum { sum: 0, min: u64::MAX, max: 0 }
    }

    fn add(&mut self, v: u64) {
        self.sum = self.sum.saturating_add(v);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn write(&self, n: usize, out: &mut [f64]) {
        if n == 0 {
            return;
        }
        out[0] = self.sum as f64;
        out[1] = self.min as f64;
        out[2] = self.max as f64;
    }
}

impl MinMaxSum<f64> {
    fn new() -> Self {
        MinMaxSum { sum: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    fn add(&mut self, v: f64) {
        self.sum += v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn write(&self, n: usize, out: &mut [f64]) {
        if n == 0 {
            return;
        }
        out[0] = self.sum;
        out[1] = self.min;
        out[2] = self.max;
    }
}

struct BucketAcc {
    n: usize,
    peers: Vec<IpAddr>,
    subnets: Vec<IpNet>,
    duration: MinMaxSum<f64>,
    counters: [MinMaxSum<u64>; 4],
}

impl BucketAcc {
    fn new() -> Self {
        BucketAcc {
            n: 0,
            peers: Vec::new(),
            subnets: Vec::new(),
            duration: MinMaxSum::<f64>::new(),
            counters: [MinMaxSum::<u64>::new(); 4],
        }
    }
}

fn distinct_count<T: Ord>(v: &mut Vec<T>) -> f64 {
    v.sort_unstable();
    v.dedup();
    v.len() as f64
}

/// Writes the per-bucket traffic block (`buckets.len() * 17` values) and
/// then the global block (6 values) for one direction into `out`.
///
/// Records are folded in the order given.
pub(crate) fn fill_traffic<'a>(
    records: impl Iterator<Item = &'a ConnRecord>,
    dir: Direction,
    buckets: &PortBucketConfig,
    internal: &IpNet,
    out: &mut [f64],
) {
    let width = TRAFFIC_STATS.len();
    debug_assert_eq!(out.len(), buckets.len() * width + GLOBAL_STATS.len());
    out.fill(0.0);
    let mut accs: Vec<BucketAcc> = (0..buckets.len()).map(|_| BucketAcc::new()).collect();
    let mut proto_counts = [0u64; 3];
    let mut src_ports = Vec::new();
    let mut ext_peers = Vec::new();
    let mut dst_ports = Vec::new();

    for rec in records {
        let acc = &mut accs[buckets.index_of_record(rec)];
        let p = peer(rec, dir);
        acc.n += 1;
        acc.peers.push(p);
        acc.subnets.push(subnet_of(p));
        acc.duration.add(rec.duration);
        acc.counters[0].add(rec.orig_bytes);
        acc.counters[1].add(rec.resp_bytes);
        acc.counters[2].add(rec.orig_pkts);
        acc.counters[3].add(rec.resp_pkts);

        proto_counts[rec.proto.index()] += 1;
        src_ports.push(rec.orig_p);
        dst_ports.push(rec.dest_p);
        if !internal.contains(&p) {
            ext_peers.push(p);
        }
    }

    for (b, acc) in accs.iter_mut().enumerate() {
        if acc.n == 0 {
            continue;
        }
        let o = &mut out[b * width..(b + 1) * width];
        o[0] = distinct_count(&mut acc.peers);
        o[1] = distinct_count(&mut acc.subnets);
        acc.duration.write(acc.n, &mut o[2..5]);
        for (k, c) in acc.counters.iter().enumerate() {
            c.write(acc.n, &mut o[5 + 3 * k..8 + 3 * k]);
        }
    }

    let g = &mut out[buckets.len() * width..];
    for p in Proto::ALL {
        g[p.index()] = proto_counts[p.index()] as f64;
    }
    g[3] = distinct_count(&mut src_ports);
    g[4] = distinct_count(&mut ext_peers);
    g[5] = distinct_count(&mut dst_ports);
}

/// mean, population std, median, min, max of consecutive gaps; zeros when
/// fewer than two timestamps. `ts` is sorted in place.
pub(crate) fn gap_stats(ts: &mut [f64]) -> [f64; 5] {
    if ts.len() < 2 {
        return [0.0; 5];
    }
    ts.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len();
    let median = if m % 2 == 1 { gaps[m / 2] } else { (gaps[m / 2 - 1] + gaps[m / 2]) / 2.0 };
    [mean, var.sqrt(), median, gaps[0], gaps[m - 1]]
}

/// Writes the per-bucket inter-arrival block for one direction.
pub(crate) fn fill_temporal<'a>(
    records: impl Iterator<Item = &'a ConnRecord>,
    buckets: &PortBucketConfig,
    out: &mut [f64],
) {
    let width = TEMPORAL_STATS.len();
    debug_assert_eq!(out.len(), buckets.len() * width);
    let mut ts: Vec<Vec<f64>> = vec![Vec::new(); buckets.len()];
    for rec in records {
        ts[buckets.index_of_record(rec)].push(rec.ts);
    }
    for (b, t) in ts.iter_mut().enumerate() {
        out[b * width..(b + 1) * width].copy_from_slice(&gap_stats(t));
    }
}

fn check_direction(entity: IpAddr, records: &[&ConnRecord], dir: Direction) -> Result<()> {
    for r in records {
        let own = match dir {
            Direction::Outgoing => r.orig_h,
            Direction::Incoming => r.dest_h,
        };
        if own != entity {
            return Err(Error::Config(format!(
                "record {} -> {} does not belong to {entity} ({})",
                r.orig_h,
                r.dest_h,
                dir.describe()
            )));
        }
    }
    Ok(())
}

/// Traffic statistics of one entity-window for one direction, as named
/// values: per-bucket block in bucket order, then the global block.
pub fn aggregate_traffic(
    entity: IpAddr,
    records: &[&ConnRecord],
    dir: Direction,
    buckets: &PortBucketConfig,
    internal: &IpNet,
) -> Result<Vec<(String, f64)>> {
    check_direction(entity, records, dir)?;
    let cols: Vec<Column> = traffic_columns(buckets, dir).into_iter().chain(global_columns(dir)).collect();
    let mut out = vec![0.0; cols.len()];
    fill_traffic(records.iter().copied(), dir, buckets, internal, &mut out);
    Ok(cols.into_iter().map(|c| c.name).zip(out).collect())
}

/// Inter-arrival statistics of one entity-window for one direction.
pub fn aggregate_temporal(
    entity: IpAddr,
    records: &[&ConnRecord],
    dir: Direction,
    buckets: &PortBucketConfig,
) -> Result<Vec<(String, f64)>> {
    check_direction(entity, records, dir)?;
    let cols = temporal_columns(buckets, dir);
    let mut out = vec![0.0; cols.len()];
    fill_temporal(records.iter().copied(), buckets, &mut out);
    Ok(cols.into_iter().map(|c| c.name).zip(out).collect())
}

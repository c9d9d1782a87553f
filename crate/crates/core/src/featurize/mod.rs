//! Feature representations: connection-level rows and per-host time-window
//! aggregates keyed by destination-port bucket.
//!
//! Aggregated rows are built for every internal host and every window
//! `[t0 + kT, t0 + (k+1)T)` in which the host appears as originator
//! (outgoing) or responder (incoming). Column layout, for a bucket list
//! `b_1..b_n, Other`:
//!
//! ```text
//! out.<bucket>.<traffic stat>   17 per bucket
//! in.<bucket>.<traffic stat>    17 per bucket
//! out.global.<stat>, in.global.<stat>   6 each
//! out.<bucket>.iat.<stat>, in.<bucket>.iat.<stat>   5 per bucket (temporal only)
//! ```
//!
//! The traffic schema is therefore a prefix of the traffic+temporal schema.

mod aggregate;
mod buckets;
mod connection;
mod matrix;

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_temporal, aggregate_traffic, GLOBAL_STATS, TEMPORAL_STATS, TRAFFIC_STATS};
pub use buckets::{bucket_port, service_key, PortBucket, PortBucketConfig, OTHER};
pub use connection::{connection_schema, featurize_connection};
pub(crate) use matrix::fingerprint_names;
pub use matrix::{Column, FeatureMatrix, RowKey, Schema};

use crate::error::{Error, Result};
use crate::ingest::{ConnRecord, ScenarioSpec};
use crate::labeling::{label_window, Label, Labeler};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// The entity is the originator.
    Outgoing,
    /// The entity is the responder.
    Incoming,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::Outgoing => "out",
            Direction::Incoming => "in",
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Direction::Outgoing => "outgoing",
            Direction::Incoming => "incoming",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Representation {
    #[serde(rename = "connection")]
    Connection,
    #[serde(rename = "traffic")]
    Traffic,
    #[default]
    #[serde(rename = "traffic+temporal", alias = "traffic_temporal")]
    TrafficTemporal,
}

impl Representation {
    pub fn is_aggregated(self) -> bool {
        self != Representation::Connection
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Connection => "connection",
            Representation::Traffic => "traffic",
            Representation::TrafficTemporal => "traffic+temporal",
        })
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "connection" => Ok(Representation::Connection),
            "traffic" => Ok(Representation::Traffic),
            "traffic+temporal" | "traffic_temporal" | "temporal" => Ok(Representation::TrafficTemporal),
            other => Err(format!(
                "unknown representation `{other}` (expected connection|traffic|traffic+temporal)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowConfig {
    pub window_len: f64,
    pub t0: f64,
}

impl WindowConfig {
    pub fn new(window_len: f64, t0: f64) -> Result<Self> {
        if !(window_len.is_finite() && window_len > 0.0) {
            return Err(Error::Config(format!("window length must be > 0, got {window_len}")));
        }
        Ok(WindowConfig { window_len, t0 })
    }
}

/// Index of the half-open window containing `ts`.
pub fn assign_window(ts: f64, cfg: &WindowConfig) -> Result<u64> {
    if ts < cfg.t0 {
        return Err(Error::BeforeStart { ts, t0: cfg.t0 });
    }
    Ok(((ts - cfg.t0) / cfg.window_len).floor() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub representation: Representation,
    /// Aggregation window in seconds.
    pub window_len: f64,
    #[serde(default)]
    pub buckets: PortBucketConfig,
    /// Append was-missing indicators to connection-level rows.
    #[serde(default)]
    pub connection_missing_flags: bool,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            representation: Representation::default(),
            window_len: 30.0,
            buckets: PortBucketConfig::default(),
            connection_missing_flags: false,
        }
    }
}

impl FeaturizeConfig {
    pub fn new(representation: Representation, window_len: f64) -> Self {
        FeaturizeConfig { representation, window_len, ..Default::default() }
    }

    /// Column schema; depends only on the configuration.
    pub fn schema(&self) -> Schema {
        match self.representation {
            Representation::Connection => connection_schema(self.connection_missing_flags),
            rep => {
                let b = &self.buckets;
                let mut cols = aggregate::traffic_columns(b, Direction::Outgoing);
                cols.extend(aggregate::traffic_columns(b, Direction::Incoming));
                cols.extend(aggregate::global_columns(Direction::Outgoing));
                cols.extend(aggregate::global_columns(Direction::Incoming));
                if rep == Representation::TrafficTemporal {
                    cols.extend(aggregate::temporal_columns(b, Direction::Outgoing));
                    cols.extend(aggregate::temporal_columns(b, Direction::Incoming));
                }
                Schema::new(cols)
            }
        }
    }
}

/// Counts from one featurization pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeaturizeStats {
    /// Records outside `[t_start, t_end)`, dropped.
    pub out_of_bounds: usize,
    /// Records with no internal endpoint, dropped.
    pub external_only: usize,
}

/// Builds the feature matrix of one scenario.
///
/// Records outside the scenario interval are dropped (the interval is
/// half-open, so records exactly at `t_end` are excluded). Connection rows
/// follow record order; aggregated rows are ordered by (ip, window).
pub fn featurize_dataset(
    records: &[ConnRecord],
    spec: &ScenarioSpec,
    cfg: &FeaturizeConfig,
    labeler: &Labeler<'_>,
) -> Result<FeatureMatrix> {
    featurize_dataset_with_stats(records, spec, cfg, labeler).map(|(m, _)| m)
}

pub fn featurize_dataset_with_stats(
    records: &[ConnRecord],
    spec: &ScenarioSpec,
    cfg: &FeaturizeConfig,
    labeler: &Labeler<'_>,
) -> Result<(FeatureMatrix, FeaturizeStats)> {
    let window = WindowConfig::new(cfg.window_len, spec.t_start)?;
    let schema = cfg.schema();
    let mut stats = FeaturizeStats::default();

    let mut in_bounds: Vec<(usize, u64)> = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if !spec.in_bounds(r.ts) {
            stats.out_of_bounds += 1;
            continue;
        }
        in_bounds.push((i, assign_window(r.ts, &window)?));
    }

    if cfg.representation == Representation::Connection {
        let mut m = FeatureMatrix::with_capacity(schema, in_bounds.len());
        for (i, w) in in_bounds {
            let r = &records[i];
            let entity = if spec.is_internal(&r.orig_h) {
                r.orig_h
            } else if spec.is_internal(&r.dest_h) {
                r.dest_h
            } else {
                stats.external_only += 1;
                continue;
            };
            let key = RowKey { scenario: spec.scenario_id.clone(), entity, window: w };
            m.push_row(key, &featurize_connection(r, cfg.connection_missing_flags), labeler.label(r))?;
        }
        return Ok((m, stats));
    }

    // (ip, window) -> contributing record indices, each tagged with direction
    let mut groups: BTreeMap<(IpAddr, u64), Vec<(Direction, usize)>> = BTreeMap::new();
    for &(i, w) in &in_bounds {
        let r = &records[i];
        let orig_in = spec.is_internal(&r.orig_h);
        let dest_in = spec.is_internal(&r.dest_h);
        if orig_in {
            groups.entry((r.orig_h, w)).or_default().push((Direction::Outgoing, i));
        }
        if dest_in {
            groups.entry((r.dest_h, w)).or_default().push((Direction::Incoming, i));
        }
        if !orig_in && !dest_in {
            stats.external_only += 1;
        }
    }
    let groups: Vec<((IpAddr, u64), Vec<(Direction, usize)>)> = groups.into_iter().collect();

    let width = schema.len();
    let rows = par::map(&groups, |(_, members)| {
        let mut row = vec![0.0; width];
        aggregated_row(records, members, spec, cfg, &mut row);
        let label = label_window(members.iter().map(|&(_, i)| labeler.label(&records[i])))
            .expect("groups are non-empty");
        (row, label)
    });

    let mut keys = Vec::with_capacity(groups.len());
    let mut values = Vec::with_capacity(groups.len() * width);
    let mut labels: Vec<Label> = Vec::with_capacity(groups.len());
    for (((ip, w), _), (row, label)) in groups.iter().zip(rows) {
        keys.push(RowKey { scenario: spec.scenario_id.clone(), entity: *ip, window: *w });
        values.extend_from_slice(&row);
        labels.push(label);
    }
    let m = FeatureMatrix::from_parts(schema, keys, values, labels)?;
    Ok((m, stats))
}

fn aggregated_row(
    records: &[ConnRecord],
    members: &[(Direction, usize)],
    spec: &ScenarioSpec,
    cfg: &FeaturizeConfig,
    row: &mut [f64],
) {
    let b = &cfg.buckets;
    let traffic = b.len() * TRAFFIC_STATS.len();
    let global = GLOBAL_STATS.len();
    let temporal = b.len() * TEMPORAL_STATS.len();
    let of = |dir: Direction| members.iter().filter(move |(d, _)| *d == dir).map(|&(_, i)| &records[i]);

    let mut block = vec![0.0; traffic + global];
    for (k, dir) in [Direction::Outgoing, Direction::Incoming].into_iter().enumerate() {
        aggregate::fill_traffic(of(dir), dir, b, &spec.internal_cidr, &mut block);
        row[k * traffic..(k + 1) * traffic].copy_from_slice(&block[..traffic]);
        let g0 = 2 * traffic + k * global;
        row[g0..g0 + global].copy_from_slice(&block[traffic..]);
    }
    if cfg.representation == Representation::TrafficTemporal {
        let base = 2 * (traffic + global);
        for (k, dir) in [Direction::Outgoing, Direction::Incoming].into_iter().enumerate() {
            let start = base + k * temporal;
            aggregate::fill_temporal(of(dir), b, &mut row[start..start + temporal]);
        }
    }
}

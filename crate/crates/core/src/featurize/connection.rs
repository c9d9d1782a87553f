use super::matrix::{Column, Schema};
use crate::ingest::{ConnRecord, ConnState, MissingFields, Proto};

const NUMERIC: [(&str, &str); 8] = [
    ("ts", "timestamp"),
    ("orig_p", "originator port"),
    ("dest_p", "responder port"),
    ("duration", "connection duration"),
    ("orig_bytes", "bytes sent by originator"),
    ("resp_bytes", "bytes sent by responder"),
    ("orig_pkts", "packets sent by originator"),
    ("resp_pkts", "packets sent by responder"),
];

const MISSING: [(MissingFields, &str); 6] = [
    (MissingFields::DURATION, "duration"),
    (MissingFields::ORIG_BYTES, "orig_bytes"),
    (MissingFields::RESP_BYTES, "resp_bytes"),
    (MissingFields::ORIG_PKTS, "orig_pkts"),
    (MissingFields::RESP_PKTS, "resp_pkts"),
    (MissingFields::CONN_STATE, "conn_state"),
];

/// Connection-level columns: 8 numeric fields, proto one-hot (3), state
/// one-hot (13), and optionally six was-missing indicators.
pub fn connection_schema(missing_flags: bool) -> Schema {
    let mut cols: Vec<Column> = NUMERIC.iter().map(|(n, d)| Column::new(*n, *d)).collect();
    for p in Proto::ALL {
        cols.push(Column::new(format!("proto.{p}"), format!("proto is {p}")));
    }
    for st in ConnState::ALL {
        cols.push(Column::new(format!("state.{st}"), format!("conn_state is {st}")));
    }
    if missing_flags {
        for (_, name) in MISSING {
            cols.push(Column::new(format!("missing.{name}"), format!("{name} was unset")));
        }
    }
    Schema::new(cols)
}

/// Encodes one record. IP addresses are not features.
pub fn featurize_connection(rec: &ConnRecord, missing_flags: bool) -> Vec<f64> {
    let mut v = Vec::with_capacity(24 + if missing_flags { 6 } else { 0 });
    v.extend_from_slice(&[
        rec.ts,
        rec.orig_p as f64,
        rec.dest_p as f64,
        rec.duration,
        rec.orig_bytes as f64,
        rec.resp_bytes as f64,
        rec.orig_pkts as f64,
        rec.resp_pkts as f64,
    ]);
    for p in Proto::ALL {
        v.push(if rec.proto == p { 1.0 } else { 0.0 });
    }
    for st in ConnState::ALL {
        v.push(if rec.conn_state == Some(st) { 1.0 } else { 0.0 });
    }
    if missing_flags {
        for (flag, _) in MISSING {
            v.push(if rec.missing.contains(flag) { 1.0 } else { 0.0 });
        }
    }
    v
}

//! Zeek/Bro `conn.log` parsing and scenario ground-truth manifests.
//!
//! The parser is header driven: columns are bound by the names in the
//! `#fields` line through a [`FieldMap`], so permuted or extended logs parse
//! without changes. Unset values (`-`, `(empty)`) become zero with a
//! per-field flag in [`ConnRecord::missing`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::net::IpAddr;
use std::str::FromStr;

use bitflags::bitflags;
use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
    Icmp,
}

impl Proto {
    pub const ALL: [Proto; 3] = [Proto::Tcp, Proto::Udp, Proto::Icmp];

    pub fn as_str(self) -> &'static str {
        match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
            Proto::Icmp => "icmp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Proto {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tcp" => Ok(Proto::Tcp),
            "udp" => Ok(Proto::Udp),
            "icmp" => Ok(Proto::Icmp),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// Zeek connection states.
#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnState {
    S0,
    S1,
    SF,
    REJ,
    S2,
    S3,
    RSTO,
    RSTR,
    RSTOS0,
    RSTRH,
    SH,
    SHR,
    OTH,
}

impl ConnState {
    pub const ALL: [ConnState; 13] = [
        ConnState::S0,
        ConnState::S1,
        ConnState::SF,
        ConnState::REJ,
        ConnState::S2,
        ConnState::S3,
        ConnState::RSTO,
        ConnState::RSTR,
        ConnState::RSTOS0,
        ConnState::RSTRH,
        ConnState::SH,
        ConnState::SHR,
        ConnState::OTH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConnState::S0 => "S0",
            ConnState::S1 => "S1",
            ConnState::SF => "SF",
            ConnState::REJ => "REJ",
            ConnState::S2 => "S2",
            ConnState::S3 => "S3",
            ConnState::RSTO => "RSTO",
            ConnState::RSTR => "RSTR",
            ConnState::RSTOS0 => "RSTOS0",
            ConnState::RSTRH => "RSTRH",
            ConnState::SH => "SH",
            ConnState::SHR => "SHR",
            ConnState::OTH => "OTH",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ConnState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConnState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConnState::ALL
            .iter()
            .copied()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown conn_state `{s}`"))
    }
}

bitflags! {
    /// Optional fields that were unset in the log.
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
    pub struct MissingFields: u8 {
        const DURATION = 1 << 0;
        const ORIG_BYTES = 1 << 1;
        const RESP_BYTES = 1 << 2;
        const ORIG_PKTS = 1 << 3;
        const RESP_PKTS = 1 << 4;
        const CONN_STATE = 1 << 5;
    }
}

/// One `conn.log` row.
///
/// For ICMP the port fields carry what the monitor recorded: Zeek puts the
/// ICMP type in `orig_p` and the code in `dest_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnRecord {
    pub ts: f64,
    pub orig_h: IpAddr,
    pub orig_p: u16,
    pub dest_h: IpAddr,
    pub dest_p: u16,
    pub proto: Proto,
    pub duration: f64,
    pub orig_bytes: u64,
    pub resp_bytes: u64,
    pub orig_pkts: u64,
    pub resp_pkts: u64,
    pub conn_state: Option<ConnState>,
    pub missing: MissingFields,
}

/// Record fields a log column can bind to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Ts,
    OrigH,
    OrigP,
    DestH,
    DestP,
    Proto,
    Duration,
    OrigBytes,
    RespBytes,
    OrigPkts,
    RespPkts,
    ConnState,
    /// A known Zeek column that carries nothing we use (uid, history, ...).
    Ignored,
}

impl Field {
    const MANDATORY: [(Field, &'static str); 6] = [
        (Field::Ts, "ts"),
        (Field::OrigH, "id.orig_h"),
        (Field::OrigP, "id.orig_p"),
        (Field::DestH, "id.resp_h"),
        (Field::DestP, "id.resp_p"),
        (Field::Proto, "proto"),
    ];
}

/// Translates `#fields` column names to record fields.
#[derive(Clone, Debug)]
pub struct FieldMap {
    names: HashMap<String, Field>,
}

/// Columns written by [`write_conn_log`], in Zeek's order.
pub const DEFAULT_COLUMNS: [&str; 13] = [
    "ts",
    "uid",
    "id.orig_h",
    "id.orig_p",
    "id.resp_h",
    "id.resp_p",
    "proto",
    "duration",
    "orig_bytes",
    "resp_bytes",
    "orig_pkts",
    "resp_pkts",
    "conn_state",
];

impl Default for FieldMap {
    fn default() -> Self {
        Self::zeek()
    }
}

impl FieldMap {
    /// Zeek column names, plus `id.dest_h`/`id.dest_p` as aliases.
    pub fn zeek() -> Self {
        let mut names = HashMap::new();
        for (name, field) in [
            ("ts", Field::Ts),
            ("id.orig_h", Field::OrigH),
            ("id.orig_p", Field::OrigP),
            ("id.resp_h", Field::DestH),
            ("id.resp_p", Field::DestP),
            ("id.dest_h", Field::DestH),
            ("id.dest_p", Field::DestP),
            ("proto", Field::Proto),
            ("duration", Field::Duration),
            ("orig_bytes", Field::OrigBytes),
            ("resp_bytes", Field::RespBytes),
            ("orig_pkts", Field::OrigPkts),
            ("resp_pkts", Field::RespPkts),
            ("conn_state", Field::ConnState),
        ] {
            names.insert(name.to_string(), field);
        }
        for name in [
            "uid",
            "service",
            "local_orig",
            "local_resp",
            "missed_bytes",
            "history",
            "orig_ip_bytes",
            "resp_ip_bytes",
            "tunnel_parents",
            "orig_l2_addr",
            "resp_l2_addr",
            "vlan",
            "inner_vlan",
            "community_id",
            "ip_proto",
        ] {
            names.insert(name.to_string(), Field::Ignored);
        }
        FieldMap { names }
    }

    /// Adds or replaces a column binding.
    pub fn with_alias(mut self, column: impl Into<String>, field: Field) -> Self {
        self.names.insert(column.into(), field);
        self
    }

    pub fn field(&self, column: &str) -> Option<Field> {
        self.names.get(column).copied()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    /// Skip malformed lines (recording them) instead of failing.
    pub lenient: bool,
}

/// Output of [`parse_conn_log`].
#[derive(Clone, Debug, Default)]
pub struct ParsedLog {
    pub records: Vec<ConnRecord>,
    /// `#fields` columns the field map did not recognise.
    pub unknown_columns: Vec<String>,
    /// Number of unknown-column warnings raised.
    pub warnings: usize,
    /// Lines rejected in lenient mode: (line number, error message).
    pub skipped: Vec<(usize, String)>,
}

#[derive(Clone, Debug)]
struct Header {
    separator: String,
    unset: String,
    empty: String,
    bindings: Vec<Option<Field>>,
}

impl Header {
    fn new() -> Self {
        Header {
            separator: "\t".to_string(),
            unset: "-".to_string(),
            empty: "(empty)".to_string(),
            bindings: Vec::new(),
        }
    }
}

/// Parses a `conn.log` stream in strict mode.
pub fn parse_conn_log<R: BufRead>(reader: R, map: &FieldMap) -> Result<ParsedLog> {
    parse_conn_log_with(reader, map, ParseOptions::default())
}

pub fn parse_conn_log_str(text: &str, map: &FieldMap) -> Result<ParsedLog> {
    parse_conn_log(text.as_bytes(), map)
}

/// Parses a `conn.log` stream.
///
/// Header lines are handled in order; the data lines between headers are
/// parsed as one batch (in parallel when enabled) and emitted in file order.
pub fn parse_conn_log_with<R: BufRead>(reader: R, map: &FieldMap, opts: ParseOptions) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    let mut header = Header::new();
    let mut have_fields = false;
    let mut batch: Vec<(usize, String)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(directive) = line.strip_prefix('#') {
            flush_batch(&mut batch, &header, opts, &mut out)?;
            if apply_directive(directive, &mut header, map, &mut out)? {
                have_fields = true;
            }
            continue;
        }
        if !have_fields {
            if opts.lenient {
                out.skipped.push((line_no, Error::MissingHeader(line_no).to_string()));
                continue;
            }
            return Err(Error::MissingHeader(line_no));
        }
        batch.push((line_no, line.to_string()));
    }
    flush_batch(&mut batch, &header, opts, &mut out)?;
    Ok(out)
}

/// Returns true when the directive was a `#fields` line.
fn apply_directive(
    directive: &str,
    header: &mut Header,
    map: &FieldMap,
    out: &mut ParsedLog,
) -> Result<bool> {
    let (key, rest) = match directive.find(['\t', ' ']) {
        Some(pos) => (&directive[..pos], &directive[pos + 1..]),
        None => (directive, ""),
    };
    match key {
        "separator" => header.separator = unescape(rest.trim()),
        "unset_field" => header.unset = rest.split(&header.separator).next().unwrap_or("-").to_string(),
        "empty_field" => header.empty = rest.split(&header.separator).next().unwrap_or("(empty)").to_string(),
        "fields" => {
            let mut bindings = Vec::new();
            for name in rest.split(&header.separator) {
                let field = map.field(name);
                if field.is_none() {
                    log::warn!("ignoring unknown conn.log column `{name}`");
                    out.warnings += 1;
                    if !out.unknown_columns.iter().any(|c| c == name) {
                        out.unknown_columns.push(name.to_string());
                    }
                }
                bindings.push(field);
            }
            for (field, name) in Field::MANDATORY {
                if !bindings.contains(&Some(field)) {
                    return Err(Error::MissingColumn(name));
                }
            }
            header.bindings = bindings;
            return Ok(true);
        }
        _ => {}
    }
    Ok(false)
}

/// Decodes `\xHH` escapes as used by Zeek's `#separator` line.
fn unescape(s: &str) -> String {
    let mut out = String::new();
    let mut rest = s;
    while let Some(pos) = rest.find("\\x") {
        out.push_str(&rest[..pos]);
        let hex = rest.get(pos + 2..pos + 4);
        match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
            Some(b) => {
                out.push(b as char);
                rest = &rest[pos + 4..];
            }
            None => {
                out.push_str("\\x");
                rest = &rest[pos + 2..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn flush_batch(
    batch: &mut Vec<(usize, String)>,
    header: &Header,
    opts: ParseOptions,
    out: &mut ParsedLog,
) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    let parsed = par::map_if(batch.len() > 4096, batch, |(line_no, text)| {
        parse_line(text, header).map_err(|reason| Error::MalformedLine {
            line: *line_no,
            reason,
            text: text.clone(),
        })
    });
    for (result, (line_no, _)) in parsed.into_iter().zip(batch.iter()) {
        match result {
            Ok(rec) => out.records.push(rec),
            Err(e) if opts.lenient => out.skipped.push((*line_no, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    batch.clear();
    Ok(())
}

fn parse_line(line: &str, header: &Header) -> std::result::Result<ConnRecord, String> {
    let values: Vec<&str> = line.split(header.separator.as_str()).collect();
    if values.len() != header.bindings.len() {
        return Err(format!("expected {} columns, found {}", header.bindings.len(), values.len()));
    }

    let mut ts = None;
    let mut orig_h = None;
    let mut orig_p = None;
    let mut dest_h = None;
    let mut dest_p = None;
    let mut proto = None;
    let mut rec_missing = MissingFields::all();
    let mut duration = 0.0;
    let mut counters = [0u64; 4];
    let mut conn_state = None;

    for (binding, raw) in header.bindings.iter().zip(values) {
        let Some(field) = binding else { continue };
        let unset = raw == header.unset || raw == header.empty || raw.is_empty();
        match field {
            Field::Ignored => {}
            Field::Ts => ts = Some(parse_ts(raw)?),
            Field::OrigH => orig_h = Some(parse_ip(raw)?),
            Field::DestH => dest_h = Some(parse_ip(raw)?),
            Field::OrigP => orig_p = Some(parse_port(raw)?),
            Field::DestP => dest_p = Some(parse_port(raw)?),
            Field::Proto => proto = Some(raw.parse::<Proto>()?),
            Field::Duration => {
                if !unset {
                    duration = parse_duration(raw)?;
                    rec_missing.remove(MissingFields::DURATION);
                }
            }
            Field::OrigBytes | Field::RespBytes | Field::OrigPkts | Field::RespPkts => {
                let (slot, flag) = match field {
                    Field::OrigBytes => (0, MissingFields::ORIG_BYTES),
                    Field::RespBytes => (1, MissingFields::RESP_BYTES),
                    Field::OrigPkts => (2, MissingFields::ORIG_PKTS),
                    _ => (3, MissingFields::RESP_PKTS),
                };
                if !unset {
                    counters[slot] = raw.parse::<u64>().map_err(|_| format!("bad counter `{raw}`"))?;
                    rec_missing.remove(flag);
                }
            }
            Field::ConnState => {
                if !unset {
                    conn_state = Some(raw.parse::<ConnState>()?);
                    rec_missing.remove(MissingFields::CONN_STATE);
                }
            }
        }
    }

    Ok(ConnRecord {
        ts: ts.ok_or("unset ts")?,
        orig_h: orig_h.ok_or("unset id.orig_h")?,
        orig_p: orig_p.ok_or("unset id.orig_p")?,
        dest_h: dest_h.ok_or("unset id.resp_h")?,
        dest_p: dest_p.ok_or("unset id.resp_p")?,
        proto: proto.ok_or("unset proto")?,
        duration,
        orig_bytes: counters[0],
        resp_bytes: counters[1],
        orig_pkts: counters[2],
        resp_pkts: counters[3],
        conn_state,
        missing: rec_missing,
    })
}

fn parse_ts(raw: &str) -> std::result::Result<f64, String> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("bad timestamp `{raw}`")),
    }
}

fn parse_duration(raw: &str) -> std::result::Result<f64, String> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("bad duration `{raw}`")),
    }
}

fn parse_ip(raw: &str) -> std::result::Result<IpAddr, String> {
    raw.parse().map_err(|_| format!("bad IP address `{raw}`"))
}

fn parse_port(raw: &str) -> std::result::Result<u16, String> {
    raw.parse().map_err(|_| format!("bad port `{raw}`"))
}

/// Formats one record as a TSV line for the given columns.
///
/// Columns that are not bound (or are ignored fields) are written as `-`.
pub fn format_record(rec: &ConnRecord, columns: &[&str], map: &FieldMap) -> String {
    let mut cells = Vec::with_capacity(columns.len());
    for col in columns {
        let m = rec.missing;
        let opt_count = |flag: MissingFields, v: u64| {
            if m.contains(flag) {
                "-".to_string()
            } else {
                v.to_string()
            }
        };
        let cell = match map.field(col) {
            Some(Field::Ts) => format_float(rec.ts),
            Some(Field::OrigH) => rec.orig_h.to_string(),
            Some(Field::OrigP) => rec.orig_p.to_string(),
            Some(Field::DestH) => rec.dest_h.to_string(),
            Some(Field::DestP) => rec.dest_p.to_string(),
            Some(Field::Proto) => rec.proto.to_string(),
            Some(Field::Duration) => {
                if m.contains(MissingFields::DURATION) {
                    "-".to_string()
                } else {
                    format_float(rec.duration)
                }
            }
            Some(Field::OrigBytes) => opt_count(MissingFields::ORIG_BYTES, rec.orig_bytes),
            Some(Field::RespBytes) => opt_count(MissingFields::RESP_BYTES, rec.resp_bytes),
            Some(Field::OrigPkts) => opt_count(MissingFields::ORIG_PKTS, rec.orig_pkts),
            Some(Field::RespPkts) => opt_count(MissingFields::RESP_PKTS, rec.resp_pkts),
            Some(Field::ConnState) => match rec.conn_state {
                Some(st) => st.to_string(),
                None => "-".to_string(),
            },
            Some(Field::Ignored) | None => "-".to_string(),
        };
        cells.push(cell);
    }
    cells.join("\t")
}

// Shortest representation that parses back to the same f64.
fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Writes records as a Zeek TSV log with [`DEFAULT_COLUMNS`].
///
/// `comments` are emitted as extra `#` lines after the standard header.
pub fn write_conn_log<W: std::io::Write>(
    mut w: W,
    records: &[ConnRecord],
    comments: &[String],
) -> std::io::Result<()> {
    let map = FieldMap::zeek();
    writeln!(w, "#separator \\x09")?;
    writeln!(w, "#set_separator\t,")?;
    writeln!(w, "#empty_field\t(empty)")?;
    writeln!(w, "#unset_field\t-")?;
    writeln!(w, "#path\tconn")?;
    for c in comments {
        writeln!(w, "#{c}")?;
    }
    writeln!(w, "#fields\t{}", DEFAULT_COLUMNS.join("\t"))?;
    for rec in records {
        writeln!(w, "{}", format_record(rec, &DEFAULT_COLUMNS, &map))?;
    }
    Ok(())
}

/// Ground truth for one capture scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub attack_name: String,
    pub botnet_ips: BTreeSet<IpAddr>,
    pub victim_ips: BTreeSet<IpAddr>,
    pub internal_cidr: IpNet,
    pub t_start: f64,
    pub t_end: f64,
}

const MANIFEST_KEYS: [&str; 7] =
    ["scenario_id", "attack_name", "botnet_ips", "victim_ips", "internal_cidr", "t_start", "t_end"];

impl ScenarioSpec {
    /// Parses a manifest: `key = value` lines, `#` comments, IP lists
    /// comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !MANIFEST_KEYS.contains(&key) {
                return Err(Error::Manifest(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if kv.insert(key, value.trim()).is_some() {
                return Err(Error::Manifest(format!("duplicate key `{key}`")));
            }
        }

        let required = |key: &str| {
            kv.get(key).copied().ok_or_else(|| Error::Manifest(format!("missing required key `{key}`")))
        };
        let scenario_id = required("scenario_id")?.to_string();
        if scenario_id.is_empty() {
            return Err(Error::Manifest("scenario_id is empty".into()));
        }
        let botnet_ips = parse_ip_list(required("botnet_ips")?)?;
        if botnet_ips.is_empty() {
            return Err(Error::Manifest("botnet_ips is empty".into()));
        }
        let victim_ips = match kv.get("victim_ips") {
            Some(v) => parse_ip_list(v)?,
            None => BTreeSet::new(),
        };
        let cidr = required("internal_cidr")?;
        let internal_cidr: IpNet =
            cidr.parse().map_err(|_| Error::Manifest(format!("invalid CIDR `{cidr}`")))?;
        let t_start = parse_time("t_start", required("t_start")?)?;
        let t_end = parse_time("t_end", required("t_end")?)?;
        let spec = ScenarioSpec {
            scenario_id,
            attack_name: kv.get("attack_name").copied().unwrap_or("").to_string(),
            botnet_ips,
            victim_ips,
            internal_cidr: internal_cidr.trunc(),
            t_start,
            t_end,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start < self.t_end) {
            return Err(Error::Manifest(format!(
                "invalid time bounds: t_start={} t_end={}",
                self.t_start, self.t_end
            )));
        }
        if self.botnet_ips.is_empty() {
            return Err(Error::Manifest("botnet_ips is empty".into()));
        }
        Ok(())
    }

    /// Renders the manifest text that [`ScenarioSpec::parse`] reads back.
    pub fn to_manifest(&self) -> String {
        let join = |set: &BTreeSet<IpAddr>| set.iter().map(|ip| ip.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        s.push_str(&format!("scenario_id = {}\n", self.scenario_id));
        s.push_str(&format!("attack_name = {}\n", self.attack_name));
        s.push_str(&format!("botnet_ips = {}\n", join(&self.botnet_ips)));
        if !self.victim_ips.is_empty() {
            s.push_str(&format!("victim_ips = {}\n", join(&self.victim_ips)));
        }
        s.push_str(&format!("internal_cidr = {}\n", self.internal_cidr));
        s.push_str(&format!("t_start = {}\n", self.t_start));
        s.push_str(&format!("t_end = {}\n", self.t_end));
        s
    }

    pub fn is_internal(&self, ip: &IpAddr) -> bool {
        self.internal_cidr.contains(ip)
    }

    pub fn is_botnet(&self, ip: &IpAddr) -> bool {
        self.botnet_ips.contains(ip)
    }

    pub fn is_victim(&self, ip: &IpAddr) -> bool {
        self.victim_ips.contains(ip)
    }

    /// Half-open scenario interval test.
    pub fn in_bounds(&self, ts: f64) -> bool {
        ts >= self.t_start && ts < self.t_end
    }
}

impl FromStr for ScenarioSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioSpec::parse(s)
    }
}

fn parse_ip_list(value: &str) -> Result<BTreeSet<IpAddr>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<IpAddr>().map_err(|_| Error::Manifest(format!("invalid IP address `{s}`"))))
        .collect()
}

fn parse_time(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Manifest(format!("`{key}` is not a number: `{value}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "#fields\tts\tuid\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tduration\torig_bytes\tresp_bytes\torig_pkts\tresp_pkts\tconn_state";
    const LINE: &str =
        "1313389279.1\tC1\t147.32.84.165\t1025\t77.75.73.9\t25\ttcp\t2.5\t1024\t512\t10\t8\tSF";

    fn parse(text: &str) -> Result<ParsedLog> {
        parse_conn_log_str(text, &FieldMap::zeek())
    }

    #[test]
    fn parses_default_line() {
        let log = parse(&format!("{HEADER}\n{LINE}\n")).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.warnings, 0);
        let r = &log.records[0];
        assert_eq!(r.ts, 1313389279.1);
        assert_eq!(r.orig_h, "147.32.84.165".parse::<IpAddr>().unwrap());
        assert_eq!(r.orig_p, 1025);
        assert_eq!(r.dest_h, "77.75.73.9".parse::<IpAddr>().unwrap());
        assert_eq!(r.dest_p, 25);
        assert_eq!(r.proto, Proto::Tcp);
        assert_eq!(r.duration, 2.5);
        assert_eq!((r.orig_bytes, r.resp_bytes, r.orig_pkts, r.resp_pkts), (1024, 512, 10, 8));
        assert_eq!(r.conn_state, Some(ConnState::SF));
        assert!(r.missing.is_empty());
    }

    #[test]
    fn unset_duration_becomes_zero_with_flag() {
        let line = LINE.replace("\t2.5\t", "\t-\t");
        let log = parse(&format!("{HEADER}\n{line}\n")).unwrap();
        let r = &log.records[0];
        assert_eq!(r.duration, 0.0);
        assert_eq!(r.missing, MissingFields::DURATION);
    }

    #[test]
    fn empty_marker_is_unset() {
        let line = LINE.replace("\tSF", "\t(empty)").replace("\t1024\t", "\t-\t");
        let r = &parse(&format!("{HEADER}\n{line}\n")).unwrap().records[0];
        assert_eq!(r.conn_state, None);
        assert_eq!(r.orig_bytes, 0);
        assert_eq!(r.missing, MissingFields::CONN_STATE | MissingFields::ORIG_BYTES);
    }

    #[test]
    fn permuted_header_binds_by_name() {
        let names: Vec<&str> = HEADER.trim_start_matches("#fields\t").split('\t').collect();
        let values: Vec<&str> = LINE.split('\t').collect();
        let order = [12, 3, 0, 7, 2, 11, 5, 1, 6, 4, 10, 9, 8];
        let h: Vec<&str> = order.iter().map(|&i| names[i]).collect();
        let v: Vec<&str> = order.iter().map(|&i| values[i]).collect();
        let permuted = format!("#fields\t{}\n{}\n", h.join("\t"), v.join("\t"));
        let a = parse(&format!("{HEADER}\n{LINE}\n")).unwrap().records;
        let b = parse(&permuted).unwrap().records;
        assert_eq!(a, b);
    }

    #[test]
    fn dest_column_aliases() {
        let header = HEADER.replace("id.resp_h", "id.dest_h").replace("id.resp_p", "id.dest_p");
        let log = parse(&format!("{header}\n{LINE}\n")).unwrap();
        assert_eq!(log.records[0].dest_p, 25);
    }

    #[test]
    fn unknown_column_is_counted_and_ignored() {
        let header = format!("{HEADER}\tmystery");
        let log = parse(&format!("{header}\n{LINE}\tx\n")).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.warnings, 1);
        assert_eq!(log.unknown_columns, vec!["mystery".to_string()]);
    }

    #[test]
    fn missing_mandatory_column_is_fatal() {
        let header = HEADER.replace("\tproto", "");
        let err = parse(&format!("{header}\n")).unwrap_err();
        assert!(matches!(err, Error::MissingColumn("proto")));
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = format!("#separator \\x09\n{HEADER}\n{LINE}\n{}\n", LINE.replace("1025", "70000"));
        match parse(&text).unwrap_err() {
            Error::MalformedLine { line, text, .. } => {
                assert_eq!(line, 4);
                assert!(text.contains("70000"));
            }
            e => panic!("unexpected {e}"),
        }
        let short = format!("{HEADER}\n1.0\tC\n");
        assert!(matches!(parse(&short), Err(Error::MalformedLine { line: 2, .. })));
        let bad_ip = format!("{HEADER}\n{}\n", LINE.replace("147.32.84.165", "147.32.84"));
        assert!(matches!(parse(&bad_ip), Err(Error::MalformedLine { .. })));
    }

    #[test]
    fn lenient_mode_skips_and_counts() {
        let text = format!("{HEADER}\n{LINE}\ngarbage\n{LINE}\n");
        let log =
            parse_conn_log_with(text.as_bytes(), &FieldMap::zeek(), ParseOptions { lenient: true }).unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.skipped.len(), 1);
        assert_eq!(log.skipped[0].0, 3);
    }

    #[test]
    fn record_before_header_is_an_error() {
        assert!(matches!(parse(&format!("{LINE}\n")), Err(Error::MissingHeader(1))));
    }

    #[test]
    fn negative_timestamp_rejected() {
        let text = format!("{HEADER}\n{}\n", LINE.replace("1313389279.1", "-3"));
        assert!(parse(&text).is_err());
    }

    #[test]
    fn writer_output_reparses() {
        let log = parse(&format!("{HEADER}\n{LINE}\n{}\n", LINE.replace("\t2.5\t", "\t-\t"))).unwrap();
        let mut buf = Vec::new();
        write_conn_log(&mut buf, &log.records, &["note hello".into()]).unwrap();
        let again = parse_conn_log(buf.as_slice(), &FieldMap::zeek()).unwrap();
        assert_eq!(again.records, log.records);
    }

    const MANIFEST: &str = "# Neris\nscenario_id = 1\nattack_name = Spam, click fraud\nbotnet_ips = 147.32.84.165\ninternal_cidr = 147.32.0.0/16\nt_start = 0\nt_end = 3600\n";

    #[test]
    fn manifest_parses() {
        let spec = ScenarioSpec::parse(MANIFEST).unwrap();
        assert_eq!(spec.botnet_ips.len(), 1);
        assert!(spec.victim_ips.is_empty());
        assert_eq!(spec.attack_name, "Spam, click fraud");
        assert!(spec.is_internal(&"147.32.1.2".parse().unwrap()));
        assert!(!spec.is_internal(&"8.8.8.8".parse().unwrap()));
        assert_eq!(ScenarioSpec::parse(&spec.to_manifest()).unwrap(), spec);
    }

    #[test]
    fn manifest_errors() {
        let bad_time = MANIFEST.replace("t_start = 0", "t_start = 5000");
        let err = ScenarioSpec::parse(&bad_time).unwrap_err().to_string();
        assert!(err.contains("invalid time bounds"), "{err}");

        let missing = MANIFEST.replace("internal_cidr = 147.32.0.0/16\n", "");
        assert!(ScenarioSpec::parse(&missing).unwrap_err().to_string().contains("internal_cidr"));

        let bad_ip = MANIFEST.replace("147.32.84.165", "147.32.84.999");
        assert!(ScenarioSpec::parse(&bad_ip).is_err());

        let bad_cidr = MANIFEST.replace("/16", "/99");
        assert!(ScenarioSpec::parse(&bad_cidr).is_err());

        let with_victims = format!("{MANIFEST}victim_ips = 1.2.3.4, 5.6.7.8\n");
        assert_eq!(ScenarioSpec::parse(&with_victims).unwrap().victim_ips.len(), 2);
    }
}

//! Deterministic synthetic scenarios.
//!
//! Two attack shapes are generated on top of shared background traffic:
//!
//! * `spam`: bots send regular bursts of short connections to random
//!   destinations spread over many /24s. Every record, bot or background,
//!   draws its service and field values from the same per-service
//!   distributions, so single records carry no signal; per-window
//!   aggregates (connection counts, distinct peers and subnets) do.
//! * `ddos`: bots flood one external victim with identical udp/161 and
//!   icmp echo records during the middle 40% of the scenario, and send
//!   ordinary traffic throughout. Coarse labels therefore mark many
//!   ordinary-looking windows as malicious; fine labels do not.
//!
//! Background hosts connect to a few favourite servers per service with
//! Poisson arrivals. Their rate is solved from the requested row imbalance
//! at a 30 s window. Output is fully determined by the parameters.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_conn_log, ConnRecord, ConnState, MissingFields, Proto, ScenarioSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Spam,
    Ddos,
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::Spam => "spam",
            SynthKind::Ddos => "ddos",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub scenario_id: String,
    pub n_background_hosts: usize,
    pub duration_s: f64,
    pub bot_count: usize,
    /// Target benign rows per malicious row at T = 30 s (malicious meaning
    /// fine-labelled for `ddos`).
    pub imbalance: f64,
    pub seed: u64,
    #[serde(default = "default_t_start")]
    pub t_start: f64,
}

fn default_t_start() -> f64 {
    1_313_580_000.0
}

pub const PRESETS: [&str; 3] = ["spam", "ddos", "spam-imbalanced"];

impl SynthParams {
    /// Frozen parameter sets. `spam-imbalanced` is `spam` at 1:150.
    pub fn preset(name: &str, scenario_id: &str, seed: u64) -> Result<Self> {
        let base = |kind, hosts, duration, bots, imbalance| SynthParams {
            kind,
            scenario_id: scenario_id.to_string(),
            n_background_hosts: hosts,
            duration_s: duration,
            bot_count: bots,
            imbalance,
            seed,
            t_start: default_t_start(),
        };
        match name {
            "spam" => Ok(base(SynthKind::Spam, 500, 900.0, 2, 134.0)),
            "spam-imbalanced" => Ok(base(SynthKind::Spam, 500, 900.0, 2, 150.0)),
            "ddos" => Ok(base(SynthKind::Ddos, 400, 1200.0, 3, 100.0)),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if self.bot_count == 0 || self.bot_count > 250 {
            return Err(Error::Config("bot_count must be between 1 and 250".into()));
        }
        if self.n_background_hosts == 0 || self.n_background_hosts > 40_000 {
            return Err(Error::Config("n_background_hosts must be between 1 and 40000".into()));
        }
        if !(self.imbalance > 0.0 && self.imbalance.is_finite()) {
            return Err(Error::Config("imbalance must be positive".into()));
        }
        if self.scenario_id.is_empty() {
            return Err(Error::Config("scenario_id is empty".into()));
        }
        self.background_rate().map(|_| ())
    }

    fn windows(&self) -> f64 {
        self.duration_s / REFERENCE_WINDOW
    }

    fn attack_interval(&self) -> (f64, f64) {
        (ATTACK_FROM * self.duration_s, ATTACK_TO * self.duration_s)
    }

    fn attack_windows(&self) -> f64 {
        let (a, b) = self.attack_interval();
        ((b / REFERENCE_WINDOW).ceil() - (a / REFERENCE_WINDOW).floor()).max(1.0)
    }

    /// Per-host Poisson rate that puts the benign row count at
    /// `imbalance` times the malicious one.
    fn background_rate(&self) -> Result<f64> {
        let h = self.n_background_hosts as f64;
        let bots = self.bot_count as f64;
        let w = self.windows();
        let p = match self.kind {
            SynthKind::Spam => self.imbalance * bots / h,
            SynthKind::Ddos => {
                let wa = self.attack_windows();
                let bot_benign = bots * (w - wa).max(0.0) * BOT_BENIGN_ACTIVE;
                (self.imbalance * bots * wa - bot_benign) / (h * w)
            }
        };
        if !(p > 0.0 && p <= MAX_ACTIVE) {
            return Err(Error::Config(format!(
                "infeasible imbalance target 1:{}: background hosts would need to be active in {:.0}% of windows \
                 (feasible range is above 0% and at most {:.0}%); change n_background_hosts or bot_count",
                self.imbalance,
                p * 100.0,
                MAX_ACTIVE * 100.0
            )));
        }
        Ok(-(1.0 - p).ln() / REFERENCE_WINDOW)
    }
}

const REFERENCE_WINDOW: f64 = 30.0;
const MAX_ACTIVE: f64 = 0.95;
/// Chance that a bot sends ordinary traffic in a given 30 s window.
const BOT_BENIGN_ACTIVE: f64 = 0.8;
const BURST_PERIOD: f64 = 20.0;
const BURST_LEN: f64 = 8.0;
const BURST_GAP: f64 = 0.6;
const BURST_GAP_JITTER: f64 = 0.1;
const ATTACK_FROM: f64 = 0.3;
const ATTACK_TO: f64 = 0.7;
const FLOOD_GAP: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Service {
    Smtp,
    Http,
    Https,
    Dns,
    Other,
}

const MIX: [(Service, f64); 5] = [
    (Service::Smtp, 0.30),
    (Service::Http, 0.25),
    (Service::Https, 0.25),
    (Service::Dns, 0.12),
    (Service::Other, 0.08),
];

const OTHER_PORTS: [u16; 5] = [8080, 8443, 5222, 6667, 1935];

struct FieldModel {
    duration: (f64, f64),
    orig_bytes: (f64, f64),
    resp_bytes: (f64, f64),
    states: &'static [(ConnState, f64)],
}

fn field_model(s: Service) -> FieldModel {
    use ConnState::*;
    match s {
        Service::Smtp => FieldModel {
            duration: (1.2, 0.7),
            orig_bytes: (1800.0, 0.9),
            resp_bytes: (350.0, 0.4),
            states: &[(SF, 0.88), (S0, 0.04), (REJ, 0.04), (RSTO, 0.04)],
        },
        Service::Http => FieldModel {
            duration: (0.6, 1.1),
            orig_bytes: (450.0, 0.5),
            resp_bytes: (12_000.0, 1.3),
            states: &[(SF, 0.90), (S0, 0.03), (RSTO, 0.04), (SH, 0.03)],
        },
        Service::Https => FieldModel {
            duration: (1.5, 1.2),
            orig_bytes: (900.0, 0.7),
            resp_bytes: (25_000.0, 1.4),
            states: &[(SF, 0.90), (S0, 0.03), (RSTO, 0.04), (RSTR, 0.03)],
        },
        Service::Dns => FieldModel {
            duration: (0.03, 0.6),
            orig_bytes: (45.0, 0.2),
            resp_bytes: (140.0, 0.4),
            states: &[(SF, 0.95), (S0, 0.05)],
        },
        Service::Other => FieldModel {
            duration: (5.0, 1.5),
            orig_bytes: (2000.0, 1.5),
            resp_bytes: (3000.0, 1.5),
            states: &[(SF, 0.80), (S0, 0.10), (REJ, 0.10)],
        },
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, table: &[(T, f64)]) -> T {
    let total: f64 = table.iter().map(|e| e.1).sum();
    let mut u = rng.random_range(0.0..total);
    for &(v, w) in table {
        if u < w {
            return v;
        }
        u -= w;
    }
    table[table.len() - 1].0
}

fn lognormal(rng: &mut ChaCha8Rng, (median, sigma): (f64, f64)) -> f64 {
    LogNormal::new(median.ln(), sigma).expect("valid lognormal").sample(rng)
}

fn round_us(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn public_ip(rng: &mut ChaCha8Rng) -> IpAddr {
    loop {
        let a: u8 = rng.random_range(1..=223);
        if a == 10 || a == 127 || a == 100 || a == 169 || a == 172 || a == 192 {
            continue;
        }
        return IpAddr::V4(Ipv4Addr::new(a, rng.random(), rng.random(), rng.random_range(1..=254)));
    }
}

fn service_proto_port(rng: &mut ChaCha8Rng, s: Service) -> (Proto, u16) {
    match s {
        Service::Smtp => (Proto::Tcp, 25),
        Service::Http => (Proto::Tcp, 80),
        Service::Https => (Proto::Tcp, 443),
        Service::Dns => (Proto::Udp, 53),
        Service::Other => (Proto::Tcp, OTHER_PORTS[rng.random_range(0..OTHER_PORTS.len())]),
    }
}

/// One ordinary connection to `dest` using the shared field model.
fn ordinary(rng: &mut ChaCha8Rng, ts: f64, src: IpAddr, dest: IpAddr, s: Service) -> ConnRecord {
    let (proto, dest_p) = service_proto_port(rng, s);
    let m = field_model(s);
    let state = pick(rng, m.states);
    let orig_p = rng.random_range(1024..=65535);
    let mut rec = ConnRecord {
        ts: round_us(ts),
        orig_h: src,
        orig_p,
        dest_h: dest,
        dest_p,
        proto,
        duration: 0.0,
        orig_bytes: 0,
        resp_bytes: 0,
        orig_pkts: 0,
        resp_pkts: 0,
        conn_state: Some(state),
        missing: MissingFields::empty(),
    };
    match state {
        ConnState::S0 => {
            rec.orig_pkts = rng.random_range(1..=3);
            rec.missing = MissingFields::DURATION | MissingFields::ORIG_BYTES | MissingFields::RESP_BYTES;
        }
        ConnState::REJ => {
            rec.duration = round_us(rng.random_range(0.0001..0.01));
            rec.orig_pkts = 1;
            rec.resp_pkts = 1;
        }
        _ => {
            rec.duration = round_us(lognormal(rng, m.duration));
            rec.orig_bytes = lognormal(rng, m.orig_bytes).round() as u64;
            rec.resp_bytes = lognormal(rng, m.resp_bytes).round() as u64;
            rec.orig_pkts = rec.orig_bytes / 500 + rng.random_range(1..=4);
            rec.resp_pkts = rec.resp_bytes / 1400 + rng.random_range(1..=4);
        }
    }
    rec
}

/// Favourite servers of one host, per service.
struct Favourites(Vec<Vec<IpAddr>>);

impl Favourites {
    fn new(rng: &mut ChaCha8Rng, pools: &[Vec<IpAddr>]) -> Self {
        Favourites(
            pools
                .iter()
                .map(|pool| {
                    let k = rng.random_range(1..=3);
                    (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
                })
                .collect(),
        )
    }

    fn get(&self, rng: &mut ChaCha8Rng, s: Service) -> IpAddr {
        let i = MIX.iter().position(|m| m.0 == s).expect("service in mix");
        let v = &self.0[i];
        v[rng.random_range(0..v.len())]
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, from: f64, to: f64) -> Vec<f64> {
    let exp = Exp::new(rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = from + exp.sample(rng);
    while t < to {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

fn host_ip(i: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, (1 + i / 200) as u8, (10 + i % 200) as u8))
}

fn bot_ip(k: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, 250, (10 + k) as u8))
}

/// Generated records (sorted by timestamp) and ground truth.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub params: SynthParams,
    pub spec: ScenarioSpec,
    pub records: Vec<ConnRecord>,
}

impl Scenario {
    /// Zeek TSV bytes, with the generator parameters in a comment line.
    pub fn conn_log(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let params = serde_json::to_string(&self.params).expect("params serialise");
        write_conn_log(&mut out, &self.records, &[format!("synth\t{params}")]).expect("write to memory");
        out
    }

    pub fn manifest(&self) -> String {
        let params = serde_json::to_string(&self.params).expect("params serialise");
        format!("# synth {params}\n{}", self.spec.to_manifest())
    }
}

pub fn generate(params: &SynthParams) -> Result<Scenario> {
    params.validate()?;
    let rate = params.background_rate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let t0 = params.t_start;
    let t1 = t0 + params.duration_s;

    let pools: Vec<Vec<IpAddr>> =
        MIX.iter().map(|_| (0..150).map(|_| public_ip(&mut rng)).collect()).collect();
    let victim = match params.kind {
        SynthKind::Ddos => Some(public_ip(&mut rng)),
        SynthKind::Spam => None,
    };
    let mut records = Vec::new();

    for i in 0..params.n_background_hosts {
        let src = host_ip(i);
        let fav = Favourites::new(&mut rng, &pools);
        for ts in poisson_times(&mut rng, rate, t0, t1) {
            let s = pick(&mut rng, &MIX);
            let dest = fav.get(&mut rng, s);
            records.push(ordinary(&mut rng, ts, src, dest, s));
        }
    }

    let bot_rate = -(1.0 - BOT_BENIGN_ACTIVE).ln() / REFERENCE_WINDOW;
    for k in 0..params.bot_count {
        let src = bot_ip(k);
        let fav = Favourites::new(&mut rng, &pools);
        for ts in poisson_times(&mut rng, bot_rate, t0, t1) {
            let s = pick(&mut rng, &MIX);
            let dest = fav.get(&mut rng, s);
            records.push(ordinary(&mut rng, ts, src, dest, s));
        }
        match params.kind {
            SynthKind::Spam => {
                let mut start = t0 + rng.random_range(0.0..BURST_PERIOD);
                while start < t1 {
                    let mut t = start;
                    while t < (start + BURST_LEN).min(t1) {
                        let s = pick(&mut rng, &MIX);
                        let dest = public_ip(&mut rng);
                        records.push(ordinary(&mut rng, t, src, dest, s));
                        t += BURST_GAP + rng.random_range(0.0..BURST_GAP_JITTER);
                    }
                    start += BURST_PERIOD;
                }
            }
            SynthKind::Ddos => {
                let victim = victim.expect("ddos has a victim");
                let (a, b) = params.attack_interval();
                let sport = 1024 + k as u16;
                let mut t = t0 + a + rng.random_range(0.0..FLOOD_GAP);
                let mut udp = true;
                while t < t0 + b {
                    let (proto, orig_p, dest_p, bytes, state) = if udp {
                        (Proto::Udp, sport, 161, 60, ConnState::S0)
                    } else {
                        (Proto::Icmp, 8, 0, 56, ConnState::OTH)
                    };
                    records.push(ConnRecord {
                        ts: round_us(t),
                        orig_h: src,
                        orig_p,
                        dest_h: victim,
                        dest_p,
                        proto,
                        duration: 0.0,
                        orig_bytes: bytes,
                        resp_bytes: 0,
                        orig_pkts: 1,
                        resp_pkts: 0,
                        conn_state: Some(state),
                        missing: MissingFields::empty(),
                    });
                    udp = !udp;
                    t += FLOOD_GAP;
                }
            }
        }
    }
    records.retain(|r| r.ts < t1);
    records.sort_by(|a, b| a.ts.total_cmp(&b.ts));

    let spec = ScenarioSpec {
        scenario_id: params.scenario_id.clone(),
        attack_name: params.kind.to_string(),
        botnet_ips: (0..params.bot_count).map(bot_ip).collect(),
        victim_ips: victim.into_iter().collect::<BTreeSet<_>>(),
        internal_cidr: "10.0.0.0/16".parse().expect("valid cidr"),
        t_start: t0,
        t_end: t1,
    };
    Ok(Scenario { params: params.clone(), spec, records })
}

/// Zeek log bytes and manifest for `params`.
pub fn gen_scenario(params: &SynthParams) -> Result<(Vec<u8>, ScenarioSpec)> {
    let s = generate(params)?;
    Ok((s.conn_log(), s.spec))
}

/// Three scenarios of one preset with fixed seeds, ids `<prefix>-1..3`.
pub fn scenario_set(preset: &str, prefix: &str) -> Result<Vec<SynthParams>> {
    (1..=3u64).map(|i| SynthParams::preset(preset, &format!("{prefix}-{i}"), 1000 + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{featurize_dataset, FeaturizeConfig, Representation};
    use crate::ingest::{parse_conn_log_str, FieldMap};
    use crate::labeling::{LabelRegime, Labeler};

    fn small(kind: SynthKind) -> SynthParams {
        SynthParams {
            kind,
            scenario_id: "t".into(),
            n_background_hosts: 60,
            duration_s: 300.0,
            bot_count: 2,
            imbalance: 20.0,
            seed: 5,
            t_start: 1000.0,
        }
    }

    #[test]
    fn deterministic_and_parseable() {
        for kind in [SynthKind::Spam, SynthKind::Ddos] {
            let p = small(kind);
            let (a, spec) = gen_scenario(&p).unwrap();
            let (b, _) = gen_scenario(&p).unwrap();
            assert_eq!(a, b);
            let parsed = parse_conn_log_str(std::str::from_utf8(&a).unwrap(), &FieldMap::zeek()).unwrap();
            assert!(parsed.unknown_columns.is_empty() && parsed.skipped.is_empty());
            let s = generate(&p).unwrap();
            assert_eq!(parsed.records, s.records);
            assert!(s.records.windows(2).all(|w| w[0].ts <= w[1].ts));
            assert!(s.records.iter().all(|r| spec.in_bounds(r.ts)));
            let back = ScenarioSpec::parse(&s.manifest()).unwrap();
            assert_eq!(back, spec);
        }
        let mut other = small(SynthKind::Spam);
        other.seed = 6;
        assert_ne!(gen_scenario(&other).unwrap().0, gen_scenario(&small(SynthKind::Spam)).unwrap().0);
    }

    #[test]
    fn ddos_records_hit_the_victim() {
        let s = generate(&small(SynthKind::Ddos)).unwrap();
        assert_eq!(s.spec.victim_ips.len(), 1);
        let victim = *s.spec.victim_ips.iter().next().unwrap();
        let flood: Vec<_> = s.records.iter().filter(|r| r.dest_h == victim).collect();
        assert!(!flood.is_empty());
        assert!(flood.iter().all(|r| s.spec.is_botnet(&r.orig_h)));
        let coarse = Labeler::new(&s.spec, LabelRegime::Coarse).unwrap();
        let fine = Labeler::new(&s.spec, LabelRegime::Fine).unwrap();
        let nc = s.records.iter().filter(|r| coarse.label(r).is_malicious()).count();
        let nf = s.records.iter().filter(|r| fine.label(r).is_malicious()).count();
        assert!(nf < nc);
    }

    #[test]
    fn spam_has_no_victims() {
        let s = generate(&small(SynthKind::Spam)).unwrap();
        assert!(s.spec.victim_ips.is_empty());
        assert!(!s.manifest().contains("victim_ips"));
    }

    #[test]
    fn infeasible_imbalance_is_rejected() {
        let mut p = small(SynthKind::Spam);
        p.imbalance = 1000.0;
        let err = generate(&p).unwrap_err().to_string();
        assert!(err.contains("infeasible imbalance"), "{err}");
        assert!(SynthParams::preset("botnet", "x", 0).is_err());
    }

    #[test]
    fn spam_preset_hits_imbalance_target() {
        let p = SynthParams::preset("spam", "s", 1001).unwrap();
        let s = generate(&p).unwrap();
        let cfg = FeaturizeConfig::new(Representation::Traffic, 30.0);
        let lab = Labeler::new(&s.spec, LabelRegime::Coarse).unwrap();
        let m = featurize_dataset(&s.records, &s.spec, &cfg, &lab).unwrap();
        let (neg, pos) = m.class_counts();
        let ratio = neg as f64 / pos as f64;
        assert!((ratio / 134.0 - 1.0).abs() <= 0.2, "ratio 1:{ratio:.1}");
    }

    /// Mann-Whitney z statistic with tie correction.
    fn rank_sum_z(a: &[f64], b: &[f64]) -> f64 {
        let mut all: Vec<(f64, bool)> =
            a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0));
        let n = all.len();
        let mut ranks = vec![0.0; n];
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && all[j + 1].0 == all[i].0 {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            ranks[i..=j].iter_mut().for_each(|x| *x = r);
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let (n1, n2) = (a.len() as f64, b.len() as f64);
        let r1: f64 = all.iter().zip(&ranks).filter(|(e, _)| e.1).map(|(_, r)| r).sum();
        let u = r1 - n1 * (n1 + 1.0) / 2.0;
        let nn = n1 + n2;
        let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
        (u - n1 * n2 / 2.0) / var.sqrt()
    }

    #[test]
    fn spam_records_look_like_background() {
        let p = SynthParams::preset("spam", "s", 1002).unwrap();
        let s = generate(&p).unwrap();
        let (bot, bg): (Vec<&ConnRecord>, Vec<&ConnRecord>) =
            s.records.iter().partition(|r| s.spec.is_botnet(&r.orig_h));
        let fields: [(&str, fn(&ConnRecord) -> f64); 8] = [
            ("ts", |r| r.ts),
            ("orig_p", |r| r.orig_p as f64),
            ("dest_p", |r| r.dest_p as f64),
            ("duration", |r| r.duration),
            ("orig_bytes", |r| r.orig_bytes as f64),
            ("resp_bytes", |r| r.resp_bytes as f64),
            ("orig_pkts", |r| r.orig_pkts as f64),
            ("resp_pkts", |r| r.resp_pkts as f64),
        ];
        for (name, f) in fields {
            let a: Vec<f64> = bot.iter().map(|r| f(r)).collect();
            let b: Vec<f64> = bg.iter().map(|r| f(r)).collect();
            let z = rank_sum_z(&a, &b);
            // two-sided 0.1% level
            assert!(z.abs() < 3.29, "{name}: z = {z:.2}");
        }
    }
}

//! Ground-truth labels for records and aggregated rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ConnRecord, ScenarioSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Label {
    #[default]
    Legitimate = 0,
    Malicious = 1,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_bool(malicious: bool) -> Self {
        if malicious {
            Label::Malicious
        } else {
            Label::Legitimate
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::Legitimate),
            1 => Ok(Label::Malicious),
            v => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {v}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelRegime {
    /// Every record touching a botnet IP, for the whole scenario.
    #[default]
    Coarse,
    /// Only botnet-to-victim records.
    Fine,
}

impl fmt::Display for LabelRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelRegime::Coarse => "coarse",
            LabelRegime::Fine => "fine",
        })
    }
}

impl FromStr for LabelRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coarse" | "C" => Ok(LabelRegime::Coarse),
            "fine" | "F" => Ok(LabelRegime::Fine),
            other => Err(format!("unknown labeling regime `{other}` (expected coarse|fine)")),
        }
    }
}

/// Which endpoints count for the coarse rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoarseRule {
    /// Responses sent to a bot are part of its traffic.
    #[default]
    EitherEndpoint,
    OriginOnly,
}

pub fn label_record_coarse(record: &ConnRecord, spec: &ScenarioSpec) -> Label {
    label_record_coarse_with(record, spec, CoarseRule::EitherEndpoint)
}

pub fn label_record_coarse_with(record: &ConnRecord, spec: &ScenarioSpec, rule: CoarseRule) -> Label {
    let hit = match rule {
        CoarseRule::EitherEndpoint => spec.is_botnet(&record.orig_h) || spec.is_botnet(&record.dest_h),
        CoarseRule::OriginOnly => spec.is_botnet(&record.orig_h),
    };
    Label::from_bool(hit)
}

pub fn label_record_fine(record: &ConnRecord, spec: &ScenarioSpec) -> Result<Label> {
    if spec.victim_ips.is_empty() {
        return Err(Error::FineLabelingUnavailable(spec.scenario_id.clone()));
    }
    Ok(Label::from_bool(spec.is_botnet(&record.orig_h) && spec.is_victim(&record.dest_h)))
}

/// A window is malicious iff at least one of its records is.
pub fn label_window<I: IntoIterator<Item = Label>>(labels: I) -> Result<Label> {
    let mut seen = false;
    for l in labels {
        if l.is_malicious() {
            return Ok(Label::Malicious);
        }
        seen = true;
    }
    if seen {
        Ok(Label::Legitimate)
    } else {
        Err(Error::EmptyWindow)
    }
}

/// Applies one regime to the records of one scenario.
#[derive(Clone, Copy, Debug)]
pub struct Labeler<'a> {
    spec: &'a ScenarioSpec,
    regime: LabelRegime,
    rule: CoarseRule,
}

impl<'a> Labeler<'a> {
    /// Fails up front if fine labeling is requested without victim IPs.
    pub fn new(spec: &'a ScenarioSpec, regime: LabelRegime) -> Result<Self> {
        if regime == LabelRegime::Fine && spec.victim_ips.is_empty() {
            return Err(Error::FineLabelingUnavailable(spec.scenario_id.clone()));
        }
        Ok(Labeler { spec, regime, rule: CoarseRule::default() })
    }

    pub fn with_coarse_rule(mut self, rule: CoarseRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn regime(&self) -> LabelRegime {
        self.regime
    }

    pub fn label(&self, record: &ConnRecord) -> Label {
        match self.regime {
            LabelRegime::Coarse => label_record_coarse_with(record, self.spec, self.rule),
            // victim set checked in new()
            LabelRegime::Fine => {
                Label::from_bool(self.spec.is_botnet(&record.orig_h) && self.spec.is_victim(&record.dest_h))
            }
        }
    }
}

//! Model documents.
//!
//! A document is compact JSON of the form
//!
//! ```text
//! {"checksum":"<sha256 hex of the payload>","model":<payload>}
//! ```
//!
//! where the payload is `{"format":"botflow-model","version":1,"model":{...}}`
//! with the hyper-parameters, column names, schema fingerprint and fitted
//! parameters. The checksum covers the payload bytes exactly as written, so
//! any edit or truncation is rejected on load.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::Model;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "botflow-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct PayloadOut<'a> {
    format: &'a str,
    version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadIn {
    format: String,
    version: u32,
    model: Model,
}

#[derive(Serialize)]
struct DocOut<'a> {
    checksum: String,
    model: &'a RawValue,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocIn<'a> {
    checksum: String,
    #[serde(borrow)]
    model: &'a RawValue,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn serialize(model: &Model) -> Result<Vec<u8>> {
    let payload = serde_json::to_string(&PayloadOut { format: MODEL_FORMAT, version: MODEL_VERSION, model })?;
    let raw = RawValue::from_string(payload)?;
    let doc = DocOut { checksum: digest(raw.get().as_bytes()), model: &raw };
    Ok(serde_json::to_vec(&doc)?)
}

pub fn deserialize(bytes: &[u8]) -> Result<Model> {
    let bad = |m: String| Error::ModelFormat(m);
    let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8".into()))?;
    let doc: DocIn<'_> =
        serde_json::from_str(text).map_err(|e| bad(format!("malformed or truncated: {e}")))?;
    if digest(doc.model.get().as_bytes()) != doc.checksum {
        return Err(bad("checksum mismatch".into()));
    }
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let head: Header = serde_json::from_str(doc.model.get()).map_err(|e| bad(e.to_string()))?;
    if head.format != MODEL_FORMAT {
        return Err(bad(format!("unexpected format `{}`", head.format)));
    }
    if head.version != MODEL_VERSION {
        return Err(bad(format!(
            "unsupported version {} (this build reads version {MODEL_VERSION})",
            head.version
        )));
    }
    let payload: PayloadIn = serde_json::from_str(doc.model.get()).map_err(|e| bad(e.to_string()))?;
    debug_assert_eq!((payload.format.as_str(), payload.version), (MODEL_FORMAT, MODEL_VERSION));
    payload.model.validate()?;
    payload.model.params.validate().map_err(|e| bad(e.to_string()))?;
    Ok(payload.model)
}

//! Model and translation-operator files: pretty-printed JSON documents with a
//! `format` tag and a `version` number next to the payload. Floats are written
//! in shortest round-trip form, so a reloaded artifact is bit-identical.

use std::path::Path;

use multisense_core::{Classifier, TranslationOperator};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result, SimError};
use crate::fsutil;

pub const MODEL_FORMAT: &str = "multisense-model";
pub const OPERATOR_FORMAT: &str = "multisense-operator";
pub const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    format: String,
    version: u64,
    payload: T,
}

fn encode<T: Serialize>(format: &str, payload: &T) -> Result<String, FormatError> {
    let env = Envelope { format: format.to_string(), version: VERSION, payload };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| FormatError::Parse { what: "artifact", message: e.to_string() })?;
    s.push('\n');
    Ok(s)
}

fn decode<T: DeserializeOwned>(format: &'static str, text: &str) -> Result<T, FormatError> {
    // check the tag and version before the payload so a newer file reports a
    // version error instead of an arbitrary field error
    #[derive(Deserialize)]
    struct Probe {
        format: Option<String>,
        version: Option<u64>,
    }
    let probe: Probe = serde_json::from_str(text).map_err(|e| FormatError::Parse { what: format, message: e.to_string() })?;
    match probe.format.as_deref() {
        Some(f) if f == format => {}
        other => return Err(FormatError::WrongKind { expected: format, found: other.unwrap_or("<missing>").to_string() }),
    }
    match probe.version {
        Some(VERSION) => {}
        Some(v) => return Err(FormatError::UnsupportedVersion { what: format, found: v, supported: VERSION }),
        None => return Err(FormatError::Parse { what: format, message: "missing field `version`".into() }),
    }
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| FormatError::Parse { what: format, message: e.to_string() })?;
    Ok(env.payload)
}

pub fn encode_model(c: &Classifier) -> Result<String, FormatError> {
    encode(MODEL_FORMAT, c)
}

pub fn decode_model(text: &str) -> Result<Classifier, FormatError> {
    let c: Classifier = decode(MODEL_FORMAT, text)?;
    c.validate()?;
    Ok(c)
}

pub fn encode_operator(op: &TranslationOperator) -> Result<String, FormatError> {
    encode(OPERATOR_FORMAT, op)
}

pub fn decode_operator(text: &str) -> Result<TranslationOperator, FormatError> {
    let op: TranslationOperator = decode(OPERATOR_FORMAT, text)?;
    op.validate()?;
    Ok(op)
}

pub fn save_model(c: &Classifier, path: &Path) -> Result<()> {
    let text = encode_model(c).map_err(|e| SimError::format(path, e))?;
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<Classifier> {
    decode_model(&fsutil::read_string(path)?).map_err(|e| SimError::format(path, e))
}

pub fn save_operator(op: &TranslationOperator, path: &Path) -> Result<()> {
    let text = encode_operator(op).map_err(|e| SimError::format(path, e))?;
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn load_operator(path: &Path) -> Result<TranslationOperator> {
    decode_operator(&fsutil::read_string(path)?).map_err(|e| SimError::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use multisense_core::DeviceId;

    #[test]
    fn operator_round_trip_is_exact() {
        let op = TranslationOperator::diagonal(DeviceId(2), DeviceId(0), &[0.1, 1.0 / 3.0], &[-0.7, 1e-300]).unwrap();
        let back = decode_operator(&encode_operator(&op).unwrap()).unwrap();
        assert_eq!(back, op);
    }

    #[test]
    fn version_and_kind_are_checked() {
        let op = TranslationOperator::identity(DeviceId(0), 2);
        let text = encode_operator(&op).unwrap();
        let newer = text.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(decode_operator(&newer), Err(FormatError::UnsupportedVersion { found: 7, .. })));
        assert!(matches!(decode_model(&text), Err(FormatError::WrongKind { .. })));
        assert!(matches!(decode_operator("{\"format\": "), Err(FormatError::Parse { .. })));
    }
}

//! Canonical textual encoding for signed payloads, wire bodies and files.
//!
//! The encoding is a strict subset of JSON: objects with keys sorted by byte
//! order, no insignificant whitespace, integers in minimal base-10 form and
//! strings escaped exactly the way [`serde_json`] escapes them. Floats and
//! `null` are outside the value domain. A byte string is accepted by
//! [`decode`] only if re-encoding the parsed value reproduces it exactly.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("unencodable value: {0}")]
    UnencodableValue(String),
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("input parses but is not in canonical form")]
    NonCanonicalInput,
    #[error("value does not match the expected shape: {0}")]
    Shape(String),
}

/// The structured message domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn map() -> Self {
        Value::Map(BTreeMap::new())
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }
}

impl TryFrom<serde_json::Value> for Value {
    type Error = CanonicalError;

    fn try_from(json: serde_json::Value) -> Result<Self, Self::Error> {
        use serde_json::Value as J;
        Ok(match json {
            J::Null => return Err(CanonicalError::UnencodableValue("null".into())),
            J::Bool(b) => Value::Bool(b),
            J::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => return Err(CanonicalError::UnencodableValue(format!("number {n}"))),
            },
            J::String(s) => Value::Str(s),
            J::Array(items) => Value::List(items.into_iter().map(Value::try_from).collect::<Result<_, _>>()?),
            J::Object(obj) => Value::Map(
                obj.into_iter()
                    .map(|(k, v)| Ok((k, Value::try_from(v)?)))
                    .collect::<Result<_, CanonicalError>>()?,
            ),
        })
    }
}

impl From<Value> for serde_json::Value {
    fn from(value: Value) -> Self {
        use serde_json::Value as J;
        match value {
            Value::Bool(b) => J::Bool(b),
            Value::Int(i) => J::from(i),
            Value::Str(s) => J::String(s),
            Value::List(items) => J::Array(items.into_iter().map(Into::into).collect()),
            Value::Map(m) => J::Object(m.into_iter().map(|(k, v)| (k, v.into())).collect()),
        }
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    // serde_json never fails to serialize a str.
    serde_json::to_writer(&mut *out, s).expect("string serialization");
}

fn write_value(out: &mut Vec<u8>, value: &Value) {
    match value {
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        Value::Str(s) => write_str(out, s),
        Value::List(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(out, item);
            }
            out.push(b']');
        }
        Value::Map(m) => {
            out.push(b'{');
            // BTreeMap<String, _> iterates in byte order of the keys.
            for (i, (k, v)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_str(out, k);
                out.push(b':');
                write_value(out, v);
            }
            out.push(b'}');
        }
    }
}

/// Encodes a value into its canonical bytes.
pub fn encode(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(&mut out, value);
    out
}

/// Parses canonical bytes. Rejects anything whose re-encoding differs.
pub fn decode(bytes: &[u8]) -> Result<Value, CanonicalError> {
    let json: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| CanonicalError::MalformedInput(e.to_string()))?;
    let value = Value::try_from(json).map_err(|e| match e {
        CanonicalError::UnencodableValue(s) => CanonicalError::MalformedInput(s),
        other => other,
    })?;
    if encode(&value) != bytes {
        return Err(CanonicalError::NonCanonicalInput);
    }
    Ok(value)
}

/// Converts any serializable type into the canonical value domain.
pub fn to_value<T: Serialize + ?Sized>(item: &T) -> Result<Value, CanonicalError> {
    let json = serde_json::to_value(item).map_err(|e| CanonicalError::UnencodableValue(e.to_string()))?;
    Value::try_from(json)
}

pub fn from_value<T: DeserializeOwned>(value: Value) -> Result<T, CanonicalError> {
    serde_json::from_value(value.into()).map_err(|e| CanonicalError::Shape(e.to_string()))
}

/// Serializes a typed message straight to canonical bytes.
pub fn to_bytes<T: Serialize + ?Sized>(item: &T) -> Result<Vec<u8>, CanonicalError> {
    Ok(encode(&to_value(item)?))
}

/// Decodes canonical bytes into a typed message. The typed value must
/// re-encode to the same bytes, so unknown fields or alternative spellings
/// of a field are rejected.
pub fn from_bytes<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let item: T = from_value(decode(bytes)?)?;
    if to_bytes(&item)? != bytes {
        return Err(CanonicalError::NonCanonicalInput);
    }
    Ok(item)
}

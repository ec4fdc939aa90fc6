//! Internally tagged enums with exact error locations.
//!
//! serde buffers internally tagged enums before picking the variant, which
//! loses the location of any error inside the variant. The types here are
//! derived as externally tagged (`#[serde(remote = "Self")]`) and
//! [`tagged_serde!`] converts `{"type": "x", ...rest}` to `{"x": {...rest}}`
//! before deserializing, so nested errors keep their JSON pointer. The
//! pointer travels inside the error message and is unpacked by [`split`].

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

const MARK: char = '\u{1}';

/// JSON pointer from a serde path (`a.b[2].c` → `/a/b/2/c`).
pub(crate) fn pointer_of<'a>(segments: impl Iterator<Item = &'a serde_path_to_error::Segment>) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in segments {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

/// Splits a message produced by [`tagged_serde!`] into the pointer relative
/// to the enum and the plain message.
pub(crate) fn split(message: &str) -> (String, String) {
    if let Some(rest) = message.strip_prefix(MARK) {
        if let Some((ptr, msg)) = rest.split_once(MARK) {
            return (ptr.to_string(), msg.to_string());
        }
    }
    (String::new(), message.to_string())
}

/// Full pointer for an error at `base` with a possibly packed `message`.
pub(crate) fn locate(base: &str, message: &str) -> (String, String) {
    let (inner, msg) = split(message);
    let mut pointer = format!("{base}{inner}");
    // serde reports unknown keys at the enclosing object
    if let Some(key) = msg.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
        let tail = format!("/{key}");
        if !pointer.ends_with(&tail) {
            pointer.push_str(&tail);
        }
    }
    (pointer, msg)
}

fn pack(pointer: &str, message: &str) -> String {
    format!("{MARK}{pointer}{MARK}{message}")
}

pub(crate) fn deserialize<'de, D, T>(
    d: D,
    key: &str,
    external: impl Fn(Value, &mut serde_path_to_error::Track) -> Result<T, serde_json::Error>,
) -> Result<T, D::Error>
where
    D: Deserializer<'de>,
{
    let Value::Object(mut map) = Value::deserialize(d)? else {
        return Err(D::Error::custom(format!("expected an object with a `{key}` field")));
    };
    let tag = match map.remove(key) {
        Some(Value::String(s)) => s,
        Some(_) => return Err(D::Error::custom(pack(&format!("/{key}"), "tag must be a string"))),
        None => return Err(D::Error::custom(pack(&format!("/{key}"), &format!("missing field `{key}`")))),
    };
    let first_key = map.keys().next().cloned();
    let mut candidates = Vec::with_capacity(2);
    if map.is_empty() {
        candidates.push(Value::String(tag.clone()));
    }
    candidates.push(Value::Object(Map::from_iter([(tag, Value::Object(map))])));

    let mut first_err = None;
    for v in candidates {
        let mut track = serde_path_to_error::Track::new();
        match external(v, &mut track) {
            Ok(t) => return Ok(t),
            Err(e) => {
                if first_err.is_none() {
                    let path = track.path();
                    let msg = e.to_string();
                    let (inner, msg) = split(&msg);
                    if let (Some(k), true) = (&first_key, msg.ends_with("expected unit") || msg.contains("unit variant")) {
                        first_err = Some(pack(&format!("/{k}"), &format!("unknown field `{k}`, this variant takes no fields")));
                        continue;
                    }
                    let ptr = if msg.starts_with("unknown variant") && path.iter().count() == 0 {
                        format!("/{key}")
                    } else {
                        format!("{}{inner}", pointer_of(path.iter().skip(1)))
                    };
                    first_err = Some(pack(&ptr, &msg));
                }
            }
        }
    }
    Err(D::Error::custom(first_err.expect("at least one candidate")))
}

pub(crate) fn serialize<S: Serializer>(external: Result<Value, serde_json::Error>, key: &str, s: S) -> Result<S::Ok, S::Error> {
    let v = external.map_err(serde::ser::Error::custom)?;
    let out = match v {
        Value::String(tag) => Value::Object(Map::from_iter([(key.to_string(), Value::String(tag))])),
        Value::Object(m) if m.len() == 1 => {
            let (tag, body) = m.into_iter().next().expect("one entry");
            let mut fields = match body {
                Value::Object(f) => f,
                _ => Map::new(),
            };
            let mut out = Map::new();
            out.insert(key.to_string(), Value::String(tag));
            out.append(&mut fields);
            Value::Object(out)
        }
        other => other,
    };
    out.serialize(s)
}

/// Implements `Serialize`/`Deserialize` with an internal tag for a type
/// derived with `#[serde(remote = "Self")]`.
macro_rules! tagged_serde {
    ($ty:ty, $key:literal) => {
        impl serde::Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                $crate::tagged::serialize(<$ty>::serialize(self, serde_json::value::Serializer), $key, s)
            }
        }

        impl<'de> serde::Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                $crate::tagged::deserialize(d, $key, |v, track| {
                    <$ty>::deserialize(serde_path_to_error::Deserializer::new(v, track))
                })
            }
        }
    };
}

pub(crate) use tagged_serde;

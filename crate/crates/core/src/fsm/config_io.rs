use serde_path_to_error::Segment;

use super::FsmConfig;

/// A document that does not fit the config schema, with the JSON path of
/// the offending member.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schema error at {path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

pub fn serialize_config(config: &FsmConfig) -> String {
    // Every field is a string, integer, bool or JSON value: serialization cannot fail.
    serde_json::to_string_pretty(config).expect("config serializes")
}

pub fn deserialize_config(text: &str) -> Result<FsmConfig, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let mut path = String::from("$");
        for seg in err.path().iter() {
            match seg {
                Segment::Seq { index } => path.push_str(&format!("[{index}]")),
                Segment::Map { key } | Segment::Enum { variant: key } => {
                    path.push('.');
                    path.push_str(key);
                }
                Segment::Unknown => path.push_str(".?"),
            }
        }
        let message = err.inner().to_string();
        if let Some(field) = missing_field(&message) {
            path.push('.');
            path.push_str(field);
        }
        SchemaError { path, message }
    })
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

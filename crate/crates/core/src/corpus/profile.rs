use std::fmt;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The agent identity: an ordered list of key → value pairs.
///
/// Serialized as a JSON object whose field order is the key order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Profile {
    entries: Vec<(String, String)>,
}

impl Profile {
    pub fn new<K, V, I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut profile = Profile::default();
        for (k, v) in entries {
            profile.push(k.into(), v.into())?;
        }
        Ok(profile)
    }

    fn push(&mut self, key: String, value: String) -> Result<()> {
        if self.index_of(&key).is_some() {
            return Err(Error::Config(format!("duplicate profile key {key:?}")));
        }
        if value.is_empty() || value.split_whitespace().count() != 1 {
            return Err(Error::Config(format!(
                "profile value for {key:?} must be a single token, got {value:?}"
            )));
        }
        self.entries.push((key, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.entries.iter().position(|(k, _)| k == key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index_of(key).map(|i| self.entries[i].1.as_str())
    }

    pub fn value_at(&self, index: usize) -> &str {
        &self.entries[index].1
    }

    /// Replaces the value of an existing key.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let value = value.into();
        let i = self
            .index_of(key)
            .ok_or_else(|| Error::Config(format!("unknown profile key {key:?}")))?;
        if value.is_empty() || value.split_whitespace().count() != 1 {
            return Err(Error::Config(format!(
                "profile value for {key:?} must be a single token, got {value:?}"
            )));
        }
        self.entries[i].1 = value;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl Serialize for Profile {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ProfileVisitor;

        impl<'de> Visitor<'de> for ProfileVisitor {
            type Value = Profile;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object mapping profile keys to single-token values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Profile, A::Error> {
                let mut profile = Profile::default();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    profile.push(k, v).map_err(de::Error::custom)?;
                }
                Ok(profile)
            }
        }

        deserializer.deserialize_map(ProfileVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_order_is_preserved() {
        let p: Profile = serde_json::from_str(r#"{"zeta":"a","alpha":"b"}"#).unwrap();
        assert_eq!(p.keys().collect::<Vec<_>>(), ["zeta", "alpha"]);
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"zeta":"a","alpha":"b"}"#);
    }

    #[test]
    fn rejects_duplicates_and_multiword_values() {
        assert!(serde_json::from_str::<Profile>(r#"{"a":"x","a":"y"}"#).is_err());
        assert!(serde_json::from_str::<Profile>(r#"{"city":"new york"}"#).is_err());
    }

    #[test]
    fn set_replaces_existing_only() {
        let mut p = Profile::new([("age", "three")]).unwrap();
        p.set("age", "four").unwrap();
        assert_eq!(p.get("age"), Some("four"));
        assert!(p.set("height", "tall").is_err());
    }
}

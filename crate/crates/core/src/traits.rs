//! The five personality dimensions and containers keyed by them.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One Big Five dimension. The declaration order is the canonical
/// trait order used by every vector in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trait {
    Extraversion,
    Agreeableness,
    Conscientiousness,
    Neuroticism,
    Openness,
}

impl Trait {
    pub const ALL: [Trait; 5] = [
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Conscientiousness,
        Trait::Neuroticism,
        Trait::Openness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Trait::Extraversion => "E",
            Trait::Agreeableness => "A",
            Trait::Conscientiousness => "C",
            Trait::Neuroticism => "N",
            Trait::Openness => "O",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Neuroticism => "Neuroticism",
            Trait::Openness => "Openness",
        }
    }
}

impl FromStr for Trait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Trait::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| Error::Validation(format!("unknown trait code {s:?}")))
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for Trait {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Trait {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// A value per trait, serialized as a JSON object with keys `E, A, C, N, O`
/// in that order. Deserialization requires all five keys exactly once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Hash)]
pub struct TraitMap<T>(pub [T; 5]);

impl<T> TraitMap<T> {
    pub fn from_fn(mut f: impl FnMut(Trait) -> T) -> Self {
        TraitMap(Trait::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Trait, &T)> {
        Trait::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> TraitMap<U> {
        TraitMap::from_fn(|t| f(&self.0[t.index()]))
    }
}

impl<T> Index<Trait> for TraitMap<T> {
    type Output = T;
    fn index(&self, t: Trait) -> &T {
        &self.0[t.index()]
    }
}

impl<T> IndexMut<Trait> for TraitMap<T> {
    fn index_mut(&mut self, t: Trait) -> &mut T {
        &mut self.0[t.index()]
    }
}

impl<T: Serialize> Serialize for TraitMap<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(5))?;
        for (t, v) in self.iter() {
            map.serialize_entry(t.code(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for TraitMap<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct MapVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Deserialize<'de>> Visitor<'de> for MapVisitor<T> {
            type Value = TraitMap<T>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object with keys E, A, C, N, O")
            }

            fn visit_map<M: MapAccess<'de>>(self, mut access: M) -> std::result::Result<Self::Value, M::Error> {
                let mut slots: [Option<T>; 5] = Default::default();
                while let Some(key) = access.next_key::<String>()? {
                    let t: Trait = key.parse().map_err(de::Error::custom)?;
                    if slots[t.index()].is_some() {
                        return Err(de::Error::custom(format!("duplicate trait key {key}")));
                    }
                    slots[t.index()] = Some(access.next_value()?);
                }
                let mut out = Vec::with_capacity(5);
                for (t, slot) in Trait::ALL.into_iter().zip(slots) {
                    out.push(slot.ok_or_else(|| de::Error::custom(format!("missing trait key {}", t.code())))?);
                }
                let arr: [T; 5] = out.try_into().map_err(|_| de::Error::custom("trait arity"))?;
                Ok(TraitMap(arr))
            }
        }

        deserializer.deserialize_map(MapVisitor(std::marker::PhantomData))
    }
}

/// Trinary bucket of a lexicon score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Medium, Level::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trait_map_serializes_in_canonical_order() {
        let m = TraitMap([1u8, 0, 1, 0, 1]);
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"E":1,"A":0,"C":1,"N":0,"O":1}"#
        );
    }

    #[test]
    fn trait_map_accepts_any_key_order() {
        let m: TraitMap<u8> = serde_json::from_str(r#"{"O":1,"N":0,"C":1,"A":0,"E":1}"#).unwrap();
        assert_eq!(m, TraitMap([1, 0, 1, 0, 1]));
    }

    #[test]
    fn trait_map_rejects_missing_and_unknown_keys() {
        assert!(serde_json::from_str::<TraitMap<u8>>(r#"{"E":1,"A":0,"C":1,"N":0}"#).is_err());
        assert!(serde_json::from_str::<TraitMap<u8>>(r#"{"E":1,"A":0,"C":1,"N":0,"O":1,"X":1}"#).is_err());
        assert!(serde_json::from_str::<TraitMap<u8>>(r#"{"E":1,"E":0,"C":1,"N":0,"O":1}"#).is_err());
    }

    #[test]
    fn level_names_are_lowercase() {
        assert_eq!(serde_json::to_string(&Level::Medium).unwrap(), "\"medium\"");
    }
}

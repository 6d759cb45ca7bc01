//! Serde helpers for extended reals.
//!
//! JSON has no literal for the infinities, so fields that may legitimately
//! be infinite (expansion factors, half-widths, interval lengths) serialize
//! finite values as numbers and the special values as the strings `"inf"`,
//! `"-inf"`, and `"nan"`.

/// Use with `#[serde(with = "serde_ext::extended")]` on `f64` fields.
pub mod extended {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_f64(*value)
        } else if value.is_nan() {
            serializer.serialize_str("nan")
        } else if *value > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_str("-inf")
        }
    }

    struct ExtVisitor;

    impl Visitor<'_> for ExtVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!(
                    "invalid extended real '{other}'"
                ))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        deserializer.deserialize_any(ExtVisitor)
    }
}

/// Like [`extended`] but for `Option<f64>`; `None` maps to JSON `null`.
pub mod opt_extended {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(value: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => super::extended::serialize(v, serializer),
            None => serializer.serialize_none(),
        }
    }

    struct OptVisitor;

    impl<'de> Visitor<'de> for OptVisitor {
        type Value = Option<f64>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("null, a number, or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_none<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok(None)
        }

        fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok(None)
        }

        fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
            super::extended::deserialize(d).map(Some)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        d.deserialize_option(OptVisitor)
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Wrap {
        #[serde(with = "super::extended")]
        v: f64,
    }

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct OptWrap {
        #[serde(default, with = "super::opt_extended")]
        v: Option<f64>,
    }

    #[test]
    fn optional_round_trips() {
        for v in [None, Some(2.5), Some(f64::INFINITY)] {
            let json = serde_json::to_string(&OptWrap { v }).unwrap();
            let back: OptWrap = serde_json::from_str(&json).unwrap();
            assert_eq!(back.v, v, "json {json}");
        }
        let back: OptWrap = serde_json::from_str("{}").unwrap();
        assert_eq!(back.v, None);
    }

    #[test]
    fn round_trips_finite_and_infinite() {
        for v in [1.5, 0.0, -2.25e-10, f64::INFINITY, f64::NEG_INFINITY] {
            let json = serde_json::to_string(&Wrap { v }).unwrap();
            let back: Wrap = serde_json::from_str(&json).unwrap();
            assert_eq!(back.v, v, "json {json}");
        }
        let json = serde_json::to_string(&Wrap { v: f64::INFINITY }).unwrap();
        assert_eq!(json, r#"{"v":"inf"}"#);
        let back: Wrap = serde_json::from_str(r#"{"v":"nan"}"#).unwrap();
        assert!(back.v.is_nan());
    }
}

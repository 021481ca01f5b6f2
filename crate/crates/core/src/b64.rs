//! Serde helpers storing `f64` arrays as base64 little-endian bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serializer};

pub fn encode(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err("base64 payload is not a whole number of f64 values".into());
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&encode(v))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let s = String::deserialize(d)?;
    decode(&s).map_err(serde::de::Error::custom)
}

pub mod nested {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for row in v {
            seq.serialize_element(&encode(row))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<String>::deserialize(d)?;
        rows.iter().map(|r| decode(r).map_err(serde::de::Error::custom)).collect()
    }
}

/// Nested arrays of a generic scalar, stored through `f64`.
pub mod real_nested {
    use super::*;
    use crate::scalar::Real;

    pub fn serialize<T: Real, S: Serializer>(v: &[Vec<T>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()).collect();
        nested::serialize(&rows, s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<T>>, D::Error> {
        Ok(nested::deserialize(d)?.into_iter().map(|r| r.into_iter().map(T::c).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_roundtrip() {
        let v = vec![0.1, -0.0, f64::INFINITY, 1e-300, std::f64::consts::PI, f64::MIN_POSITIVE];
        let back = decode(&encode(&v)).unwrap();
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), back.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(decode("AAA=").is_err());
    }
}

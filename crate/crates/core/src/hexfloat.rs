//! Bit-exact text encoding of `f64` values as base-16 IEEE-754 bit patterns.
//!
//! Every value takes exactly 16 lowercase hex digits (big-endian bit order),
//! so a `Vec<f64>` becomes one contiguous string of `16 * len` characters.
//! Use with `#[serde(with = "crate::hexfloat::vec")]` or
//! `#[serde(with = "crate::hexfloat::scalar")]`.

use std::fmt::Write;

pub fn encode(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 16);
    for v in values {
        write!(s, "{:016x}", v.to_bits()).expect("writing to a String cannot fail");
    }
    s
}

pub fn decode(s: &str) -> Result<Vec<f64>, String> {
    if !s.len().is_multiple_of(16) {
        return Err(format!("hex float array length {} is not a multiple of 16", s.len()));
    }
    if !s.is_ascii() {
        return Err("hex float array contains non-ASCII characters".into());
    }
    (0..s.len() / 16)
        .map(|i| {
            let chunk = &s[i * 16..(i + 1) * 16];
            u64::from_str_radix(chunk, 16)
                .map(f64::from_bits)
                .map_err(|e| format!("bad hex float `{chunk}`: {e}"))
        })
        .collect()
}

pub mod vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode(&s).map_err(serde::de::Error::custom)
    }
}

pub mod scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", v.to_bits()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        match super::decode(&s).map_err(serde::de::Error::custom)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(serde::de::Error::custom("expected exactly one hex float")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(encode(&[1.0]), "3ff0000000000000");
        assert_eq!(encode(&[-0.0]), "8000000000000000");
        assert_eq!(encode(&[]), "");
        assert!(decode("3ff").is_err());
        assert!(decode("zzzzzzzzzzzzzzzz").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 0..20)) {
            let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let back = decode(&encode(&values)).unwrap();
            let back_bits: Vec<u64> = back.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(back_bits, bits);
        }
    }
}

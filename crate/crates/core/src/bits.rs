use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length bit string, packed big-endian: bit 0 is the most
/// significant bit of the first byte, and the unused low bits of the final
/// byte are always zero.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitString {
    len: usize,
    #[serde(with = "hex_bytes")]
    data: Vec<u8>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            len,
            data: vec![0; len.div_ceil(8)],
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut data = vec![0u8; len.div_ceil(8)];
        rng.fill(&mut data[..]);
        let mut s = BitString { len, data };
        s.clear_padding();
        s
    }

    /// Rejects input whose padding bits are set.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::malformed(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let s = BitString {
            len,
            data: bytes.to_vec(),
        };
        let mut cleared = s.clone();
        cleared.clear_padding();
        if cleared != s {
            return Err(Error::malformed("nonzero padding bits"));
        }
        Ok(s)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = BitString::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        (self.data[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let mask = 1u8 << (7 - i % 8);
        if v {
            self.data[i / 8] |= mask;
        } else {
            self.data[i / 8] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    pub fn xor_assign(&mut self, other: &BitString) -> Result<()> {
        if self.len != other.len {
            return Err(Error::param(format!(
                "bit length mismatch: {} vs {}",
                self.len, other.len
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a ^= b;
        }
        Ok(())
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        let mut out = self.clone();
        out.xor_assign(other)?;
        Ok(out)
    }

    /// Reads `width` bits starting at `offset` as an unsigned integer, high
    /// bit first. Bits past the end read as zero.
    pub fn read_uint(&self, offset: usize, width: u32) -> u32 {
        (0..width as usize).fold(0u32, |acc, k| {
            let i = offset + k;
            (acc << 1) | u32::from(i < self.len && self.get(i))
        })
    }

    /// Inverse of [`read_uint`](Self::read_uint); bits past the end are dropped.
    pub fn write_uint(&mut self, offset: usize, width: u32, value: u32) {
        for k in 0..width as usize {
            let i = offset + k;
            if i < self.len {
                self.set(i, (value >> (width as usize - 1 - k)) & 1 == 1);
            }
        }
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.data.last_mut() {
                *last &= 0xffu8 << (8 - rem);
            }
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(")?;
        for b in self.iter() {
            write!(f, "{}", u8::from(b))?;
        }
        write!(f, ")")
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_is_msb_first() {
        let s = BitString::from_bits(&[true, false, true, true]);
        assert_eq!(s.as_bytes(), &[0b1011_0000]);
        assert_eq!(s.read_uint(0, 4), 0b1011);
        assert!(BitString::from_bytes(&[0b1011_0001], 4).is_err());
        assert!(BitString::from_bytes(&[0b1011_0000], 4).is_ok());
    }

    #[test]
    fn uint_round_trip_with_overhang() {
        let mut s = BitString::zeros(10);
        s.write_uint(0, 8, 0xa5);
        s.write_uint(8, 8, 0xff);
        assert_eq!(s.read_uint(0, 8), 0xa5);
        assert_eq!(s.read_uint(8, 8), 0b1100_0000);
    }

    #[test]
    fn xor_requires_equal_length() {
        let a = BitString::zeros(3);
        assert!(a.xor(&BitString::zeros(4)).is_err());
        let b = BitString::from_bits(&[true, true, false]);
        assert_eq!(a.xor(&b).unwrap(), b);
    }
}

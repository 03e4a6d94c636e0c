use crate::error::{Error, Result};

/// Fixed-length bit vector backing Bloom filters and randomized reports.
///
/// Bits are stored least-significant-first within each byte, which is also
/// the wire layout: bit `i` lives at `bytes[i / 8] >> (i % 8) & 1`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    bytes: Vec<u8>,
}

impl BitVector {
    /// All-zero vector of `len` bits.
    pub fn zeros(len: usize) -> Self {
        BitVector {
            len,
            bytes: vec![0u8; len.div_ceil(8)],
        }
    }

    /// Builds a vector from bool slices; handy in tests.
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = BitVector::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u8 << (i % 8);
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Number of positions set in both vectors. Lengths must match.
    pub fn and_count(&self, other: &BitVector) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Indices of set bits in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    /// All bits in order, as bools.
    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    /// Lowercase hex encoding of the underlying bytes. Trailing pad bits in
    /// the last byte are always zero.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.bytes.len() * 2);
        for b in &self.bytes {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Parses the hex produced by [`to_hex`](Self::to_hex), checking that the
    /// byte count matches `len` bits and that pad bits are clear.
    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        if hex.len() != len.div_ceil(8) * 2 {
            return Err(Error::Input(format!(
                "hex string of {} chars does not encode {} bits",
                hex.len(),
                len
            )));
        }
        let mut bytes = Vec::with_capacity(hex.len() / 2);
        for i in (0..hex.len()).step_by(2) {
            let byte = u8::from_str_radix(&hex[i..i + 2], 16)
                .map_err(|_| Error::Input(format!("invalid hex: {hex:?}")))?;
            bytes.push(byte);
        }
        if len % 8 != 0 {
            let pad_mask = !0u8 << (len % 8);
            if let Some(last) = bytes.last() {
                if last & pad_mask != 0 {
                    return Err(Error::Input(format!(
                        "hex string {hex:?} sets bits past length {len}"
                    )));
                }
            }
        }
        Ok(BitVector { len, bytes })
    }
}

impl std::fmt::Debug for BitVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_roundtrip() {
        let mut v = BitVector::zeros(19);
        assert_eq!(v.count_ones(), 0);
        v.set(0, true);
        v.set(7, true);
        v.set(8, true);
        v.set(18, true);
        assert!(v.get(0) && v.get(7) && v.get(8) && v.get(18));
        assert!(!v.get(1) && !v.get(17));
        assert_eq!(v.count_ones(), 4);
        assert_eq!(v.ones().collect::<Vec<_>>(), vec![0, 7, 8, 18]);
        v.set(7, false);
        assert_eq!(v.count_ones(), 3);
    }

    #[test]
    fn and_count_matches_naive_intersection() {
        let a = BitVector::from_bits(&[true, false, true, true, false, true]);
        let b = BitVector::from_bits(&[true, true, false, true, false, false]);
        assert_eq!(a.and_count(&b), 2);
        assert_eq!(b.and_count(&a), 2);
        assert_eq!(a.and_count(&BitVector::zeros(6)), 0);
    }

    #[test]
    fn hex_layout_is_lsb_first() {
        let mut v = BitVector::zeros(16);
        v.set(0, true);
        v.set(9, true);
        // bit 0 -> 0x01 in the first byte, bit 9 -> 0x02 in the second.
        assert_eq!(v.to_hex(), "0102");
        let back = BitVector::from_hex("0102", 16).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn hex_rejects_bad_input() {
        assert!(BitVector::from_hex("01", 16).is_err());
        assert!(BitVector::from_hex("zz", 8).is_err());
        // 12-bit vector occupies 2 bytes; bit 13 set in the pad region.
        assert!(BitVector::from_hex("00f0", 12).is_err());
        assert!(BitVector::from_hex("000f", 12).is_ok());
    }

    #[test]
    fn odd_lengths_round_trip() {
        for len in [1usize, 3, 8, 11, 128] {
            let mut v = BitVector::zeros(len);
            for i in (0..len).step_by(3) {
                v.set(i, true);
            }
            let back = BitVector::from_hex(&v.to_hex(), len).unwrap();
            assert_eq!(back, v);
        }
    }
}

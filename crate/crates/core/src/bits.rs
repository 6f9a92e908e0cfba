//! Fixed-length bitsets packed into 64-bit words.
//!
//! Bit `j` lives in word `j / 64` at bit position `j % 64`. Bits past `len` in
//! the last word are always zero, so two equal bitsets have equal words.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitset {
    len: usize,
    words: Vec<u64>,
}

#[inline]
pub fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl Bitset {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Self {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        b.clear_padding();
        b
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut b = Self::zeros(len);
        for j in 0..len {
            if f(j) {
                b.set(j, true);
            }
        }
        b
    }

    /// Rebuilds a bitset from packed words, rejecting a wrong word count or
    /// set padding bits.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::Format(format!(
                "{len} bits need {} words, got {}",
                words_for(len),
                words.len()
            )));
        }
        let b = Self { len, words };
        let mut cleared = b.clone();
        cleared.clear_padding();
        if cleared.words != b.words {
            return Err(Error::Format("nonzero padding bits in packed bitset".into()));
        }
        Ok(b)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        debug_assert!(j < self.len);
        (self.words[j >> 6] >> (j & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, j: usize, v: bool) {
        assert!(j < self.len, "bit {j} out of range {}", self.len);
        let m = 1u64 << (j & 63);
        if v {
            self.words[j >> 6] |= m;
        } else {
            self.words[j >> 6] &= !m;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |j| self.get(j))
    }

    /// Copies bits `[start, end)` into a new bitset.
    pub fn slice(&self, start: usize, end: usize) -> Bitset {
        Bitset::from_fn(end - start, |j| self.get(start + j))
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

/// Packs a plane of bits into 64-bit words (zero padding).
pub fn pack_bitplane(bits: &[bool]) -> Vec<u64> {
    Bitset::from_fn(bits.len(), |j| bits[j]).words
}

/// Inverse of [`pack_bitplane`]; `len` must match the packed word count.
pub fn unpack_bitplane(words: &[u64], len: usize) -> Result<Vec<bool>> {
    Ok(Bitset::from_words(words.to_vec(), len)?.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_boundaries() {
        assert_eq!(pack_bitplane(&[true; 64]).len(), 1);
        let packed = pack_bitplane(&[true; 65]);
        assert_eq!(packed.len(), 2);
        assert_eq!(packed[1], 1);
        assert_eq!(packed[1].count_zeros(), 63);
        assert_eq!(pack_bitplane(&[]).len(), 0);
    }

    #[test]
    fn unpack_rejects_bad_lengths_and_padding() {
        assert!(matches!(unpack_bitplane(&[0, 0], 64), Err(Error::Format(_))));
        assert!(matches!(unpack_bitplane(&[1 << 10], 10), Err(Error::Format(_))));
        assert!(unpack_bitplane(&[1 << 9], 10).is_ok());
    }

    #[test]
    fn ones_clears_padding() {
        let b = Bitset::ones(70);
        assert_eq!(b.count_ones(), 70);
        assert_eq!(b.words()[1], (1 << 6) - 1);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..1000)) {
            let packed = pack_bitplane(&bits);
            prop_assert_eq!(packed.len(), words_for(bits.len()));
            prop_assert_eq!(unpack_bitplane(&packed, bits.len()).unwrap(), bits);
        }
    }
}

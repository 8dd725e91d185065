//! Fixed-length packed bitset over `u64` words.

use std::fmt;

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

impl BitSet {
    pub fn zeros(len: usize) -> Self {
        BitSet {
            len,
            words: vec![0; len.div_ceil(WORD)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = BitSet {
            len,
            words: vec![u64::MAX; len.div_ceil(WORD)],
        };
        s.clear_tail();
        s
    }

    /// Rebuilds a set from packed words. Bits past `len` must be zero.
    pub fn from_words(len: usize, words: Vec<u64>) -> Option<Self> {
        if words.len() != len.div_ceil(WORD) {
            return None;
        }
        let s = BitSet { len, words };
        let mut check = s.clone();
        check.clear_tail();
        (check == s).then_some(s)
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut s = BitSet::zeros(bits.len());
        for (i, b) in bits.into_iter().enumerate() {
            if b {
                s.set(i, true);
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_zeros(&self) -> usize {
        self.len - self.count_ones()
    }

    pub fn not(&self) -> BitSet {
        let mut s = BitSet {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        s.clear_tail();
        s
    }

    pub fn and(&self, other: &BitSet) -> BitSet {
        self.zip(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BitSet) -> BitSet {
        self.zip(other, |a, b| a | b)
    }

    pub fn xor(&self, other: &BitSet) -> BitSet {
        self.zip(other, |a, b| a ^ b)
    }

    /// Number of positions where the two sets differ.
    pub fn hamming(&self, other: &BitSet) -> usize {
        assert_eq!(self.len, other.len, "bitset length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Indices of set bits, ascending.
    pub fn ones_iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    fn zip(&self, other: &BitSet, f: impl Fn(u64, u64) -> u64) -> BitSet {
        assert_eq!(self.len, other.len, "bitset length mismatch");
        BitSet {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for BitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
            write!(f, "BitSet({s})")
        } else {
            write!(f, "BitSet(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ones_respects_tail() {
        let s = BitSet::ones(70);
        assert_eq!(s.count_ones(), 70);
        assert_eq!(s.words()[1], (1 << 6) - 1);
        assert_eq!(s.not().count_ones(), 0);
    }

    #[test]
    fn from_words_rejects_dirty_tail() {
        assert!(BitSet::from_words(3, vec![0b111]).is_some());
        assert!(BitSet::from_words(3, vec![0b1111]).is_none());
        assert!(BitSet::from_words(65, vec![0]).is_none());
    }

    proptest! {
        #[test]
        fn set_algebra(bits_a in prop::collection::vec(any::<bool>(), 1..300), seed in any::<u64>()) {
            let n = bits_a.len();
            let bits_b: Vec<bool> = (0..n).map(|i| ((seed >> (i % 64)) & 1 == 1) ^ (i % 3 == 0)).collect();
            let a = BitSet::from_bools(bits_a.clone());
            let b = BitSet::from_bools(bits_b.clone());
            prop_assert_eq!(a.not().not(), a.clone());
            prop_assert_eq!(a.and(&a.not()).count_ones(), 0);
            prop_assert_eq!(a.or(&a.not()).count_ones(), n);
            let naive = bits_a.iter().zip(&bits_b).filter(|(x, y)| x != y).count();
            prop_assert_eq!(a.hamming(&b), naive);
            prop_assert_eq!(a.xor(&b).count_ones(), naive);
            let ones: Vec<usize> = a.ones_iter().collect();
            let expect: Vec<usize> = bits_a.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect();
            prop_assert_eq!(ones, expect);
        }
    }
}

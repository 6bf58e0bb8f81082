// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use serde::{Serialize, Serializer};

const TOKEN_BITS: u32 = 20;
const TOKEN_MASK: u64 = (1 << TOKEN_BITS) - 1;
const N_SHIFT: u32 = 62;

/// Largest vocabulary whose n-grams fit a packed [`NgramKey`].
pub const MAX_VOCAB: usize = 1 << TOKEN_BITS;
pub const MAX_N: usize = 3;

/// An n-gram (n = 1..=3) packed into a `u64`: the length in the top two bits,
/// then 20 bits per token, first token most significant. Ordering is by
/// length, then lexicographic by token id.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NgramKey(u64);

impl NgramKey {
    pub fn new(tokens: &[u32]) -> Self {
        let n = tokens.len();
        assert!((1..=MAX_N).contains(&n), "n-gram length {n} outside 1..=3");
        let mut raw = (n as u64) << N_SHIFT;
        for (i, &t) in tokens.iter().enumerate() {
            assert!((t as usize) < MAX_VOCAB, "token id {t} exceeds packed key range");
            raw |= u64::from(t) << (TOKEN_BITS * (MAX_N - 1 - i) as u32);
        }
        Self(raw)
    }

    pub fn unigram(token: u32) -> Self {
        Self::new(&[token])
    }

    pub fn n(self) -> usize {
        (self.0 >> N_SHIFT) as usize
    }

    pub fn token(self, i: usize) -> u32 {
        debug_assert!(i < self.n());
        ((self.0 >> (TOKEN_BITS * (MAX_N - 1 - i) as u32)) & TOKEN_MASK) as u32
    }

    pub fn tokens(self) -> Vec<u32> {
        (0..self.n()).map(|i| self.token(i)).collect()
    }

    /// Token at the activation position.
    pub fn last(self) -> u32 {
        self.token(self.n() - 1)
    }

    pub fn contains(self, token: u32) -> bool {
        (0..self.n()).any(|i| self.token(i) == token)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub(crate) fn from_raw(raw: u64) -> Self {
        Self(raw)
    }
}

impl fmt::Debug for NgramKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NgramKey{:?}", self.tokens())
    }
}

/// Space-separated token ids.
impl fmt::Display for NgramKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", self.token(i))?;
        }
        Ok(())
    }
}

impl Serialize for NgramKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens().serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ordering_is_length_then_lexicographic() {
        let a = NgramKey::new(&[5]);
        let b = NgramKey::new(&[7]);
        let c = NgramKey::new(&[1, 9]);
        let d = NgramKey::new(&[2, 0]);
        assert!(a < b && b < c && c < d);
        assert_eq!(NgramKey::new(&[3, 4, 5]).to_string(), "3 4 5");
    }

    proptest! {
        #[test]
        fn pack_unpack(tokens in proptest::collection::vec(0u32..(MAX_VOCAB as u32), 1..=3)) {
            let key = NgramKey::new(&tokens);
            prop_assert_eq!(key.n(), tokens.len());
            prop_assert_eq!(key.tokens(), tokens.clone());
            prop_assert_eq!(key.last(), *tokens.last().unwrap());
        }
    }
}

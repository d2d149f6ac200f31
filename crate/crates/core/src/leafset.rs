use alloc::vec;
use alloc::vec::Vec;

/// Bitset over leaf (dataset) indices. Equality ignores the allocated
/// width, so sets built over different universes compare by membership.
#[derive(Debug, Clone, Default)]
pub struct LeafSet {
    words: Vec<u64>,
}

impl LeafSet {
    fn trimmed(&self) -> &[u64] {
        let end = self.words.iter().rposition(|&w| w != 0).map_or(0, |i| i + 1);
        &self.words[..end]
    }
}

impl PartialEq for LeafSet {
    fn eq(&self, other: &Self) -> bool {
        self.trimmed() == other.trimmed()
    }
}

impl Eq for LeafSet {}

impl core::hash::Hash for LeafSet {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        self.trimmed().hash(state);
    }
}

impl LeafSet {
    pub fn empty(universe: usize) -> Self {
        Self {
            words: vec![0; universe.div_ceil(64)],
        }
    }

    pub fn singleton(universe: usize, leaf: usize) -> Self {
        let mut s = Self::empty(universe);
        s.insert(leaf);
        s
    }

    pub fn from_iter_in(universe: usize, leaves: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(universe);
        for l in leaves {
            s.insert(l);
        }
        s
    }

    pub fn universe_words(&self) -> usize {
        self.words.len()
    }

    #[inline]
    pub fn contains(&self, leaf: usize) -> bool {
        self.words
            .get(leaf / 64)
            .is_some_and(|w| w & (1u64 << (leaf % 64)) != 0)
    }

    #[inline]
    pub fn insert(&mut self, leaf: usize) {
        let w = leaf / 64;
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1u64 << (leaf % 64);
    }

    #[inline]
    pub fn remove(&mut self, leaf: usize) {
        if let Some(w) = self.words.get_mut(leaf / 64) {
            *w &= !(1u64 << (leaf % 64));
        }
    }

    pub fn union_with(&mut self, other: &LeafSet) {
        if other.words.len() > self.words.len() {
            self.words.resize(other.words.len(), 0);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn difference_with(&mut self, other: &LeafSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !*b;
        }
    }

    pub fn is_subset(&self, other: &LeafSet) -> bool {
        self.words.iter().enumerate().all(|(i, w)| {
            let o = other.words.get(i).copied().unwrap_or(0);
            w & !o == 0
        })
    }

    pub fn is_disjoint(&self, other: &LeafSet) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & b == 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Smallest member, if any.
    pub fn min(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut bits = w;
            core::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i * 64 + tz)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_operations() {
        let mut a = LeafSet::from_iter_in(130, [1, 64, 129]);
        let b = LeafSet::from_iter_in(130, [64]);
        assert!(b.is_subset(&a));
        assert!(!a.is_subset(&b));
        assert_eq!(a.len(), 3);
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![1, 64, 129]);
        a.difference_with(&b);
        assert!(a.is_disjoint(&b));
        assert_eq!(a.min(), Some(1));
        a.remove(1);
        assert_eq!(a.min(), Some(129));
    }
}

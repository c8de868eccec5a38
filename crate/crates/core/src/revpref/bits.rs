//! Square boolean matrices stored as packed `u64` rows.

const WORD: usize = 64;

#[inline]
fn words_for(n: usize) -> usize {
    n.div_ceil(WORD)
}

/// Above this size the closure is built by per-row search instead of
/// Floyd-Warshall.
pub const WARSHALL_LIMIT: usize = 512;

#[derive(Clone)]
pub struct BitMatrix {
    n: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn new(n: usize) -> Self {
        Self::with_capacity(n, n)
    }

    /// An `n x n` matrix whose rows have room for `capacity` columns.
    pub fn with_capacity(n: usize, capacity: usize) -> Self {
        let stride = words_for(capacity.max(n)).max(1);
        Self {
            n,
            stride,
            data: vec![0; stride * capacity.max(n)],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                if f(i, j) {
                    m.set(i, j);
                }
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn capacity(&self) -> usize {
        self.data.len() / self.stride
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.n && j < self.n);
        self.data[i * self.stride + j / WORD] >> (j % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize) {
        debug_assert!(i < self.n && j < self.n);
        self.data[i * self.stride + j / WORD] |= 1 << (j % WORD);
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.data[i * self.stride..(i + 1) * self.stride]
    }

    /// `row[dst] |= row[src]`
    #[inline]
    pub fn or_row(&mut self, dst: usize, src: usize) {
        if dst == src {
            return;
        }
        let s = self.stride;
        let (d, r) = if dst < src {
            let (lo, hi) = self.data.split_at_mut(src * s);
            (&mut lo[dst * s..(dst + 1) * s], &hi[..s])
        } else {
            let (lo, hi) = self.data.split_at_mut(dst * s);
            (&mut hi[..s], &lo[src * s..(src + 1) * s])
        };
        for (a, b) in d.iter_mut().zip(r) {
            *a |= *b;
        }
    }

    /// Appends an empty row and column, reallocating when out of room.
    pub fn push_node(&mut self) -> usize {
        if self.n == self.capacity() || words_for(self.n + 1) > self.stride {
            let cap = (self.n + 1).max(self.capacity() * 2).max(8);
            let mut grown = Self::with_capacity(self.n, cap);
            for i in 0..self.n {
                grown.row_mut(i)[..self.stride].copy_from_slice(self.row(i));
            }
            *self = grown;
        }
        self.n += 1;
        self.n - 1
    }

    pub fn ones_in_row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        iter_ones(self.row(i)).filter(move |&j| j < self.n)
    }

    pub fn count_ones(&self) -> usize {
        (0..self.n).map(|i| self.ones_in_row(i).count()).sum()
    }

    /// `true` when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitMatrix) -> bool {
        self.n == other.n
            && (0..self.n).all(|i| {
                self.row(i)
                    .iter()
                    .zip(other.row(i))
                    .all(|(a, b)| a & !b == 0)
            })
    }

    /// Transitive (not reflexive) closure in place.
    pub fn close_transitively(&mut self) {
        if self.n <= WARSHALL_LIMIT {
            self.close_warshall();
        } else {
            self.close_by_search();
        }
    }

    /// Row-oriented Warshall: whenever `i` reaches `k`, `i` inherits `k`'s row.
    pub fn close_warshall(&mut self) {
        for k in 0..self.n {
            let (word, bit) = (k / WORD, 1u64 << (k % WORD));
            for i in 0..self.n {
                if self.data[i * self.stride + word] & bit != 0 {
                    self.or_row(i, k);
                }
            }
        }
    }

    /// Depth-first reachability from every node over the original edges.
    pub fn close_by_search(&mut self) {
        let direct = self.clone();
        let mut stack = Vec::new();
        for s in 0..self.n {
            let mut seen = vec![0u64; self.stride];
            stack.clear();
            stack.extend(direct.ones_in_row(s));
            while let Some(v) = stack.pop() {
                let (w, b) = (v / WORD, 1u64 << (v % WORD));
                if seen[w] & b != 0 {
                    continue;
                }
                seen[w] |= b;
                stack.extend(
                    direct
                        .ones_in_row(v)
                        .filter(|&u| seen[u / WORD] >> (u % WORD) & 1 == 0),
                );
            }
            self.row_mut(s).copy_from_slice(&seen);
        }
    }
}

impl Default for BitMatrix {
    fn default() -> Self {
        BitMatrix::new(0)
    }
}

/// Equality of the logical relation, independent of row capacity.
impl PartialEq for BitMatrix {
    fn eq(&self, other: &Self) -> bool {
        let w = words_for(self.n);
        self.n == other.n && (0..self.n).all(|i| self.row(i)[..w] == other.row(i)[..w])
    }
}

impl Eq for BitMatrix {}

impl std::fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BitMatrix({})", self.n)?;
        for i in 0..self.n {
            let row: String = (0..self.n)
                .map(|j| if self.get(i, j) { '1' } else { '.' })
                .collect();
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}

pub(crate) fn iter_ones(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
    words.iter().enumerate().flat_map(|(w, &word)| {
        let mut bits = word;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let tz = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(w * WORD + tz)
        })
    })
}

#[inline]
pub(crate) fn intersects(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

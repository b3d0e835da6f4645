use super::{Result, TensorError};

/// Dense boolean matrix packed into 64-bit words, one padded run per row.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        BitMatrix {
            rows,
            cols,
            words_per_row,
            bits: vec![0; rows * words_per_row],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = BitMatrix::new(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from a row-major slice of booleans.
    pub fn from_bools(rows: usize, cols: usize, values: &[bool]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(TensorError::Invalid(format!(
                "{rows}x{cols} mask needs {} entries, got {}",
                rows * cols,
                values.len()
            )));
        }
        let mut m = BitMatrix::new(rows, cols);
        for (idx, &v) in values.iter().enumerate() {
            if v {
                m.set(idx / cols, idx % cols, true);
            }
        }
        Ok(m)
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        let mut m = BitMatrix::new(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, true);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        let w = self.bits[i * self.words_per_row + j / 64];
        (w >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let w = &mut self.bits[i * self.words_per_row + j / 64];
        if value {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    fn row_words(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// `row(dst) |= other.row(src)`; both matrices must have equal widths.
    pub(crate) fn or_row_from(&mut self, dst: usize, other: &BitMatrix, src: usize) {
        debug_assert_eq!(self.words_per_row, other.words_per_row);
        let wpr = self.words_per_row;
        let target = &mut self.bits[dst * wpr..(dst + 1) * wpr];
        for (t, s) in target.iter_mut().zip(other.row_words(src)) {
            *t |= s;
        }
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row_words(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Column indices of the set bits of row `i`, ascending.
    pub fn row_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(i)
            .iter()
            .enumerate()
            .flat_map(|(wi, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let tz = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + tz)
                })
            })
    }

    /// True when every bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitMatrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| a & !b == 0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| self.row_indices(i).all(|j| self.get(j, i)))
    }

    pub fn to_pattern(&self) -> Pattern {
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::with_capacity(self.count_ones());
        row_ptr.push(0);
        for i in 0..self.rows {
            col_idx.extend(self.row_indices(i).map(|j| j as u32));
            row_ptr.push(col_idx.len());
        }
        Pattern {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
        }
    }
}

/// Compressed sparse row support of a boolean matrix: which `(i, j)` pairs
/// carry a value. Entries are ordered by row, then ascending column, and that
/// order is the order of every edge-valued tensor built over the pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl Pattern {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
    ) -> Result<Self> {
        let ok = row_ptr.len() == rows + 1
            && row_ptr.first() == Some(&0)
            && row_ptr.last() == Some(&col_idx.len())
            && row_ptr.windows(2).all(|w| w[0] <= w[1])
            && (0..rows).all(|i| {
                let cols_i = &col_idx[row_ptr[i]..row_ptr[i + 1]];
                cols_i.windows(2).all(|w| w[0] < w[1])
                    && cols_i.iter().all(|&c| (c as usize) < cols)
            });
        if !ok {
            return Err(TensorError::Invalid("malformed CSR pattern".into()));
        }
        Ok(Pattern {
            rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row_cols(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_range(i)]
    }

    /// First row without entries, if any.
    pub fn first_empty_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| self.row_ptr[i] == self.row_ptr[i + 1])
    }

    pub fn to_bit_matrix(&self) -> BitMatrix {
        let mut m = BitMatrix::new(self.rows, self.cols);
        for i in 0..self.rows {
            for &j in self.row_cols(i) {
                m.set(i, j as usize, true);
            }
        }
        m
    }
}

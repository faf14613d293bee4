//! Sparse node vectors and a dense-scratch accumulator for building them.

/// Sparse vector over grid nodes with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (k, v) in self.iter() {
            out[k] = v;
        }
        out
    }

    /// Builds from a dense vector, keeping the nonzero entries.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut s = Self::new();
        for (k, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                s.idx.push(k);
                s.val.push(v);
            }
        }
        s
    }
}

/// Dense scratch buffer that remembers which slots were touched, so sparse
/// results can be extracted and the buffer cleared in time proportional to
/// the touched set.
#[derive(Debug, Clone)]
pub struct Accumulator {
    dense: Vec<f64>,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl Accumulator {
    pub fn new(n: usize) -> Self {
        Self { dense: vec![0.0; n], touched: Vec::new(), mark: vec![false; n] }
    }

    #[inline]
    pub fn add(&mut self, k: usize, v: f64) {
        if !self.mark[k] {
            self.mark[k] = true;
            self.touched.push(k);
        }
        self.dense[k] += v;
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty()
    }

    /// Extracts the touched entries in index order (including explicit
    /// zeros) and resets the buffer.
    pub fn drain(&mut self) -> SparseVec {
        self.touched.sort_unstable();
        let mut out = SparseVec { idx: Vec::with_capacity(self.touched.len()), val: Vec::with_capacity(self.touched.len()) };
        for &k in &self.touched {
            out.idx.push(k);
            out.val.push(self.dense[k]);
            self.dense[k] = 0.0;
            self.mark[k] = false;
        }
        self.touched.clear();
        out
    }
}

//! Pairwise summation tree with cheap leaf updates.
//!
//! The total is always `root = left + right` recursively over a fixed
//! power-of-two layout, so a value obtained after any sequence of updates is
//! bit-identical to summing the same leaves from scratch.

#[derive(Debug, Clone)]
pub(crate) struct SumTree {
    cap: usize,
    nodes: Vec<f64>,
    parents: Vec<usize>,
}

impl SumTree {
    pub fn new(leaves: &[f64]) -> Self {
        let cap = leaves.len().max(1).next_power_of_two();
        let mut nodes = vec![0.0; 2 * cap];
        nodes[cap..cap + leaves.len()].copy_from_slice(leaves);
        for i in (1..cap).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self { cap, nodes, parents: Vec::new() }
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn leaf(&self, k: usize) -> f64 {
        self.nodes[self.cap + k]
    }

    /// Sets leaves `idx[i] = val[i]`; `idx` must be sorted ascending.
    pub fn update_sorted(&mut self, idx: &[usize], val: &[f64]) {
        if self.cap == 1 {
            if let Some(&v) = val.first() {
                self.nodes[1] = v;
            }
            return;
        }
        self.parents.clear();
        for (&k, &v) in idx.iter().zip(val) {
            let pos = self.cap + k;
            self.nodes[pos] = v;
            let p = pos >> 1;
            if self.parents.last() != Some(&p) {
                self.parents.push(p);
            }
        }
        while !self.parents.is_empty() {
            let mut w = 0;
            for r in 0..self.parents.len() {
                let p = self.parents[r];
                self.nodes[p] = self.nodes[2 * p] + self.nodes[2 * p + 1];
                let up = p >> 1;
                if up >= 1 && (w == 0 || self.parents[w - 1] != up) {
                    self.parents[w] = up;
                    w += 1;
                }
            }
            self.parents.truncate(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn updates_match_rebuild_bitwise() {
        let leaves: Vec<f64> = (0..37).map(|k| 1.0 / (k as f64 + 0.3)).collect();
        let mut tree = SumTree::new(&leaves);
        let mut changed = leaves.clone();
        let idx = [0, 5, 6, 20, 36];
        let val = [0.1, 1e10, -3.0, 0.7, 1e-9];
        for (&k, &v) in idx.iter().zip(&val) {
            changed[k] = v;
        }
        tree.update_sorted(&idx, &val);
        assert_eq!(tree.total().to_bits(), SumTree::new(&changed).total().to_bits());
        let orig: Vec<f64> = idx.iter().map(|&k| leaves[k]).collect();
        tree.update_sorted(&idx, &orig);
        assert_eq!(tree.total().to_bits(), SumTree::new(&leaves).total().to_bits());
        assert_eq!(tree.leaf(5), leaves[5]);
    }

    #[test]
    fn single_leaf() {
        let mut t = SumTree::new(&[2.0]);
        assert_eq!(t.total(), 2.0);
        t.update_sorted(&[0], &[3.0]);
        assert_eq!(t.total(), 3.0);
    }
}

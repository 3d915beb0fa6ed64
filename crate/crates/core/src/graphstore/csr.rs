/// Compressed sparse rows: `targets[offsets[r]..offsets[r + 1]]` are the
/// neighbours of row `r`, and `edge_ids` carries the id of the edge each
/// entry came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    edge_ids: Vec<usize>,
}

impl Csr {
    /// Builds rows from `(row, target, edge_id)` entries. Entries keep their
    /// relative input order within a row (counting sort, stable).
    pub fn from_entries(num_rows: usize, entries: impl IntoIterator<Item = (usize, usize, usize)> + Clone) -> Self {
        let mut counts = vec![0usize; num_rows + 1];
        for (row, _, _) in entries.clone() {
            counts[row + 1] += 1;
        }
        for r in 0..num_rows {
            counts[r + 1] += counts[r];
        }
        let offsets = counts.clone();
        let total = offsets[num_rows];
        let mut cursor = counts;
        let mut targets = vec![0; total];
        let mut edge_ids = vec![0; total];
        for (row, target, id) in entries {
            let at = cursor[row];
            targets[at] = target;
            edge_ids[at] = id;
            cursor[row] += 1;
        }
        Csr {
            offsets,
            targets,
            edge_ids,
        }
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn degree(&self, row: usize) -> usize {
        self.offsets[row + 1] - self.offsets[row]
    }

    #[inline]
    pub fn targets(&self, row: usize) -> &[usize] {
        &self.targets[self.offsets[row]..self.offsets[row + 1]]
    }

    #[inline]
    pub fn edge_ids(&self, row: usize) -> &[usize] {
        &self.edge_ids[self.offsets[row]..self.offsets[row + 1]]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn all_targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn all_edge_ids(&self) -> &[usize] {
        &self.edge_ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_keep_input_order() {
        let entries = vec![(1, 7, 0), (0, 3, 1), (1, 2, 2), (3, 9, 3)];
        let csr = Csr::from_entries(4, entries);
        assert_eq!(csr.targets(0), &[3]);
        assert_eq!(csr.targets(1), &[7, 2]);
        assert_eq!(csr.edge_ids(1), &[0, 2]);
        assert!(csr.targets(2).is_empty());
        assert_eq!(csr.degree(3), 1);
        assert_eq!(csr.nnz(), 4);
    }
}

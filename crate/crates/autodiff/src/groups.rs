/// Weighted row groups in compressed form: group `g` holds the
/// `(row, weight)` entries `entries[offsets[g]..offsets[g + 1]]`.
///
/// Used by [`crate::Tape::aggregate_rows`] for neighbor means, pooling and
/// attention-weighted sums over many small graphs in one op.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowGroups {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl RowGroups {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            entries: Vec::new(),
        }
    }

    /// Appends one group; an empty iterator makes an empty group.
    pub fn push_group(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.entries.extend(entries);
        self.offsets.push(self.entries.len());
    }

    /// Groups of equal-weight members, `1/len` each (a mean per group).
    pub fn means<I, G>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = usize>,
    {
        let mut out = Self::new();
        for g in groups {
            let members: Vec<usize> = g.into_iter().collect();
            let w = 1.0 / members.len().max(1) as f64;
            out.push_group(members.into_iter().map(|m| (m, w)));
        }
        out
    }

    /// Contiguous unit-weight groups covering rows `0..offsets.last()`.
    pub fn contiguous(offsets: &[usize]) -> Self {
        let mut out = Self::new();
        for w in offsets.windows(2) {
            out.push_group((w[0]..w[1]).map(|r| (r, 1.0)));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, g: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[g]..self.offsets[g + 1]]
    }

    pub(crate) fn max_row(&self) -> Option<usize> {
        self.entries.iter().map(|&(r, _)| r).max()
    }
}

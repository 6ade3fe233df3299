use std::ops::Range;

/// Contiguous fragments of the parameter vector and their sync ages.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentPartition {
    pub boundaries: Vec<Range<usize>>,
    /// Rounds since each fragment was last synced.
    pub ages: Vec<u64>,
}

impl FragmentPartition {
    /// `count` near-equal contiguous ranges covering `[0, dim)`; the first
    /// `dim % count` fragments get one extra element.
    pub fn even(dim: usize, count: usize) -> Self {
        assert!(count >= 1 && count <= dim.max(1), "fragment count out of range");
        let base = dim / count;
        let extra = dim % count;
        let mut start = 0;
        let boundaries = (0..count)
            .map(|f| {
                let len = base + usize::from(f < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Self {
            boundaries,
            ages: vec![0; count],
        }
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Oldest-first selection of `budget` fragments, ties broken by lower id.
    /// Returned ids are ascending.
    pub fn select(&self, budget: usize) -> Vec<usize> {
        let budget = budget.clamp(1, self.len());
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.ages[b].cmp(&self.ages[a]).then(a.cmp(&b)));
        let mut chosen = order[..budget].to_vec();
        chosen.sort_unstable();
        chosen
    }

    /// Selected fragments reset to age 0; the rest age by one round.
    pub fn advance(&mut self, selected: &[usize]) {
        for (f, age) in self.ages.iter_mut().enumerate() {
            if selected.contains(&f) {
                *age = 0;
            } else {
                *age += 1;
            }
        }
    }
}

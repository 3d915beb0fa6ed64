use rand::Rng;

use crate::graphstore::InteractionGraph;

const MAX_REJECTIONS: usize = 100;

/// `(user, positive item, negative item)`
pub type BprTriple = (usize, usize, usize);

/// Draws BPR triples: a user with at least one training item and at least
/// one non-interacted item, a positive uniform over the user's items and a
/// negative uniform over the rest.
#[derive(Debug, Clone)]
pub struct BprSampler<'a> {
    train: &'a InteractionGraph,
    eligible: Vec<usize>,
    /// Users left out because they interacted with every item.
    pub skipped_full_users: usize,
}

impl<'a> BprSampler<'a> {
    pub fn new(train: &'a InteractionGraph) -> Self {
        let n = train.num_items();
        let mut skipped = 0;
        let eligible = (0..train.num_users())
            .filter(|&u| {
                let d = train.user_degree(u);
                if d == n && d > 0 {
                    skipped += 1;
                }
                d > 0 && d < n
            })
            .collect();
        BprSampler {
            train,
            eligible,
            skipped_full_users: skipped,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<BprTriple> {
        if self.eligible.is_empty() {
            return Vec::new();
        }
        (0..batch_size)
            .map(|_| {
                let u = self.eligible[rng.gen_range(0..self.eligible.len())];
                let items = self.train.items_of(u);
                let v = items[rng.gen_range(0..items.len())];
                (u, v, self.negative(u, rng))
            })
            .collect()
    }

    fn negative<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> usize {
        let n = self.train.num_items();
        for _ in 0..MAX_REJECTIONS {
            let j = rng.gen_range(0..n);
            if !self.train.contains(u, j) {
                return j;
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| !self.train.contains(u, j)).collect();
        free[rng.gen_range(0..free.len())]
    }
}

pub fn sample_bpr_batch<R: Rng + ?Sized>(train: &InteractionGraph, batch_size: usize, rng: &mut R) -> (Vec<BprTriple>, usize) {
    let s = BprSampler::new(train);
    (s.sample(batch_size, rng), s.skipped_full_users)
}

//! Bagged CART trees with Gini splits.

use rand::SeedableRng;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClassifierParams, ClassifyError, Dataset2D, ModelKind, Standardizer, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
                Node::Leaf { counts } => return (counts[1] > counts[0]) as u8,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn vote_fraction(&self, row: &[f64]) -> f64 {
        let votes: usize = self.trees.iter().map(|t| t.predict(row) as usize).sum();
        votes as f64 / self.trees.len() as f64
    }
}

struct Builder<'a> {
    data: &'a Dataset2D,
    n_candidates: usize,
    max_depth: Option<usize>,
    nodes: Vec<Node>,
}

fn gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (c0 / n, c1 / n);
    1.0 - p0 * p0 - p1 * p1
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; 2] {
        let pos = idx.iter().filter(|&&i| self.data.y[i] == 1).count() as u32;
        [idx.len() as u32 - pos, pos]
    }

    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let m = self.data.x.cols();
        let mut best: Option<(f64, usize, f64)> = None;
        let total = self.counts(idx);
        let n = idx.len() as f64;
        for feature in sample(rng, m, self.n_candidates).into_iter() {
            let mut order: Vec<(f64, u8)> = idx.iter().map(|&i| (self.data.x.row(i)[feature], self.data.y[i])).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut l0, mut l1) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                if order[k].1 == 1 {
                    l1 += 1.0;
                } else {
                    l0 += 1.0;
                }
                if order[k].0 == order[k + 1].0 {
                    continue;
                }
                let (r0, r1) = (total[0] as f64 - l0, total[1] as f64 - l1);
                let score = ((l0 + l1) * gini(l0, l1) + (r0 + r1) * gini(r0, r1)) / n;
                if best.is_none_or(|(s, _, _)| score < s) {
                    let threshold = order[k].0 + (order[k + 1].0 - order[k].0) / 2.0;
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || idx.len() < 2 || self.max_depth.is_some_and(|d| depth >= d) {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx, rng) else {
            return at;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.data.x.row(i)[feature] <= threshold);
        let left = self.grow(li, depth + 1, rng);
        let right = self.grow(ri, depth + 1, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

fn fit_tree(data: &Dataset2D, max_depth: Option<usize>, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let m = data.x.cols();
    let mut builder = Builder {
        data,
        n_candidates: ((m as f64).sqrt().ceil() as usize).clamp(1, m.max(1)),
        max_depth,
        nodes: Vec::new(),
    };
    if m == 0 {
        let counts = builder.counts(&boot);
        return Tree { nodes: vec![Node::Leaf { counts }] };
    }
    builder.grow(boot, 0, &mut rng);
    Tree { nodes: builder.nodes }
}

/// Trees are fitted in parallel; tree `t` uses seed `seed + t`, so the result
/// does not depend on the thread count.
pub fn rf_fit(
    data: &Dataset2D,
    n_estimators: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> Result<TrainedModel, ClassifyError> {
    if n_estimators == 0 {
        return Err(ClassifyError::BadParameter("n_estimators must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(ClassifyError::Empty);
    }
    if !data.x.is_finite() {
        return Err(ClassifyError::NonFinite);
    }
    let trees = (0..n_estimators)
        .into_par_iter()
        .map(|t| fit_tree(data, max_depth, seed.wrapping_add(t as u64)))
        .collect();
    Ok(TrainedModel {
        params: ClassifierParams::Rf { n_estimators, max_depth },
        seed,
        standardizer: Standardizer::identity(data.x.cols()),
        kind: ModelKind::Rf(Forest { trees }),
    })
}

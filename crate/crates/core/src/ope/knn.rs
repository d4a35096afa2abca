//! k-nearest-neighbor behavior policy with Laplace smoothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TupleDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
    pub alpha: f64,
    /// Switch to a random-projection forest when the reference set holds more
    /// than this many states. Exact search when `None`.
    pub approximate_above: Option<usize>,
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 50,
            alpha: 1.0,
            approximate_above: None,
            n_trees: 8,
            leaf_size: 128,
            seed: 0,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("ope.knn.k must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("ope.knn.alpha must be nonnegative".into()));
        }
        if self.n_trees == 0 || self.leaf_size < 2 * self.k {
            return Err(Error::Config(format!(
                "ope.knn needs n_trees >= 1 and leaf_size >= 2k ({})",
                2 * self.k
            )));
        }
        Ok(())
    }
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            let d = f64::from(x[j]) - f64::from(y[j]);
            acc[j] += d * d;
        }
    }
    let tail: f64 = ra
        .iter()
        .zip(rb)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<u32>),
    Split {
        direction: Vec<f32>,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn project(x: &[f32], dir: &[f32]) -> f64 {
    x.iter()
        .zip(dir)
        .map(|(a, b)| f64::from(*a) * f64::from(*b))
        .sum()
}

/// Reference states stored row-major with their logged actions.
#[derive(Debug, Clone)]
pub struct KnnPolicy {
    dim: usize,
    points: Vec<f32>,
    actions: Vec<u8>,
    config: KnnConfig,
    forest: Option<Vec<Node>>,
}

impl KnnPolicy {
    /// Reference set: every state of the dataset with its logged action.
    pub fn fit(dataset: &TupleDataset, config: &KnnConfig) -> Result<Self> {
        let mut points = Vec::new();
        let mut actions = Vec::new();
        for b in dataset.sessions() {
            points.extend_from_slice(b.states_flat());
            actions.extend_from_slice(b.actions());
        }
        Self::from_points(dataset.dim(), points, actions, config)
    }

    pub fn from_points(
        dim: usize,
        points: Vec<f32>,
        actions: Vec<u8>,
        config: &KnnConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = actions.len();
        if points.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: points.len(),
            });
        }
        if config.k > n {
            return Err(Error::Validation(format!(
                "kNN needs at least k = {} reference states, got {n}",
                config.k
            )));
        }
        let mut policy = Self {
            dim,
            points,
            actions,
            config: config.clone(),
            forest: None,
        };
        if config.approximate_above.is_some_and(|t| n > t) {
            log::info!("kNN: random-projection forest over {n} states");
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let all: Vec<u32> = (0..n as u32).collect();
            let forest = (0..config.n_trees)
                .map(|_| policy.build(all.clone(), &mut rng))
                .collect();
            policy.forest = Some(forest);
        }
        Ok(policy)
    }

    pub fn is_approximate(&self) -> bool {
        self.forest.is_some()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn point(&self, i: u32) -> &[f32] {
        &self.points[i as usize * self.dim..(i as usize + 1) * self.dim]
    }

    fn build(&self, idx: Vec<u32>, rng: &mut ChaCha8Rng) -> Node {
        if idx.len() <= self.config.leaf_size {
            return Node::Leaf(idx);
        }
        let direction: Vec<f32> = (0..self.dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        let mut proj: Vec<(f64, u32)> = idx
            .iter()
            .map(|&i| (project(self.point(i), &direction), i))
            .collect();
        let mid = proj.len() / 2;
        proj.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let threshold = proj[mid].0;
        let right: Vec<u32> = proj[mid..].iter().map(|p| p.1).collect();
        let left: Vec<u32> = proj[..mid].iter().map(|p| p.1).collect();
        Node::Split {
            direction,
            threshold,
            left: Box::new(self.build(left, rng)),
            right: Box::new(self.build(right, rng)),
        }
    }

    fn leaf<'a>(node: &'a Node, q: &[f32]) -> &'a [u32] {
        match node {
            Node::Leaf(ids) => ids,
            Node::Split {
                direction,
                threshold,
                left,
                right,
            } => {
                if project(q, direction) < *threshold {
                    Self::leaf(left, q)
                } else {
                    Self::leaf(right, q)
                }
            }
        }
    }

    /// Indices of the `k` nearest reference states; ties broken by index.
    pub fn neighbors(&self, q: &[f32]) -> Vec<u32> {
        let k = self.config.k;
        let mut cand: Vec<(f64, u32)> = match &self.forest {
            None => (0..self.len() as u32)
                .map(|i| (sq_dist(q, self.point(i)), i))
                .collect(),
            Some(forest) => {
                let mut ids: Vec<u32> = forest
                    .iter()
                    .flat_map(|t| Self::leaf(t, q).iter().copied())
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                ids.into_iter()
                    .map(|i| (sq_dist(q, self.point(i)), i))
                    .collect()
            }
        };
        let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if cand.len() > k {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        cand.into_iter().map(|c| c.1).collect()
    }

    /// `(count_a + alpha) / (k + 2 alpha)` over the neighbors.
    pub fn probs(&self, q: &[f32]) -> [f64; 2] {
        let nb = self.neighbors(q);
        let ones = nb
            .iter()
            .filter(|&&i| self.actions[i as usize] == 1)
            .count() as f64;
        let k = nb.len() as f64;
        let a = self.config.alpha;
        let p1 = (ones + a) / (k + 2.0 * a);
        [(k - ones + a) / (k + 2.0 * a), p1]
    }

    pub fn probs_batch(&self, qs: &[&[f32]]) -> Vec<[f64; 2]> {
        qs.par_iter().map(|q| self.probs(q)).collect()
    }
}

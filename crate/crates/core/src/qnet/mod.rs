//! Fully connected ReLU Q-network (default 209-100-25-2), smooth-L1 loss,
//! hand-written backpropagation and Adam.

mod adam;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::summary::STATE_DIM;

pub use adam::{Adam, AdamConfig};

pub const N_ACTIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QNetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Global gradient-norm clip; off when `None`.
    pub max_grad_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self {
            input_dim: STATE_DIM,
            hidden: vec![100, 25],
            learning_rate: 1e-4,
            max_grad_norm: None,
            adam: AdamConfig::default(),
        }
    }
}

impl QNetConfig {
    pub fn architecture(&self) -> Vec<usize> {
        let mut a = vec![self.input_dim];
        a.extend(&self.hidden);
        a.push(N_ACTIONS);
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("qnet: layer sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "qnet.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "qnet.max_grad_norm must be positive, got {c}"
                )));
            }
        }
        self.adam.validate()
    }
}

/// Dense layer; `weights` is `n_out x n_in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.n_in..(j + 1) * self.n_in]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.n_out).map(|j| dot(self.row(j), x) + self.biases[j]));
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Network parameters. The same structure holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub layers: Vec<Layer>,
}

pub type Gradients = QParams;

/// Smooth-L1 (Huber, delta 1).
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// One regression sample: push `Q(s, a)` towards `target`.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub state: &'a [f32],
    pub action: u8,
    pub target: f64,
}

impl QParams {
    /// He-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(architecture: &[usize], seed: u64) -> Self {
        assert!(architecture.len() >= 2, "need input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = architecture
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / n_in as f64).sqrt();
                let mut l = Layer::zeros(n_in, n_out);
                for v in &mut l.weights {
                    *v = rng.random_range(-limit..limit);
                }
                l
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    pub fn architecture(&self) -> Vec<usize> {
        let mut a = vec![self.layers[0].n_in];
        a.extend(self.layers.iter().map(|l| l.n_out));
        a
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn get(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.weights.len() {
                return l.weights[i];
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                return l.biases[i];
            }
            i -= l.biases.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: f64) {
        for l in &mut self.layers {
            if i < l.weights.len() {
                l.weights[i] = v;
                return;
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                l.biases[i] = v;
                return;
            }
            i -= l.biases.len();
        }
        panic!("parameter index out of range")
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        for a in self.iter_mut() {
            *a *= s;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let mut h = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&h, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut h, &mut next);
        }
        h
    }

    /// Q-values of a stored 32-bit state.
    pub fn q_values(&self, x: &[f32]) -> [f64; N_ACTIONS] {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let q = self.forward(&x);
        [q[0], q[1]]
    }

    pub fn forward_batch(&self, xs: &[&[f32]]) -> Vec<[f64; N_ACTIONS]> {
        xs.par_iter().map(|x| self.q_values(x)).collect()
    }

    /// Mean smooth-L1 loss over the batch and its gradient. Only the chosen
    /// action's output receives error signal. Chunks are reduced in a fixed
    /// order so the result does not depend on the thread count.
    pub fn loss_and_grad(&self, batch: &[Sample<'_>]) -> (f64, Gradients) {
        const CHUNK: usize = 64;
        let n = batch.len().max(1) as f64;
        let parts: Vec<(f64, Gradients)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = self.zeros_like();
                let mut loss = 0.0;
                let mut scratch = Scratch::default();
                for s in chunk {
                    loss += self.accumulate(s, &mut g, &mut scratch);
                }
                (loss, g)
            })
            .collect();
        let mut total = self.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.add_assign(g);
        }
        total.scale(1.0 / n);
        (loss / n, total)
    }

    /// Mean loss only.
    pub fn loss(&self, batch: &[Sample<'_>]) -> f64 {
        let n = batch.len().max(1) as f64;
        batch
            .iter()
            .map(|s| smooth_l1(self.q_values(s.state)[s.action as usize] - s.target))
            .sum::<f64>()
            / n
    }

    /// Adds one sample's (unnormalized) gradient to `g`; returns its loss.
    fn accumulate(&self, s: &Sample<'_>, g: &mut Gradients, sc: &mut Scratch) -> f64 {
        let depth = self.layers.len();
        sc.acts.resize(depth + 1, Vec::new());
        sc.acts[0].clear();
        sc.acts[0].extend(s.state.iter().map(|&v| f64::from(v)));
        for k in 0..depth {
            let (before, after) = sc.acts.split_at_mut(k + 1);
            self.layers[k].apply(&before[k], &mut after[0]);
            if k + 1 < depth {
                after[0].iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let out = &sc.acts[depth];
        let err = out[s.action as usize] - s.target;
        sc.delta.clear();
        sc.delta.resize(out.len(), 0.0);
        sc.delta[s.action as usize] = smooth_l1_grad(err);
        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            let input = &sc.acts[k];
            let gl = &mut g.layers[k];
            for (j, &d) in sc.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gl.biases[j] += d;
                let row = &mut gl.weights[j * layer.n_in..(j + 1) * layer.n_in];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if k == 0 {
                break;
            }
            sc.prev.clear();
            sc.prev.resize(layer.n_in, 0.0);
            for (j, &d) in sc.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in sc.prev.iter_mut().zip(layer.row(j)) {
                    *p += d * w;
                }
            }
            // ReLU mask: the stored activation is positive iff the unit was active
            for (p, &a) in sc.prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            std::mem::swap(&mut sc.delta, &mut sc.prev);
        }
        smooth_l1(err)
    }
}

#[derive(Default)]
struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev: Vec<f64>,
}

/// Network plus optimizer.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub params: QParams,
    pub adam: Adam,
    pub max_grad_norm: Option<f64>,
}

impl QLearner {
    pub fn new(config: &QNetConfig, seed: u64) -> Self {
        let params = QParams::init(&config.architecture(), seed);
        let adam = Adam::new(&params, config.learning_rate, config.adam.clone());
        Self {
            params,
            adam,
            max_grad_norm: config.max_grad_norm,
        }
    }

    /// One Adam step on the batch; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[Sample<'_>]) -> f64 {
        let (loss, mut g) = self.params.loss_and_grad(batch);
        if let Some(c) = self.max_grad_norm {
            g.clip_norm(c);
        }
        self.adam.step(&mut self.params, &g);
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> QParams {
        // 2-2-2-2 network with hand-picked weights
        let l = |w: [f64; 4], b: [f64; 2]| Layer {
            n_in: 2,
            n_out: 2,
            weights: w.to_vec(),
            biases: b.to_vec(),
        };
        QParams {
            layers: vec![
                l([1.0, -1.0, 0.5, 2.0], [0.0, -1.0]),
                l([1.0, 1.0, -1.0, 0.5], [0.5, 0.0]),
                l([2.0, -1.0, 0.0, 1.0], [0.0, 1.0]),
            ],
        }
    }

    #[test]
    fn hand_computed_forward() {
        // x = (1, 2): z1 = (1-2, 0.5+4-1) = (-1, 3.5) -> h1 = (0, 3.5)
        // z2 = (0+3.5+0.5, 0+1.75) = (4, 1.75) -> h2 = (4, 1.75)
        // q = (8-1.75, 1.75+1) = (6.25, 2.75)
        assert_eq!(tiny().forward(&[1.0, 2.0]), vec![6.25, 2.75]);
    }

    #[test]
    fn zero_params_give_zero() {
        let p = QParams::init(&[209, 100, 25, 2], 1).zeros_like();
        assert_eq!(p.forward(&[0.3; 209]), vec![0.0, 0.0]);
    }

    #[test]
    fn init_is_seeded_he_uniform() {
        let a = QParams::init(&[209, 100, 25, 2], 7);
        assert_eq!(a, QParams::init(&[209, 100, 25, 2], 7));
        assert_ne!(a, QParams::init(&[209, 100, 25, 2], 8));
        assert_eq!(a.n_params(), 209 * 100 + 100 + 100 * 25 + 25 + 25 * 2 + 2);
        for l in &a.layers {
            let lim = (6.0 / l.n_in as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= lim));
            assert!(l.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn batched_matches_single() {
        let p = QParams::init(&[5, 4, 3, 2], 3);
        let rows: Vec<Vec<f32>> = (0..10)
            .map(|i| (0..5).map(|j| (i * 5 + j) as f32 * 0.1 - 2.0).collect())
            .collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let batched = p.forward_batch(&refs);
        for (r, q) in rows.iter().zip(batched) {
            assert_eq!(q, p.q_values(r));
        }
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(1.0), 0.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1_grad(1.0), 1.0);
        assert_eq!(smooth_l1_grad(-1.0), -1.0);
        assert_eq!(smooth_l1_grad(3.0), 1.0);
        assert_eq!(smooth_l1_grad(0.25), 0.25);
    }

    #[test]
    fn gradient_only_through_chosen_action() {
        let p = QParams::init(&[4, 3, 2], 5);
        let x = [0.5f32, -1.0, 2.0, 0.1];
        let (_, g) = p.loss_and_grad(&[Sample {
            state: &x,
            action: 1,
            target: 10.0,
        }]);
        let out = g.layers.last().unwrap();
        assert!(out.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(out.biases[0], 0.0);
        assert_ne!(out.biases[1], 0.0);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let p = QParams::init(&[6, 5, 4, 2], 9);
        let xs: Vec<[f32; 6]> = (0..7).map(|i| [i as f32 * 0.3 - 1.0; 6]).collect();
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample {
                state: x,
                action: (i % 2) as u8,
                target: i as f64 * 0.4 - 1.0,
            })
            .collect();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = p.loss_and_grad(&batch);
        let (l2, g2) = p.loss_and_grad(&doubled);
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn finite_differences_small_net() {
        let p = QParams::init(&[5, 6, 4, 2], 21);
        let xs: Vec<[f32; 5]> = (0..6)
            .map(|i| [(i as f32 - 2.5) * 0.7, 0.4, -0.2 * i as f32, 1.0, 0.05])
            .collect();
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample {
                state: x,
                action: (i % 2) as u8,
                target: [-3.0, 0.2, 0.6, 2.5, -0.1, 0.0][i],
            })
            .collect();
        let (_, g) = p.loss_and_grad(&batch);
        let h = 1e-5;
        for i in 0..p.n_params() {
            let mut q = p.clone();
            let v = p.get(i);
            q.set(i, v + h);
            let up = q.loss(&batch);
            q.set(i, v - h);
            let down = q.loss(&batch);
            let num = (up - down) / (2.0 * h);
            let ana = g.get(i);
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-7);
            assert!(rel < 1e-4, "param {i}: analytic {ana} numeric {num}");
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = QParams::init(&[4, 3, 2], 1);
        g.clip_norm(0.5);
        assert!((g.norm() - 0.5).abs() < 1e-12);
    }
}

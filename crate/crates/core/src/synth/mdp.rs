//! Tabular MDPs with exact solutions.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Action, DatasetBuilder, SessionBlock, TupleDataset};
use crate::engagement::Participant;
use crate::error::{Error, Result};

/// Finite MDP; `p[(s * n_actions + a) * n_states + s']`, `r[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    /// Start-state distribution.
    pub d0: Vec<f64>,
}

/// `Q*` with the final sup-norm Bellman residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleQ {
    pub q: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
}

impl OracleQ {
    pub fn values(&self) -> Vec<f64> {
        self.q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Deterministic greedy policy (ties to the lowest action) as a
    /// stochastic policy table.
    pub fn greedy_policy(&self) -> Vec<Vec<f64>> {
        self.q
            .iter()
            .map(|row| {
                let best = (0..row.len()).fold(0, |b, a| if row[a] > row[b] { a } else { b });
                (0..row.len())
                    .map(|a| f64::from(u8::from(a == best)))
                    .collect()
            })
            .collect()
    }
}

/// Observed `(s, a, r)` steps of a simulated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTrajectory {
    pub states: Vec<usize>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        gamma: f64,
        d0: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            n_states,
            n_actions,
            p,
            r,
            gamma,
            d0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0
            || a == 0
            || self.p.len() != s * a * s
            || self.r.len() != s * a
            || self.d0.len() != s
        {
            return Err(Error::Validation(
                "tabular MDP: inconsistent table sizes".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        for row in self.p.chunks(s) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(
                    "transition rows must be distributions".into(),
                ));
            }
        }
        if self.r.iter().any(|r| !r.is_finite()) {
            return Err(Error::Validation("rewards must be finite".into()));
        }
        let d: f64 = self.d0.iter().sum();
        if self.d0.iter().any(|&x| x < 0.0) || (d - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("start distribution must sum to 1".into()));
        }
        Ok(())
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    fn backup(&self, v: &[f64], s: usize, a: usize) -> f64 {
        let row = &self.p[(s * self.n_actions + a) * self.n_states..][..self.n_states];
        self.r(s, a) + self.gamma * row.iter().zip(v).map(|(p, v)| p * v).sum::<f64>()
    }

    /// Iterates the Bellman optimality operator until the sup-norm change is
    /// at most `tol`.
    pub fn value_iteration(&self, tol: f64, max_iter: usize) -> Result<OracleQ> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut q = vec![vec![0.0; na]; ns];
        let mut residual = f64::INFINITY;
        for it in 1..=max_iter {
            let v: Vec<f64> = q
                .iter()
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let next: Vec<Vec<f64>> = (0..ns)
                .map(|s| (0..na).map(|a| self.backup(&v, s, a)).collect())
                .collect();
            residual = q
                .iter()
                .flatten()
                .zip(next.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            q = next;
            if residual <= tol {
                return Ok(OracleQ {
                    q,
                    residual,
                    iterations: it,
                });
            }
        }
        Err(Error::NotConverged {
            iterations: max_iter,
            residual,
        })
    }

    /// Solves `(I - gamma P_pi) V = r_pi`; `policy[s][a]` is `pi(a | s)`.
    pub fn exact_policy_value(&self, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
        let ns = self.n_states;
        if policy.len() != ns || policy.iter().any(|p| p.len() != self.n_actions) {
            return Err(Error::Validation("policy table has the wrong shape".into()));
        }
        let mut m = DMatrix::<f64>::identity(ns, ns);
        let mut rhs = DVector::<f64>::zeros(ns);
        for s in 0..ns {
            for (a, &pa) in policy[s].iter().enumerate() {
                rhs[s] += pa * self.r(s, a);
                for s2 in 0..ns {
                    m[(s, s2)] -= self.gamma * pa * self.p(s, a, s2);
                }
            }
        }
        let v = m.lu().solve(&rhs).ok_or(Error::Singular)?;
        Ok(v.iter().copied().collect())
    }

    /// Expected discounted return from the start distribution.
    pub fn start_value(&self, policy: &[Vec<f64>]) -> Result<f64> {
        let v = self.exact_policy_value(policy)?;
        Ok(self.d0.iter().zip(&v).map(|(d, v)| d * v).sum())
    }

    /// One episode of `steps` steps under `policy`, starting from `d0`.
    pub fn simulate(
        &self,
        policy: &[Vec<f64>],
        steps: usize,
        rng: &mut impl Rng,
    ) -> TabularTrajectory {
        let start = WeightedIndex::new(&self.d0).expect("valid start distribution");
        let pol: Vec<WeightedIndex<f64>> = policy
            .iter()
            .map(|p| WeightedIndex::new(p).expect("valid policy row"))
            .collect();
        let trans: Vec<WeightedIndex<f64>> = self
            .p
            .chunks(self.n_states)
            .map(|row| WeightedIndex::new(row).expect("valid transition row"))
            .collect();
        let mut s = start.sample(rng);
        let mut out = TabularTrajectory {
            states: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
        };
        for _ in 0..steps {
            let a = pol[s].sample(rng);
            out.states.push(s);
            out.actions.push(a as u8);
            out.rewards.push(self.r(s, a));
            s = trans[s * self.n_actions + a].sample(rng);
        }
        out
    }

    /// Stationary distribution of the chain induced by `policy` (power
    /// iteration; assumes an ergodic chain).
    pub fn stationary(&self, policy: &[Vec<f64>]) -> Vec<f64> {
        let ns = self.n_states;
        let mut d = vec![1.0 / ns as f64; ns];
        for _ in 0..100_000 {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for (a, &pa) in policy[s].iter().enumerate() {
                    for (s2, n) in next.iter_mut().enumerate() {
                        *n += d[s] * pa * self.p(s, a, s2);
                    }
                }
            }
            let diff: f64 = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum();
            d = next;
            if diff < 1e-15 {
                break;
            }
        }
        d
    }
}

impl TabularMdp {
    /// Exhaustive batch over one-hot states: every `(s, a, s')` with
    /// `p > 0` appears `round(p * copies)` times as a two-state session, so
    /// sample frequencies reproduce the dynamics. Rewards must be
    /// nonnegative.
    pub fn transition_batch(&self, copies: usize) -> Result<TupleDataset> {
        let ns = self.n_states;
        let one_hot = |s: usize| (0..ns).map(move |j| f32::from(u8::from(j == s)));
        let mut b = DatasetBuilder::new(ns, "tabular");
        for s in 0..ns {
            for a in 0..self.n_actions {
                for s2 in 0..ns {
                    let n = (self.p(s, a, s2) * copies as f64).round() as usize;
                    for c in 0..n {
                        let states = one_hot(s).chain(one_hot(s2)).collect();
                        b.push_block(SessionBlock::new(
                            format!("s{s}a{a}n{s2}c{c}"),
                            "tabular".into(),
                            Participant::A,
                            0,
                            ns,
                            states,
                            vec![a as Action, 0],
                            vec![0.0, self.r(s, a)],
                        )?)?;
                    }
                }
            }
        }
        Ok(b.build())
    }
}

/// 3-state chain with discount 0.9 for fast convergence tests. Action 1 moves
/// right (slips with probability 0.1), action 0 moves left; acting in the
/// right end pays 1 for action 1 and 0.5 for action 0, the middle pays 0.1.
pub fn tiny_chain() -> TabularMdp {
    let (ns, na) = (3, 2);
    let mut p = vec![0.0; ns * na * ns];
    let mut set = |s: usize, a: usize, s2: usize, v: f64| p[(s * na + a) * ns + s2] += v;
    for s in 0..ns {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(ns - 1);
        set(s, 0, left, 0.9);
        set(s, 0, s, 0.1);
        set(s, 1, right, 0.9);
        set(s, 1, s, 0.1);
    }
    let r = vec![0.0, 0.0, 0.1, 0.1, 0.5, 1.0];
    TabularMdp::new(ns, na, p, r, 0.9, vec![1.0 / 3.0; 3]).expect("valid tiny chain")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two states, deterministic: action 0 stays, action 1 switches.
    /// Staying in state 1 pays 1, everything else 0.
    fn two_state(gamma: f64) -> TabularMdp {
        let p = vec![
            1.0, 0.0, // s0 a0 -> s0
            0.0, 1.0, // s0 a1 -> s1
            0.0, 1.0, // s1 a0 -> s1
            1.0, 0.0, // s1 a1 -> s0
        ];
        TabularMdp::new(2, 2, p, vec![0.0, 0.0, 1.0, 0.0], gamma, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn closed_form_two_state() {
        let g = 0.8;
        let q = two_state(g).value_iteration(1e-12, 10_000).unwrap();
        let v1 = 1.0 / (1.0 - g);
        // V(s1) = v1, V(s0) = g v1
        let expected = [[g * g * v1, g * v1], [v1, g * g * v1]];
        for s in 0..2 {
            for a in 0..2 {
                assert!((q.q[s][a] - expected[s][a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_discount_is_immediate_reward() {
        let mut m = tiny_chain();
        m.gamma = 0.0;
        let q = m.value_iteration(1e-10, 100).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(q.q[s][a], m.r(s, a));
            }
        }
    }

    #[test]
    fn bellman_optimality_by_substitution() {
        let m = tiny_chain();
        let q = m.value_iteration(1e-10, 10_000).unwrap();
        let v = q.values();
        for s in 0..3 {
            for a in 0..2 {
                assert!((q.q[s][a] - m.backup(&v, s, a)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn greedy_attains_optimal_value() {
        let m = tiny_chain();
        let q = m.value_iteration(1e-12, 10_000).unwrap();
        let v = m.exact_policy_value(&q.greedy_policy()).unwrap();
        for (a, b) in v.iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_mdp_has_equal_values() {
        // two mirrored states with identical rewards under the uniform policy
        let p = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let m = TabularMdp::new(2, 2, p, vec![1.0, 0.0, 1.0, 0.0], 0.9, vec![0.5, 0.5]).unwrap();
        let v = m
            .exact_policy_value(&[vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap();
        assert!((v[0] - v[1]).abs() < 1e-12);
        assert!((v[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let m = tiny_chain();
        assert!(matches!(
            m.value_iteration(1e-10, 3),
            Err(Error::NotConverged { iterations: 3, .. })
        ));
    }

    #[test]
    fn simulation_is_seeded() {
        let m = tiny_chain();
        let pol = vec![vec![0.5, 0.5]; 3];
        let a = m.simulate(&pol, 50, &mut ChaCha8Rng::seed_from_u64(4));
        let b = m.simulate(&pol, 50, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 50);
    }
}

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{BaseKind, Node, SchemeGrids};

/// A smooth member of the scale-time family, defined for every `r ∈ [0, 1]`:
///
/// `t_r = r + Σ a_k sin(kπr)/(kπ)` with `Σ|a_k| < 1`, so `ṫ_r > 0`, and
/// `s_r = exp(Σ b_k sin(kπr/2))` with `Σ|b_k| ≤ 0.5`, so `s_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothScaleTime {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SmoothScaleTime {
    pub fn identity() -> Self {
        Self { a: Vec::new(), b: Vec::new() }
    }

    /// Random member with `terms` Fourier modes per component.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, terms: usize) -> Self {
        let mut a: Vec<f64> = (1..=terms).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect();
        let mut b: Vec<f64> = (1..=terms).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect();
        let a_budget = rng.random_range(0.2..0.8);
        let b_budget = rng.random_range(0.1..0.5);
        rescale_l1(&mut a, a_budget);
        rescale_l1(&mut b, b_budget);
        Self { a, b }
    }

    /// The `count` members drawn in order from a ChaCha8 stream seeded with `seed`.
    pub fn sample_seeded(seed: u64, count: usize, terms: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| Self::sample(&mut rng, terms)).collect()
    }

    pub fn node(&self, r: f64) -> Node {
        let mut t = r;
        let mut dt = 1.0;
        for (k, a) in self.a.iter().enumerate() {
            let w = (k + 1) as f64 * PI;
            t += a * (w * r).sin() / w;
            dt += a * (w * r).cos();
        }
        let mut log_s = 0.0;
        let mut dlog_s = 0.0;
        for (k, b) in self.b.iter().enumerate() {
            let w = (k + 1) as f64 * PI / 2.0;
            log_s += b * (w * r).sin();
            dlog_s += b * w * (w * r).cos();
        }
        let s = log_s.exp();
        Node { t, dt, s, ds: s * dlog_s }
    }

    /// Discretize on the slot grid of a `kind` scheme with `n` steps.
    pub fn grids(&self, kind: BaseKind, n: usize) -> Result<SchemeGrids> {
        let m = n * kind.slots_per_step();
        let nodes: Vec<Node> = (0..=m).map(|k| self.node(k as f64 / m as f64)).collect();
        let mut t: Vec<f64> = nodes.iter().map(|nd| nd.t).collect();
        t[0] = 0.0;
        t[m] = 1.0;
        let mut s: Vec<f64> = nodes.iter().map(|nd| nd.s).collect();
        s[0] = 1.0;
        SchemeGrids::new(
            kind,
            n,
            t,
            nodes[..m].iter().map(|nd| nd.dt).collect(),
            s,
            nodes[..m].iter().map(|nd| nd.ds).collect(),
        )
    }
}

fn rescale_l1(v: &mut [f64], budget: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 > 0.0 {
        for x in v.iter_mut() {
            *x *= budget / l1;
        }
    }
}

//! The index set `𝓘 = {k + jϑ}` and the Taylor terms `(k, γ, β)` with
//! anisotropic weight `ϑk + (1+ϑ)|γ| + |β|` below a cutoff.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;

use crate::group::Anisotropy;

/// Relative tolerance used for weight comparisons and deduplication.
pub const WEIGHT_TOL: f64 = 1e-12;

/// `true` when `w < alpha` by more than the comparison tolerance.
pub fn strictly_below(w: f64, alpha: f64) -> bool {
    w < alpha - WEIGHT_TOL * alpha.abs().max(1.0)
}

fn same_weight(a: f64, b: f64) -> bool {
    (a - b).abs() <= WEIGHT_TOL * a.abs().max(b.abs()).max(1.0)
}

/// All values `k + jϑ < cutoff`, ascending and deduplicated.
pub fn index_set(a: &Anisotropy, cutoff: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0.0;
    while strictly_below(k, cutoff) {
        let mut j = 0.0;
        loop {
            let value = k + j * a.theta;
            if !strictly_below(value, cutoff) {
                break;
            }
            out.push(value);
            j += 1.0;
        }
        k += 1.0;
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| same_weight(*a, *b));
    out
}

/// One term `Y^k ∂_v^β ∂_x^γ u(z_0)` of the intrinsic Taylor polynomial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermIndex {
    pub k: u32,
    pub gamma: Vec<u32>,
    pub beta: Vec<u32>,
    pub weight: f64,
}

impl TermIndex {
    pub fn new(k: u32, gamma: Vec<u32>, beta: Vec<u32>, a: &Anisotropy) -> Self {
        let weight = weight_of(k, &gamma, &beta, a.theta);
        TermIndex { k, gamma, beta, weight }
    }

    /// A term without an associated anisotropy; its `weight` is NaN.
    pub fn raw(k: u32, gamma: Vec<u32>, beta: Vec<u32>) -> Self {
        TermIndex {
            k,
            gamma,
            beta,
            weight: f64::NAN,
        }
    }

    pub fn gamma_len(&self) -> u32 {
        self.gamma.iter().sum()
    }

    pub fn beta_len(&self) -> u32 {
        self.beta.iter().sum()
    }

    /// `k! γ! β!`
    pub fn factorial(&self) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        f(self.k) * self.gamma.iter().map(|&g| f(g)).product::<f64>() * self.beta.iter().map(|&b| f(b)).product::<f64>()
    }
}

impl fmt::Display for TermIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(k={}, gamma={:?}, beta={:?})", self.k, self.gamma, self.beta)
    }
}

pub fn weight_of(k: u32, gamma: &[u32], beta: &[u32], theta: f64) -> f64 {
    let g: u32 = gamma.iter().sum();
    let b: u32 = beta.iter().sum();
    theta * f64::from(k) + (1.0 + theta) * f64::from(g) + f64::from(b)
}

/// Multi-indices of length `d` with total degree at most `n`, in lexicographic order.
pub fn multi_indices(d: usize, n: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, budget: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == d {
            out.push(prefix.clone());
            return;
        }
        for i in 0..=budget {
            prefix.push(i);
            rec(d, budget - i, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, n, &mut Vec::with_capacity(d), &mut out);
    out
}

/// Every `(k, γ, β)` whose weight is below `alpha`, ordered by weight, then
/// `k`, then `γ` and `β` lexicographically.
pub fn enumerate_terms(a: &Anisotropy, alpha: f64) -> Vec<TermIndex> {
    let theta = a.theta;
    let max_k = (alpha / theta).floor() as u32;
    let max_g = (alpha / (1.0 + theta)).floor() as u32;
    let max_b = alpha.floor() as u32;
    let gammas = multi_indices(a.d, max_g);
    let betas = multi_indices(a.d, max_b);
    let mut out = Vec::new();
    for k in 0..=max_k {
        for gamma in &gammas {
            for beta in &betas {
                let w = weight_of(k, gamma, beta, theta);
                if strictly_below(w, alpha) {
                    out.push(TermIndex {
                        k,
                        gamma: gamma.clone(),
                        beta: beta.clone(),
                        weight: w,
                    });
                }
            }
        }
    }
    out.sort_by(|p, q| {
        let by_weight = if same_weight(p.weight, q.weight) {
            Ordering::Equal
        } else {
            p.weight.total_cmp(&q.weight)
        };
        by_weight
            .then(p.k.cmp(&q.k))
            .then_with(|| p.gamma.cmp(&q.gamma))
            .then_with(|| p.beta.cmp(&q.beta))
    });
    out
}

/// Smallest achievable weight `ϑk + (1+ϑ)j + l` that is not below `alpha`.
pub fn next_weight(a: &Anisotropy, alpha: f64) -> f64 {
    let theta = a.theta;
    let mut best = f64::INFINITY;
    let max_k = (alpha / theta).ceil() as u32 + 1;
    let max_j = (alpha / (1.0 + theta)).ceil() as u32 + 1;
    let max_l = alpha.ceil() as u32 + 1;
    for k in 0..=max_k {
        for j in 0..=max_j {
            for l in 0..=max_l {
                let w = theta * f64::from(k) + (1.0 + theta) * f64::from(j) + f64::from(l);
                if !strictly_below(w, alpha) && w < best {
                    best = w;
                }
            }
        }
    }
    best
}

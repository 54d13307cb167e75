//! Worst-case sample weights over the χ² ball.
//!
//! Solves
//!
//! ```text
//! maximise   Σ pᵢ ℓᵢ
//! subject to p ≥ 0,  Σ pᵢ = 1,  ½‖n·p − 1‖² ≤ ρ
//! ```
//!
//! exactly. On a support `S` of size `s` (all other weights pinned to zero)
//! the ball constraint leaves a free radius
//!
//! ```text
//! R² = 2ρ − n(n − s)/s
//! ```
//!
//! around the uniform point on `S`, and the linear objective is maximised by
//! moving that far along the centred losses:
//!
//! ```text
//! pᵢ = 1/s + R (ℓᵢ − ℓ̄_S) / (n ‖ℓ − ℓ̄_S‖_S),   Σ pᵢℓᵢ = ℓ̄_S + R ‖ℓ − ℓ̄_S‖_S / n
//! ```
//!
//! On the full support this is `mean + √(2ρ·Var/n)`, the variance form of
//! the robust risk. Because the candidate is increasing in `ℓᵢ`, the
//! coordinate that goes negative first is always the smallest loss, so the
//! active-set loop pins samples in ascending loss order and every support it
//! visits is a top-`s` set. Each step is `O(1)` with prefix sums.

use thiserror::Error;

use crate::tensor::reduce_mean_var;

#[derive(Debug, Error, PartialEq)]
pub enum DroError {
    #[error("empty loss vector")]
    Empty,
    #[error("non-finite loss {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("radius rho must be finite and non-negative, got {0}")]
    Radius(f64),
}

/// Output of [`solve_robust_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustWeights {
    pub p: Vec<f64>,
    pub rho: f64,
    /// Indices with `pᵢ > 0`, ascending.
    pub active_support: Vec<usize>,
    /// Whether `½‖n·p − 1‖² = ρ` holds (to rounding).
    pub boundary_flag: bool,
    /// `Σ pᵢ ℓᵢ`.
    pub objective: f64,
    /// Coordinates pinned by the active-set loop before the first feasible
    /// candidate.
    pub pinned: usize,
}

impl RobustWeights {
    /// `½‖n·p − 1‖²`.
    pub fn divergence(&self) -> f64 {
        chi_square_divergence(&self.p)
    }
}

/// `½‖n·p − 1‖²` for a weight vector of length `n`.
pub fn chi_square_divergence(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    0.5 * p.iter().map(|&q| (n * q - 1.0).powi(2)).sum::<f64>()
}

fn validate(losses: &[f64], rho: f64) -> Result<(), DroError> {
    if losses.is_empty() {
        return Err(DroError::Empty);
    }
    if let Some((index, &value)) = losses.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(DroError::NonFinite { index, value });
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(DroError::Radius(rho));
    }
    Ok(())
}

/// Relative slack used for feasibility decisions inside the scan.
const SLACK: f64 = 1e-12;

/// Exact maximiser of `Σ pᵢℓᵢ` over the χ²-ball ∩ simplex of radius `rho`.
///
/// Constant losses and `rho = 0` return the uniform vector.
pub fn solve_robust_weights(losses: &[f64], rho: f64) -> Result<RobustWeights, DroError> {
    validate(losses, rho)?;
    let n = losses.len();
    let nf = n as f64;

    // Worst first; ties to the lower index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));

    // Centre once so the prefix sums of squares do not cancel badly.
    let (mean, _) = reduce_mean_var(losses).expect("non-empty");
    let centred: Vec<f64> = order.iter().map(|&i| losses[i] - mean).collect();
    let mut prefix = Vec::with_capacity(n + 1);
    let mut prefix_sq = Vec::with_capacity(n + 1);
    let (mut s1, mut s2) = (0.0, 0.0);
    prefix.push(0.0);
    prefix_sq.push(0.0);
    for &v in &centred {
        s1 += v;
        s2 += v * v;
        prefix.push(s1);
        prefix_sq.push(s2);
    }
    let scale = centred.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);

    // Scan supports top-n, top-(n−1), … The loop pins the smallest remaining
    // loss while the candidate has a negative weight; every feasible support
    // it passes is a valid point, and the best of them is the optimum.
    let mut best: Option<(usize, f64)> = None;
    let mut first_feasible: Option<usize> = None;
    for s in (1..=n).rev() {
        let sf = s as f64;
        let r2 = 2.0 * rho - nf * (nf - sf) / sf;
        if r2 < -SLACK * (1.0 + 2.0 * rho) {
            break;
        }
        let radius = r2.max(0.0).sqrt();
        let mean_s = prefix[s] / sf;
        let ss = (prefix_sq[s] - prefix[s] * prefix[s] / sf).max(0.0);
        let spread = ss.sqrt();
        let (feasible, objective) = if spread <= 1e-12 * scale * sf.sqrt() {
            (true, mean_s)
        } else {
            let lowest = 1.0 / sf + radius * (centred[s - 1] - mean_s) / (nf * spread);
            (lowest >= -SLACK / sf, mean_s + radius * spread / nf)
        };
        if feasible {
            first_feasible.get_or_insert(s);
            if best.is_none_or(|(_, b)| objective > b) {
                best = Some((s, objective));
            }
        }
    }
    let (support, _) = best.expect("the full support is feasible for every rho >= 0");
    let p = weights_on_support(losses, &order[..support], rho);

    let objective = p.iter().zip(losses).map(|(p, l)| p * l).sum();
    let mut active_support: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0).collect();
    active_support.sort_unstable();
    let divergence = chi_square_divergence(&p);
    Ok(RobustWeights {
        boundary_flag: (divergence - rho).abs() <= 1e-9 * (1.0 + rho),
        p,
        rho,
        active_support,
        objective,
        pinned: n - first_feasible.unwrap_or(n),
    })
}

/// Closed-form weights on `support`, recomputed with two-pass statistics.
fn weights_on_support(losses: &[f64], support: &[usize], rho: f64) -> Vec<f64> {
    let n = losses.len() as f64;
    let s = support.len() as f64;
    let mut p = vec![0.0; losses.len()];
    let mean_s = support.iter().map(|&i| losses[i]).sum::<f64>() / s;
    let spread = support
        .iter()
        .map(|&i| (losses[i] - mean_s).powi(2))
        .sum::<f64>()
        .sqrt();
    let radius = (2.0 * rho - n * (n - s) / s).max(0.0).sqrt();
    for &i in support {
        let tilt = if spread > 0.0 {
            radius * (losses[i] - mean_s) / (n * spread)
        } else {
            0.0
        };
        let v = 1.0 / s + tilt;
        // Coordinates sitting exactly on the pinning threshold come out as
        // ±1e-17 noise.
        p[i] = if v <= 1e-15 { 0.0 } else { v };
    }
    p
}

/// The robust risk and its mean + variance decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustRisk {
    /// Objective of the exact solver.
    pub value: f64,
    pub mean_term: f64,
    /// `√(2ρ·Var/n)` with the population variance.
    pub variance_term: f64,
}

pub fn robust_risk(losses: &[f64], rho: f64) -> Result<RobustRisk, DroError> {
    let weights = solve_robust_weights(losses, rho)?;
    let (mean, var) = reduce_mean_var(losses).expect("validated non-empty");
    Ok(RobustRisk {
        value: weights.objective,
        mean_term: mean,
        variance_term: (2.0 * rho / losses.len() as f64 * var).sqrt(),
    })
}

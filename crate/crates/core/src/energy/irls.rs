//! Reweighting of the sparsity-inducing norms and the non-negativity penalty.
//! Weights are always evaluated at the previous iterate and held fixed while a
//! Gauss–Newton step is computed.

use super::layers::LayerStack;
use super::weights::EnergyWeights;
use crate::par;

/// `min(|r_old|^(p-2), 1/eps)`; the cap also covers `r_old = 0`.
pub fn lp_weight(magnitude: f64, p: f64, eps: f64) -> f64 {
    let cap = 1.0 / eps;
    if magnitude <= 0.0 {
        return cap;
    }
    magnitude.powf(p - 2.0).min(cap)
}

/// Zero for strictly positive transport, `1 / (|T| + eps)` otherwise.
pub fn nonneg_weight(t: f64, eps: f64) -> f64 {
    if t > 0.0 {
        0.0
    } else {
        1.0 / (t.abs() + eps)
    }
}

/// Raw reweighting factors (not yet multiplied by the term λ).
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsWeights {
    /// One per pixel, from the full reflectance gradient `‖∇r‖₂`.
    pub r_sparsity: Vec<f64>,
    /// `n * K`, indirect layers only.
    pub i_sparsity: Vec<f64>,
    /// `n * (K + 1) * 2`, ordered `(layer, direction)`.
    pub smoothness: Vec<f64>,
    /// `n * (K + 1)`.
    pub non_neg: Vec<f64>,
}

impl IrlsWeights {
    pub fn compute(x: &LayerStack, weights: &EnergyWeights) -> Self {
        let (w, h, k) = (x.width, x.height, x.k);
        let n = w * h;
        let eps = weights.eps_irls;

        let r_sparsity = par::map_indexed(n, |i| {
            let (px, py) = (i % w, i / w);
            let r = x.log_reflectance(i);
            let mut g2 = 0.0;
            if px + 1 < w {
                let rn = x.log_reflectance(i + 1);
                g2 += (0..3).map(|c| (rn[c] - r[c]).powi(2)).sum::<f64>();
            }
            if py + 1 < h {
                let rn = x.log_reflectance(i + w);
                g2 += (0..3).map(|c| (rn[c] - r[c]).powi(2)).sum::<f64>();
            }
            lp_weight(g2.sqrt(), weights.p, eps)
        });

        let mut i_sparsity = vec![0.0; n * k];
        if k > 0 {
            par::for_each_chunk_mut(&mut i_sparsity, k, |i, out| {
                for l in 1..=k {
                    out[l - 1] = lp_weight(x.transport(i, l).abs(), 1.0, eps);
                }
            });
        }

        let mut smoothness = vec![0.0; n * (k + 1) * 2];
        par::for_each_chunk_mut(&mut smoothness, (k + 1) * 2, |i, out| {
            let (px, py) = (i % w, i / w);
            for l in 0..=k {
                let t = x.transport(i, l);
                let dx = if px + 1 < w { x.transport(i + 1, l) - t } else { 0.0 };
                let dy = if py + 1 < h { x.transport(i + w, l) - t } else { 0.0 };
                out[2 * l] = lp_weight(dx.abs(), 1.0, eps);
                out[2 * l + 1] = lp_weight(dy.abs(), 1.0, eps);
            }
        });

        let mut non_neg = vec![0.0; n * (k + 1)];
        par::for_each_chunk_mut(&mut non_neg, k + 1, |i, out| {
            for (l, o) in out.iter_mut().enumerate() {
                *o = nonneg_weight(x.transport(i, l), weights.eps_nonneg);
            }
        });

        IrlsWeights {
            r_sparsity,
            i_sparsity,
            smoothness,
            non_neg,
        }
    }
}

//! Base color refinement terms: the data term re-read with `b_k + Δb_k`, plus
//! the intensity and chromaticity regularizers on `Δb`.

use nalgebra::{DMatrix, DVector};

use super::layers::LayerStack;
use super::terms::{DecompositionProblem, RowScales};
use super::weights::{ChromaRegularizer, EnergyWeights};
use crate::imaging::Rgb;
use crate::par;

/// `[b_0, b_1 + Δb_1, .., b_K + Δb_K]`.
pub fn effective_basis(base: &[Rgb], delta: &[Rgb]) -> Vec<Rgb> {
    assert_eq!(base.len(), delta.len() + 1);
    let mut out = base.to_vec();
    for (b, d) in out[1..].iter_mut().zip(delta) {
        for c in 0..3 {
            b[c] += d[c];
        }
    }
    out
}

/// Linear map applied to `Δb_k` inside the chromaticity regularizer.
pub fn chroma_operator(b: Rgb, mode: ChromaRegularizer) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (c, row) in m.iter_mut().enumerate() {
        row[c] = 1.0;
    }
    if mode == ChromaRegularizer::Printed {
        return m;
    }
    let n2 = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
    if n2 > 0.0 {
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] -= b[r] * b[c] / n2;
            }
        }
    }
    m
}

/// Regularizer residuals, 6 per base color: `sqrt(λ_IR) Δb_k` then
/// `sqrt(λ_CR) P Δb_k`. `base` is `[b_0, .., b_K]`.
pub fn regularizer_residuals(base: &[Rgb], delta: &[Rgb], weights: &EnergyWeights) -> Vec<f64> {
    let si = weights.intensity_reg.sqrt();
    let sc = weights.chroma_reg.sqrt();
    let mut out = Vec::with_capacity(delta.len() * 6);
    for (b, d) in base[1..].iter().zip(delta) {
        out.extend(d.iter().map(|v| si * v));
        let p = chroma_operator(*b, weights.chroma_mode);
        for row in p {
            out.push(sc * (row[0] * d[0] + row[1] * d[1] + row[2] * d[2]));
        }
    }
    out
}

pub fn regularizer_energy(base: &[Rgb], delta: &[Rgb], weights: &EnergyWeights) -> f64 {
    regularizer_residuals(base, delta, weights).iter().map(|v| v * v).sum()
}

/// Normal equations of the dense block at the current point: `N = J_dᵀ J_d`
/// and `g = -J_dᵀ F` over the data and regularizer rows, with unknowns ordered
/// `(k - 1) * 3 + channel`. `problem.basis` must already hold `b + Δb`.
pub fn dense_normal_equations(
    problem: &DecompositionProblem,
    x: &LayerStack,
    scales: &RowScales,
    base: &[Rgb],
    delta: &[Rgb],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = problem.k();
    let m = 3 * k;
    let n = problem.pixel_count();
    let sd2 = scales.data * scales.data;
    let tied = problem.weights.refine_clustering;
    let acc = par::fold_chunks(
        n,
        par::REDUCE_CHUNK,
        || vec![0.0; m * m + m],
        |acc, i| {
            let e = x.reflectance(i);
            let sh = x.illumination(i, &problem.basis);
            let t = x.pixel(i);
            for c in 0..3 {
                let ec = e[c];
                let resid = problem.input[i][c] - ec * sh[c];
                for a in 1..=k {
                    let ta = t[3 + a];
                    if ta == 0.0 {
                        continue;
                    }
                    let row = (a - 1) * 3 + c;
                    acc[m * m + row] += sd2 * ec * ta * resid;
                    for b in 1..=k {
                        let col = (b - 1) * 3 + c;
                        acc[row * m + col] += sd2 * ec * ec * ta * t[3 + b];
                    }
                }
            }
            let id = problem.cluster_ids[i] as usize;
            if tied && id > 0 {
                for c in 0..3 {
                    if let Some(jv) = clustering_derivative(problem, scales, id, c) {
                        let row = (id - 1) * 3 + c;
                        let rho = scales.clustering * (t[c] - problem.cluster_log[i][c]);
                        acc[row * m + row] += jv * jv;
                        acc[m * m + row] -= jv * rho;
                    }
                }
            }
        },
        |total, part| total.iter_mut().zip(part).for_each(|(t, p)| *t += p),
    );
    let mut normal = DMatrix::from_row_slice(m, m, &acc[..m * m]);
    let mut rhs = DVector::from_column_slice(&acc[m * m..]);
    let w = &problem.weights;
    for (kk, (b, d)) in base[1..].iter().zip(delta).enumerate() {
        let p = chroma_operator(*b, w.chroma_mode);
        for r in 0..3 {
            for c in 0..3 {
                // PᵀP
                let mut ptp = 0.0;
                for q in 0..3 {
                    ptp += p[q][r] * p[q][c];
                }
                let reg = w.chroma_reg * ptp + if r == c { w.intensity_reg } else { 0.0 };
                normal[(kk * 3 + r, kk * 3 + c)] += reg;
                rhs[kk * 3 + r] -= reg * d[c];
            }
        }
    }
    (normal, rhs)
}

/// `∂/∂Δb_{id,c}` of the clustering row `s (r_c - ln β_c)`, `None` where the
/// log floor makes it flat.
fn clustering_derivative(problem: &DecompositionProblem, scales: &RowScales, id: usize, c: usize) -> Option<f64> {
    let beta = problem.basis[id][c];
    (beta > crate::imaging::LOG_FLOOR).then(|| -scales.clustering / beta)
}

/// Explicit dense-block Jacobian over all data rows, then all clustering rows,
/// then the 6K regularizer rows, for brute-force checks on small problems.
pub fn dense_jacobian(problem: &DecompositionProblem, x: &LayerStack, scales: &RowScales, base: &[Rgb]) -> DMatrix<f64> {
    let k = problem.k();
    let n = problem.pixel_count();
    let w = &problem.weights;
    let mut j = DMatrix::zeros(6 * n + 6 * k, 3 * k);
    for i in 0..n {
        let e = x.reflectance(i);
        for c in 0..3 {
            for a in 1..=k {
                j[(i * 3 + c, (a - 1) * 3 + c)] = -scales.data * e[c] * x.transport(i, a);
            }
        }
        let id = problem.cluster_ids[i] as usize;
        if w.refine_clustering && id > 0 {
            for c in 0..3 {
                if let Some(jv) = clustering_derivative(problem, scales, id, c) {
                    j[(3 * n + i * 3 + c, (id - 1) * 3 + c)] = jv;
                }
            }
        }
    }
    for (kk, b) in base[1..].iter().enumerate() {
        let p = chroma_operator(*b, w.chroma_mode);
        for r in 0..3 {
            j[(6 * n + kk * 6 + r, kk * 3 + r)] = w.intensity_reg.sqrt();
            for c in 0..3 {
                j[(6 * n + kk * 6 + 3 + r, kk * 3 + c)] = w.chroma_reg.sqrt() * p[r][c];
            }
        }
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intensity_regularizer_example() {
        let w = EnergyWeights::default();
        let base = [[1.0; 3], [0.5, 0.2, 0.2]];
        let r = regularizer_residuals(&base, &[[0.1, 0.0, 0.0]], &w);
        assert_relative_eq!(r[0], 10f64.sqrt() * 0.1, epsilon = 1e-15);
        assert_eq!(&r[1..3], &[0.0, 0.0]);
        assert!(regularizer_residuals(&base, &[[0.0; 3]], &w).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn projection_ignores_scaling_along_the_color() {
        let b = [0.6, 0.3, 0.1];
        let p = chroma_operator(b, ChromaRegularizer::Projected);
        for row in p {
            assert!((row[0] * b[0] + row[1] * b[1] + row[2] * b[2]).abs() < 1e-15);
        }
        assert_eq!(chroma_operator(b, ChromaRegularizer::Printed)[1], [0.0, 1.0, 0.0]);
    }
}

//! Decomposition and refinement energies as stacked, IRLS-weighted residuals.

mod irls;
mod layers;
mod priors;
mod refine;
mod terms;
mod weights;

pub use irls::{lp_weight, nonneg_weight, IrlsWeights};
pub use layers::LayerStack;
pub use priors::{
    build_retinex_weights, retinex_weight, sample_consistency, ConsistencyConfig, ConsistencySamples, Partner,
    RetinexWeightMap, RETINEX_GAIN,
};
pub use refine::{
    chroma_operator, dense_jacobian, dense_normal_equations, effective_basis, regularizer_energy,
    regularizer_residuals,
};
pub use terms::{DecompositionProblem, Linearization, ResidualVector, RowScales, TERM_NAMES};
pub use weights::{ChromaRegularizer, EnergyWeights};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{chromaticity, log_rgb, Frame, Rgb};
use crate::palette::{BaseColorPalette, ClusterMap};

impl DecompositionProblem {
    /// Assembles the auxiliary maps of one frame. `previous` carries the previous
    /// frame (for temporal partners) and its solved log-reflectance.
    pub fn build(
        frame: &Frame,
        palette: &BaseColorPalette,
        clusters: &ClusterMap,
        previous: Option<(&Frame, &[Rgb])>,
        weights: EnergyWeights,
        consistency: &ConsistencyConfig,
        seed: u64,
    ) -> Self {
        let (width, height) = frame.dims();
        let chroma = chromaticity(frame);
        let retinex = build_retinex_weights(&chroma).weights;
        let prev_chroma = previous.map(|(f, _)| chromaticity(f));
        let samples = sample_consistency(&chroma, prev_chroma.as_ref(), seed, consistency);
        let cluster_log = clusters.reflectance(palette).into_iter().map(log_rgb).collect();
        DecompositionProblem {
            width,
            height,
            input: frame.pixels().to_vec(),
            basis: palette.basis(),
            cluster_log,
            cluster_ids: clusters.ids.clone(),
            retinex,
            samples,
            previous_log: previous.map(|(_, r)| r.to_vec()),
            weights,
        }
    }

    /// Restricts the problem to a crop window.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let pick = |v: &[Rgb]| -> Vec<Rgb> {
            (y0..y0 + h)
                .flat_map(|y| (x0..x0 + w).map(move |x| (x, y)))
                .map(|(x, y)| v[y * self.width + x])
                .collect()
        };
        let retinex = (y0..y0 + h)
            .flat_map(|y| (x0..x0 + w).map(move |x| y * self.width + x))
            .map(|i| self.retinex[i])
            .collect();
        // temporal partner indices are remapped into the cropped previous frame
        let samples = self.samples.crop(x0, y0, w, h);
        let previous_log = self.previous_log.as_deref().map(pick);
        DecompositionProblem {
            width: w,
            height: h,
            input: pick(&self.input),
            basis: self.basis.clone(),
            cluster_log: pick(&self.cluster_log),
            cluster_ids: (y0..y0 + h)
                .flat_map(|y| (x0..x0 + w).map(move |x| self.cluster_ids[y * self.width + x]))
                .collect(),
            retinex,
            samples,
            previous_log,
            weights: self.weights.clone(),
        }
    }
}

/// `E(X) = ‖F(X)‖²` with IRLS weights evaluated at `x` itself.
pub fn total_energy(problem: &DecompositionProblem, x: &LayerStack) -> f64 {
    problem.energy(x, &problem.scales_at(x))
}

/// Random, fully active problem for verification: every term has nonzero
/// weight, partners are mixed spatial/temporal, and layers take both signs.
pub fn random_problem(width: usize, height: usize, k: usize, seed: u64) -> (DecompositionProblem, LayerStack) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;
    let mut basis = vec![[1.0; 3]];
    for _ in 0..k {
        basis.push([rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]);
    }
    let input = (0..n)
        .map(|_| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)])
        .collect();
    let cluster_log = (0..n)
        .map(|_| [rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0)])
        .collect();
    let previous_log = Some(
        (0..n)
            .map(|_| [rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0)])
            .collect(),
    );
    let retinex = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let per_pixel = 4;
    let partners = (0..n * per_pixel)
        .map(|flat| {
            let i = flat / per_pixel;
            let temporal = rng.gen_bool(0.3);
            let mut j = rng.gen_range(0..n);
            if !temporal && j == i {
                j = (j + 1) % n;
            }
            Partner {
                index: j as u32,
                temporal,
                weight: if rng.gen_bool(0.8) { 1.0 } else { 0.0 },
            }
        })
        .collect();
    let samples = ConsistencySamples::from_partners(width, height, per_pixel, partners);
    let cluster_ids = (0..n).map(|_| if k == 0 { 0 } else { rng.gen_range(0..=k as u16) }).collect();
    let problem = DecompositionProblem {
        width,
        height,
        input,
        basis,
        cluster_log,
        cluster_ids,
        retinex,
        samples,
        previous_log,
        weights: EnergyWeights::default(),
    };
    let mut x = LayerStack::zeros(width, height, k);
    for i in 0..n {
        let px = x.pixel_mut(i);
        for c in 0..3 {
            px[c] = rng.gen_range(-1.5..0.0);
        }
        for l in 0..=k {
            px[3 + l] = rng.gen_range(-0.2..0.8);
        }
    }
    (problem, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_pixel(input: Rgb, basis: Vec<Rgb>) -> DecompositionProblem {
        DecompositionProblem {
            width: 1,
            height: 1,
            input: vec![input],
            basis,
            cluster_log: vec![[0.0; 3]],
            cluster_ids: vec![0],
            retinex: vec![0.0],
            samples: ConsistencySamples::empty(1, 1),
            previous_log: None,
            weights: EnergyWeights::default(),
        }
    }

    #[test]
    fn data_residual_examples() {
        let p = single_pixel([0.5; 3], vec![[1.0; 3], [1.0, 0.0, 0.0]]);
        let mut x = LayerStack::zeros(1, 1, 1);
        x.set_transport(0, 0, 0.5);
        let s = p.scales_at(&x);
        assert!(p.residuals(&x, &s).data.iter().all(|v| v.abs() < 1e-15));

        let p = single_pixel([0.4, 0.2, 0.2], vec![[1.0; 3], [1.0, 0.0, 0.0]]);
        x.set_transport(0, 0, 0.2);
        x.set_transport(0, 1, 0.2);
        assert!(p.residuals(&x, &s).data.iter().all(|v| v.abs() < 1e-15));

        let zero = LayerStack::zeros(1, 1, 1);
        let r = p.residuals(&zero, &p.scales_at(&zero));
        assert_relative_eq!(r.data[0], 5000f64.sqrt() * 0.4, epsilon = 1e-12);
    }

    #[test]
    fn clustering_residual_of_scaled_reflectance() {
        let p = single_pixel([0.5; 3], vec![[1.0; 3]]);
        let mut x = LayerStack::zeros(1, 1, 0);
        x.pixel_mut(0)[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let r = p.residuals(&x, &p.scales_at(&x));
        for v in r.clustering {
            assert_relative_eq!(v, 200f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn monochrome_residual_example() {
        let mut p = single_pixel([0.5; 3], vec![[1.0; 3], [0.6, 0.3, 0.3]]);
        p.retinex = vec![1.0];
        let mut x = LayerStack::zeros(1, 1, 1);
        x.set_transport(0, 1, 1.0);
        let r = p.residuals(&x, &p.scales_at(&x));
        let s10 = 10f64.sqrt();
        assert_relative_eq!(r.monochrome[0], s10 * 0.2, epsilon = 1e-12);
        assert_relative_eq!(r.monochrome[1], -s10 * 0.1, epsilon = 1e-12);
        p.retinex = vec![0.0];
        assert!(p.residuals(&x, &p.scales_at(&x)).monochrome.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn consistency_residual_example() {
        let mut p = single_pixel([0.5; 3], vec![[1.0; 3]]);
        p.width = 2;
        p.input = vec![[0.5; 3]; 2];
        p.cluster_log = vec![[0.0; 3]; 2];
        p.cluster_ids = vec![0; 2];
        p.retinex = vec![0.0; 2];
        p.samples = ConsistencySamples::from_partners(
            2,
            1,
            1,
            vec![
                Partner { index: 1, temporal: false, weight: 1.0 },
                Partner { index: 0, temporal: false, weight: 0.0 },
            ],
        );
        let mut x = LayerStack::zeros(2, 1, 0);
        x.pixel_mut(0)[0] = -0.3;
        let r = p.residuals(&x, &p.scales_at(&x));
        assert_relative_eq!(r.consistency[0], 10f64.sqrt() * -0.3, epsilon = 1e-12);
        assert_eq!(r.consistency[3], 0.0);
    }

    #[test]
    fn smoothness_step_is_local() {
        let (mut p, _) = random_problem(8, 8, 1, 3);
        p.weights.smoothness = 3.0;
        let mut x = LayerStack::zeros(8, 8, 1);
        for i in 0..64 {
            x.set_transport(i, 0, if i % 8 < 4 { 0.2 } else { 0.6 });
        }
        let r = p.residuals(&x, &p.scales_at(&x));
        for (row, v) in r.smoothness.iter().enumerate() {
            let i = row / 4;
            let is_edge = row % 4 == 0 && i % 8 == 3;
            assert_eq!(*v != 0.0, is_edge, "row {row}");
        }
    }

    #[test]
    fn energy_is_sum_of_blocks_and_linear_in_lambda() {
        let (p, x) = random_problem(8, 8, 2, 11);
        let s = p.scales_at(&x);
        let r = p.residuals(&x, &s);
        let flat: f64 = r.flatten().iter().map(|v| v * v).sum();
        assert_relative_eq!(r.energy(), flat, max_relative = 1e-10);
        let mut p2 = p.clone();
        p2.weights.data *= 2.0;
        let e2 = p2.residuals(&x, &p2.scales_at(&x)).term_energies();
        assert_relative_eq!(e2[0], 2.0 * r.term_energies()[0], max_relative = 1e-12);
    }

    fn dense(triplets: &[(usize, usize, f64)], rows: usize, cols: usize) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(rows, cols);
        for &(r, c, v) in triplets {
            m[(r, c)] += v;
        }
        m
    }

    #[test]
    fn matrix_free_operators_match_explicit_jacobian() {
        let (p, x) = random_problem(8, 8, 2, 5);
        let s = p.scales_at(&x);
        let lin = p.linearize(&x, &s);
        let rows = p.residuals(&x, &s).len();
        let j = dense(&lin.triplets(), rows, p.unknowns());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..p.unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jv = j.clone() * nalgebra::DVector::from_column_slice(&v);
        let mf = lin.apply(&v).flatten();
        for (a, b) in mf.iter().zip(jv.iter()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        let q: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jtq = j.transpose() * nalgebra::DVector::from_column_slice(&q);
        let rv = lin.apply(&vec![0.0; p.unknowns()]);
        let mut qv = rv.clone();
        let offs = rv.offsets();
        for (b, blk) in [
            &mut qv.data,
            &mut qv.clustering,
            &mut qv.r_sparsity,
            &mut qv.consistency,
            &mut qv.monochrome,
            &mut qv.i_sparsity,
            &mut qv.smoothness,
            &mut qv.non_neg,
        ]
        .into_iter()
        .enumerate()
        {
            let len = blk.len();
            blk.copy_from_slice(&q[offs[b]..offs[b] + len]);
        }
        let mf_t = lin.apply_transpose(&qv);
        for (a, b) in mf_t.iter().zip(jtq.iter()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        let diag = lin.normal_diagonal();
        for (c, d) in diag.iter().enumerate() {
            let col = j.column(c).norm_squared();
            assert!((d - col).abs() <= 1e-9 * (1.0 + col));
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let (p, x) = random_problem(8, 8, 2, 8);
        let s = p.scales_at(&x);
        let lin = p.linearize(&x, &s);
        let rows = p.residuals(&x, &s).len();
        let j = dense(&lin.triplets(), rows, p.unknowns());
        let h = 1e-6;
        for col in (0..p.unknowns()).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.values[col] += h;
            xm.values[col] -= h;
            let fp = p.residuals(&xp, &s).flatten();
            let fm = p.residuals(&xm, &s).flatten();
            let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let an: Vec<f64> = j.column(col).iter().copied().collect();
            let err: f64 = fd.iter().zip(&an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = an.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-4 * norm.max(1e-12), "column {col}: {err} vs {norm}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn energy_scales_linearly_in_every_lambda(seed in 0u64..1000, term in 0usize..8, factor in 0.1f64..10.0) {
            let (p, x) = random_problem(6, 5, 2, seed);
            let base = p.residuals(&x, &p.scales_at(&x)).term_energies();
            let mut q = p.clone();
            let w = &mut q.weights;
            let slot = [
                &mut w.data, &mut w.clustering, &mut w.r_sparsity, &mut w.r_consistency,
                &mut w.monochrome, &mut w.i_sparsity, &mut w.smoothness, &mut w.non_neg,
            ];
            *slot.into_iter().nth(term).unwrap() *= factor;
            let scaled = q.residuals(&x, &q.scales_at(&x)).term_energies();
            prop_assert!((scaled[term] - factor * base[term]).abs() <= 1e-9 * (1.0 + scaled[term]));
        }

        #[test]
        fn frozen_weights_do_not_move_with_the_iterate(seed in 0u64..1000) {
            let (p, x) = random_problem(6, 6, 1, seed);
            let s = p.scales_at(&x);
            let mut y = x.clone();
            y.values.iter_mut().for_each(|v| *v += 0.01);
            let e_frozen = p.energy(&y, &s);
            let e_again = p.energy(&y, &s);
            prop_assert_eq!(e_frozen.to_bits(), e_again.to_bits());
        }
    }

    #[test]
    fn dense_normal_matrix_matches_brute_force() {
        let (mut p, x) = random_problem(4, 8, 2, 21);
        let base = p.basis.clone();
        let delta = vec![[0.01, -0.02, 0.03], [0.0, 0.01, -0.01]];
        p.set_basis(effective_basis(&base, &delta));
        let s = p.scales_at(&x);
        let (n, g) = dense_normal_equations(&p, &x, &s, &base, &delta);
        let j = dense_jacobian(&p, &x, &s, &base);
        let brute = j.transpose() * &j;
        assert!((n.clone() - brute).amax() <= 1e-8 * n.amax().max(1.0));
        let res = p.residuals(&x, &s);
        let mut f = res.data;
        f.extend(res.clustering);
        f.extend(regularizer_residuals(&base, &delta, &p.weights));
        let brute_g = -(j.transpose() * nalgebra::DVector::from_vec(f));
        assert!((g - brute_g).amax() <= 1e-8);
    }
}

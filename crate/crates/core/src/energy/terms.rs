//! Residual blocks of the decomposition energy and their Jacobian, applied
//! matrix-free.
//!
//! Row layout per pixel `i` inside each block:
//!
//! | block        | rows per pixel | row `j`                                  |
//! |--------------|----------------|------------------------------------------|
//! | data         | 3              | channel                                  |
//! | clustering   | 3              | channel                                  |
//! | r_sparsity   | 6              | `dir * 3 + channel` (dir 0 = x, 1 = y)   |
//! | consistency  | 3 * N_s        | `sample * 3 + channel`                   |
//! | monochrome   | 3              | channel                                  |
//! | i_sparsity   | K              | `layer - 1`                              |
//! | smoothness   | 2 * (K + 1)    | `layer * 2 + dir`                        |
//! | non_neg      | K + 1          | layer                                    |

use super::irls::IrlsWeights;
use super::layers::LayerStack;
use super::priors::ConsistencySamples;
use super::weights::EnergyWeights;
use crate::imaging::Rgb;
use crate::par;

pub const TERM_NAMES: [&str; 8] = [
    "data",
    "clustering",
    "r_sparsity",
    "r_consistency",
    "monochrome",
    "i_sparsity",
    "smoothness",
    "non_neg",
];

/// Everything the decomposition energy of one frame depends on besides the
/// unknowns themselves.
#[derive(Debug, Clone)]
pub struct DecompositionProblem {
    pub width: usize,
    pub height: usize,
    pub input: Vec<Rgb>,
    /// `[b_0, .., b_K]`.
    pub basis: Vec<Rgb>,
    /// `r_cluster = ln R_cluster`.
    pub cluster_log: Vec<Rgb>,
    /// Cluster id per pixel; 0 keeps the pixel's `cluster_log` fixed when the
    /// basis changes.
    pub cluster_ids: Vec<u16>,
    /// Soft-color-Retinex gate per pixel.
    pub retinex: Vec<f64>,
    pub samples: ConsistencySamples,
    /// Solved log-reflectance of the previous frame (target of temporal partners).
    pub previous_log: Option<Vec<Rgb>>,
    pub weights: EnergyWeights,
}

/// Stacked residual vector `F`, one contiguous block per energy term.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub data: Vec<f64>,
    pub clustering: Vec<f64>,
    pub r_sparsity: Vec<f64>,
    pub consistency: Vec<f64>,
    pub monochrome: Vec<f64>,
    pub i_sparsity: Vec<f64>,
    pub smoothness: Vec<f64>,
    pub non_neg: Vec<f64>,
}

impl ResidualVector {
    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.data,
            &self.clustering,
            &self.r_sparsity,
            &self.consistency,
            &self.monochrome,
            &self.i_sparsity,
            &self.smoothness,
            &self.non_neg,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Squared norm of each block, in [`TERM_NAMES`] order.
    pub fn term_energies(&self) -> [f64; 8] {
        self.blocks().map(|b| par::dot(b, b))
    }

    /// `‖F‖²`.
    pub fn energy(&self) -> f64 {
        self.term_energies().iter().sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    /// Start row of each block inside [`flatten`](Self::flatten).
    pub fn offsets(&self) -> [usize; 8] {
        let mut off = [0; 8];
        let mut acc = 0;
        for (o, b) in off.iter_mut().zip(self.blocks()) {
            *o = acc;
            acc += b.len();
        }
        off
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// `sqrt(λ · w)` factors for every residual row, fixed for one Gauss–Newton step.
#[derive(Debug, Clone, PartialEq)]
pub struct RowScales {
    pub data: f64,
    pub clustering: f64,
    pub r_sparsity: Vec<f64>,
    pub consistency: Vec<f64>,
    pub monochrome: Vec<f64>,
    pub i_sparsity: Vec<f64>,
    pub smoothness: Vec<f64>,
    pub non_neg: Vec<f64>,
}

impl DecompositionProblem {
    /// Replaces the basis. With `refine_clustering` the clustered
    /// log-reflectance of every labelled pixel follows its base color.
    pub fn set_basis(&mut self, basis: Vec<Rgb>) {
        if self.weights.refine_clustering {
            for (log, &id) in self.cluster_log.iter_mut().zip(&self.cluster_ids) {
                if id > 0 {
                    *log = crate::imaging::log_rgb(basis[id as usize]);
                }
            }
        }
        self.basis = basis;
    }

    pub fn k(&self) -> usize {
        self.basis.len() - 1
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn stride(&self) -> usize {
        self.k() + 4
    }

    pub fn unknowns(&self) -> usize {
        self.pixel_count() * self.stride()
    }

    pub fn irls_weights(&self, x: &LayerStack) -> IrlsWeights {
        IrlsWeights::compute(x, &self.weights)
    }

    pub fn row_scales(&self, irls: &IrlsWeights) -> RowScales {
        let wt = &self.weights;
        let scale = |lambda: f64, v: &[f64]| -> Vec<f64> { v.iter().map(|w| (lambda * w).sqrt()).collect() };
        let consistency = self
            .samples
            .partners
            .iter()
            .map(|p| {
                let usable = !p.temporal || self.previous_log.is_some();
                if usable {
                    (wt.r_consistency * p.weight).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        RowScales {
            data: wt.data.sqrt(),
            clustering: wt.clustering.sqrt(),
            r_sparsity: scale(wt.r_sparsity, &irls.r_sparsity),
            consistency,
            monochrome: scale(wt.monochrome, &self.retinex),
            i_sparsity: scale(wt.i_sparsity, &irls.i_sparsity),
            smoothness: scale(wt.smoothness, &irls.smoothness),
            non_neg: scale(wt.non_neg, &irls.non_neg),
        }
    }

    pub fn scales_at(&self, x: &LayerStack) -> RowScales {
        self.row_scales(&self.irls_weights(x))
    }

    fn zero_residuals(&self) -> ResidualVector {
        let n = self.pixel_count();
        let k = self.k();
        ResidualVector {
            data: vec![0.0; n * 3],
            clustering: vec![0.0; n * 3],
            r_sparsity: vec![0.0; n * 6],
            consistency: vec![0.0; n * 3 * self.samples.per_pixel],
            monochrome: vec![0.0; n * 3],
            i_sparsity: vec![0.0; n * k],
            smoothness: vec![0.0; n * 2 * (k + 1)],
            non_neg: vec![0.0; n * (k + 1)],
        }
    }

    fn right(&self, i: usize) -> Option<usize> {
        (i % self.width + 1 < self.width).then_some(i + 1)
    }

    fn down(&self, i: usize) -> Option<usize> {
        (i / self.width + 1 < self.height).then_some(i + self.width)
    }

    fn left(&self, i: usize) -> Option<usize> {
        (i % self.width > 0).then(|| i - 1)
    }

    fn up(&self, i: usize) -> Option<usize> {
        (i >= self.width).then(|| i - self.width)
    }

    /// Evaluates `F(x)` with the given (frozen) row scales.
    pub fn residuals(&self, x: &LayerStack, s: &RowScales) -> ResidualVector {
        let mut out = self.zero_residuals();
        let k = self.k();
        let ns = self.samples.per_pixel;
        let basis = &self.basis;
        let stride = self.stride();
        let v = &x.values;
        let t = |i: usize, l: usize| v[i * stride + 3 + l];
        let r = |i: usize, c: usize| v[i * stride + c];

        par::for_each_chunk_mut(&mut out.data, 3, |i, rows| {
            let e = x.reflectance(i);
            let sh = x.illumination(i, basis);
            for c in 0..3 {
                rows[c] = s.data * (self.input[i][c] - e[c] * sh[c]);
            }
        });
        par::for_each_chunk_mut(&mut out.clustering, 3, |i, rows| {
            for c in 0..3 {
                rows[c] = s.clustering * (r(i, c) - self.cluster_log[i][c]);
            }
        });
        par::for_each_chunk_mut(&mut out.r_sparsity, 6, |i, rows| {
            let sc = s.r_sparsity[i];
            for (dir, nb) in [self.right(i), self.down(i)].into_iter().enumerate() {
                if let Some(j) = nb {
                    for c in 0..3 {
                        rows[dir * 3 + c] = sc * (r(j, c) - r(i, c));
                    }
                }
            }
        });
        if ns > 0 {
            par::for_each_chunk_mut(&mut out.consistency, 3 * ns, |i, rows| {
                for smp in 0..ns {
                    let flat = i * ns + smp;
                    let sc = s.consistency[flat];
                    if sc == 0.0 {
                        continue;
                    }
                    let p = self.samples.partners[flat];
                    let j = p.index as usize;
                    for c in 0..3 {
                        let other = if p.temporal {
                            self.previous_log.as_ref().map_or(0.0, |prev| prev[j][c])
                        } else {
                            r(j, c)
                        };
                        rows[smp * 3 + c] = sc * (r(i, c) - other);
                    }
                }
            });
        }
        par::for_each_chunk_mut(&mut out.monochrome, 3, |i, rows| {
            let sc = s.monochrome[i];
            let sh = x.illumination(i, basis);
            let mean = (sh[0] + sh[1] + sh[2]) / 3.0;
            for c in 0..3 {
                rows[c] = sc * (sh[c] - mean);
            }
        });
        if k > 0 {
            par::for_each_chunk_mut(&mut out.i_sparsity, k, |i, rows| {
                for l in 1..=k {
                    rows[l - 1] = s.i_sparsity[i * k + l - 1] * t(i, l);
                }
            });
        }
        par::for_each_chunk_mut(&mut out.smoothness, 2 * (k + 1), |i, rows| {
            let nbs = [self.right(i), self.down(i)];
            for l in 0..=k {
                for (dir, nb) in nbs.iter().enumerate() {
                    if let Some(j) = *nb {
                        let row = 2 * l + dir;
                        rows[row] = s.smoothness[i * 2 * (k + 1) + row] * (t(j, l) - t(i, l));
                    }
                }
            }
        });
        par::for_each_chunk_mut(&mut out.non_neg, k + 1, |i, rows| {
            for l in 0..=k {
                rows[l] = s.non_neg[i * (k + 1) + l] * t(i, l);
            }
        });
        out
    }

    pub fn energy(&self, x: &LayerStack, s: &RowScales) -> f64 {
        self.residuals(x, s).energy()
    }

    /// Caches the per-pixel quantities the Jacobian needs at `x`.
    pub fn linearize<'a>(&'a self, x: &'a LayerStack, scales: &'a RowScales) -> Linearization<'a> {
        let n = self.pixel_count();
        let exp_r = par::map_indexed(n, |i| x.reflectance(i));
        let illum = par::map_indexed(n, |i| x.illumination(i, &self.basis));
        let k = self.k();
        let mono_basis = self
            .basis
            .iter()
            .map(|b| {
                let m = (b[0] + b[1] + b[2]) / 3.0;
                [b[0] - m, b[1] - m, b[2] - m]
            })
            .collect();
        debug_assert_eq!(self.basis.len(), k + 1);
        Linearization {
            problem: self,
            scales,
            exp_r,
            illum,
            mono_basis,
        }
    }
}

/// Jacobian of `F` at a fixed point, available as `J p`, `Jᵀ q`, `diag(JᵀJ)`
/// and, for verification, as explicit triplets.
pub struct Linearization<'a> {
    pub problem: &'a DecompositionProblem,
    pub scales: &'a RowScales,
    exp_r: Vec<Rgb>,
    illum: Vec<Rgb>,
    /// `b_l - mean(b_l)` per layer.
    mono_basis: Vec<Rgb>,
}

impl Linearization<'_> {
    /// `J p` in residual space.
    pub fn apply(&self, p: &[f64]) -> ResidualVector {
        let pr = self.problem;
        let s = self.scales;
        let k = pr.k();
        let ns = pr.samples.per_pixel;
        let stride = pr.stride();
        assert_eq!(p.len(), pr.unknowns());
        let pt = |i: usize, l: usize| p[i * stride + 3 + l];
        let prr = |i: usize, c: usize| p[i * stride + c];
        let mut out = pr.zero_residuals();

        par::for_each_chunk_mut(&mut out.data, 3, |i, rows| {
            let e = self.exp_r[i];
            let sh = self.illum[i];
            for c in 0..3 {
                let mut dsh = 0.0;
                for (l, b) in pr.basis.iter().enumerate() {
                    dsh += b[c] * pt(i, l);
                }
                rows[c] = -s.data * e[c] * (sh[c] * prr(i, c) + dsh);
            }
        });
        par::for_each_chunk_mut(&mut out.clustering, 3, |i, rows| {
            for c in 0..3 {
                rows[c] = s.clustering * prr(i, c);
            }
        });
        par::for_each_chunk_mut(&mut out.r_sparsity, 6, |i, rows| {
            let sc = s.r_sparsity[i];
            for (dir, nb) in [pr.right(i), pr.down(i)].into_iter().enumerate() {
                if let Some(j) = nb {
                    for c in 0..3 {
                        rows[dir * 3 + c] = sc * (prr(j, c) - prr(i, c));
                    }
                }
            }
        });
        if ns > 0 {
            par::for_each_chunk_mut(&mut out.consistency, 3 * ns, |i, rows| {
                for smp in 0..ns {
                    let flat = i * ns + smp;
                    let sc = s.consistency[flat];
                    if sc == 0.0 {
                        continue;
                    }
                    let partner = pr.samples.partners[flat];
                    for c in 0..3 {
                        let other = if partner.temporal { 0.0 } else { prr(partner.index as usize, c) };
                        rows[smp * 3 + c] = sc * (prr(i, c) - other);
                    }
                }
            });
        }
        par::for_each_chunk_mut(&mut out.monochrome, 3, |i, rows| {
            let sc = s.monochrome[i];
            if sc == 0.0 {
                return;
            }
            for c in 0..3 {
                let mut acc = 0.0;
                for (l, mb) in self.mono_basis.iter().enumerate() {
                    acc += mb[c] * pt(i, l);
                }
                rows[c] = sc * acc;
            }
        });
        if k > 0 {
            par::for_each_chunk_mut(&mut out.i_sparsity, k, |i, rows| {
                for l in 1..=k {
                    rows[l - 1] = s.i_sparsity[i * k + l - 1] * pt(i, l);
                }
            });
        }
        par::for_each_chunk_mut(&mut out.smoothness, 2 * (k + 1), |i, rows| {
            let nbs = [pr.right(i), pr.down(i)];
            for l in 0..=k {
                for (dir, nb) in nbs.iter().enumerate() {
                    if let Some(j) = *nb {
                        let row = 2 * l + dir;
                        rows[row] = s.smoothness[i * 2 * (k + 1) + row] * (pt(j, l) - pt(i, l));
                    }
                }
            }
        });
        par::for_each_chunk_mut(&mut out.non_neg, k + 1, |i, rows| {
            for l in 0..=k {
                rows[l] = s.non_neg[i * (k + 1) + l] * pt(i, l);
            }
        });
        out
    }

    /// `Jᵀ q`, gathered per unknown so every pixel writes only its own slots.
    pub fn apply_transpose(&self, q: &ResidualVector) -> Vec<f64> {
        let pr = self.problem;
        let s = self.scales;
        let k = pr.k();
        let ns = pr.samples.per_pixel;
        let stride = pr.stride();
        let sm_stride = 2 * (k + 1);
        let mut g = vec![0.0; pr.unknowns()];
        par::for_each_chunk_mut(&mut g, stride, |i, out| {
            let e = self.exp_r[i];
            let sh = self.illum[i];
            let (right, down, left, up) = (pr.right(i), pr.down(i), pr.left(i), pr.up(i));
            // log-reflectance
            for c in 0..3 {
                let mut acc = -s.data * e[c] * sh[c] * q.data[i * 3 + c];
                acc += s.clustering * q.clustering[i * 3 + c];
                let sr = s.r_sparsity[i];
                if right.is_some() {
                    acc -= sr * q.r_sparsity[i * 6 + c];
                }
                if down.is_some() {
                    acc -= sr * q.r_sparsity[i * 6 + 3 + c];
                }
                if let Some(j) = left {
                    acc += s.r_sparsity[j] * q.r_sparsity[j * 6 + c];
                }
                if let Some(j) = up {
                    acc += s.r_sparsity[j] * q.r_sparsity[j * 6 + 3 + c];
                }
                for smp in 0..ns {
                    let flat = i * ns + smp;
                    acc += s.consistency[flat] * q.consistency[flat * 3 + c];
                }
                for &flat in pr.samples.incoming_of(i) {
                    let flat = flat as usize;
                    acc -= s.consistency[flat] * q.consistency[flat * 3 + c];
                }
                out[c] = acc;
            }
            // transport layers
            let sm = s.monochrome[i];
            for l in 0..=k {
                let b = pr.basis[l];
                let mb = self.mono_basis[l];
                let mut acc = 0.0;
                for c in 0..3 {
                    acc -= s.data * e[c] * b[c] * q.data[i * 3 + c];
                    acc += sm * mb[c] * q.monochrome[i * 3 + c];
                }
                if l >= 1 {
                    acc += s.i_sparsity[i * k + l - 1] * q.i_sparsity[i * k + l - 1];
                }
                let own = i * sm_stride + 2 * l;
                if right.is_some() {
                    acc -= s.smoothness[own] * q.smoothness[own];
                }
                if down.is_some() {
                    acc -= s.smoothness[own + 1] * q.smoothness[own + 1];
                }
                if let Some(j) = left {
                    let row = j * sm_stride + 2 * l;
                    acc += s.smoothness[row] * q.smoothness[row];
                }
                if let Some(j) = up {
                    let row = j * sm_stride + 2 * l + 1;
                    acc += s.smoothness[row] * q.smoothness[row];
                }
                acc += s.non_neg[i * (k + 1) + l] * q.non_neg[i * (k + 1) + l];
                out[3 + l] = acc;
            }
        });
        g
    }

    /// `JᵀJ p` without materializing anything.
    pub fn normal_apply(&self, p: &[f64]) -> Vec<f64> {
        self.apply_transpose(&self.apply(p))
    }

    /// Diagonal of `JᵀJ` (column squared norms), used as the Jacobi preconditioner.
    pub fn normal_diagonal(&self) -> Vec<f64> {
        let pr = self.problem;
        let s = self.scales;
        let k = pr.k();
        let ns = pr.samples.per_pixel;
        let stride = pr.stride();
        let sm_stride = 2 * (k + 1);
        let mut d = vec![0.0; pr.unknowns()];
        par::for_each_chunk_mut(&mut d, stride, |i, out| {
            let e = self.exp_r[i];
            let sh = self.illum[i];
            let (right, down, left, up) = (pr.right(i), pr.down(i), pr.left(i), pr.up(i));
            let sr = s.r_sparsity[i];
            let mut cons = 0.0;
            for smp in 0..ns {
                cons += s.consistency[i * ns + smp].powi(2);
            }
            for &flat in pr.samples.incoming_of(i) {
                cons += s.consistency[flat as usize].powi(2);
            }
            let mut rs = sr * sr * (right.is_some() as u8 + down.is_some() as u8) as f64;
            if let Some(j) = left {
                rs += s.r_sparsity[j].powi(2);
            }
            if let Some(j) = up {
                rs += s.r_sparsity[j].powi(2);
            }
            for c in 0..3 {
                out[c] = (s.data * e[c] * sh[c]).powi(2) + s.clustering.powi(2) + rs + cons;
            }
            let sm = s.monochrome[i];
            for l in 0..=k {
                let b = pr.basis[l];
                let mb = self.mono_basis[l];
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += (s.data * e[c] * b[c]).powi(2) + (sm * mb[c]).powi(2);
                }
                if l >= 1 {
                    acc += s.i_sparsity[i * k + l - 1].powi(2);
                }
                let own = i * sm_stride + 2 * l;
                if right.is_some() {
                    acc += s.smoothness[own].powi(2);
                }
                if down.is_some() {
                    acc += s.smoothness[own + 1].powi(2);
                }
                if let Some(j) = left {
                    acc += s.smoothness[j * sm_stride + 2 * l].powi(2);
                }
                if let Some(j) = up {
                    acc += s.smoothness[j * sm_stride + 2 * l + 1].powi(2);
                }
                acc += s.non_neg[i * (k + 1) + l].powi(2);
                out[3 + l] = acc;
            }
        });
        d
    }

    /// Per-pixel diagonal blocks of `JᵀJ`, each `stride × stride`, row-major and
    /// concatenated in pixel order. Only the data and monochrome rows couple
    /// unknowns of the same pixel; every other term adds to the diagonal.
    pub fn normal_blocks(&self) -> Vec<f64> {
        let pr = self.problem;
        let s = self.scales;
        let k = pr.k();
        let stride = pr.stride();
        let diag = self.normal_diagonal();
        let mut blocks = vec![0.0; pr.pixel_count() * stride * stride];
        par::for_each_chunk_mut(&mut blocks, stride * stride, |i, blk| {
            let d = &diag[i * stride..(i + 1) * stride];
            let e = self.exp_r[i];
            let sh = self.illum[i];
            let sm = s.monochrome[i];
            let mut coupled = vec![0.0; stride];
            for c in 0..3 {
                // data row of channel c
                coupled.iter_mut().for_each(|v| *v = 0.0);
                coupled[c] = -s.data * e[c] * sh[c];
                for l in 0..=k {
                    coupled[3 + l] = -s.data * e[c] * pr.basis[l][c];
                }
                for a in 0..stride {
                    for b in 0..stride {
                        blk[a * stride + b] += coupled[a] * coupled[b];
                    }
                }
                // monochrome row of channel c
                for l in 0..=k {
                    let v = sm * self.mono_basis[l][c];
                    for m in 0..=k {
                        blk[(3 + l) * stride + 3 + m] += v * sm * self.mono_basis[m][c];
                    }
                }
            }
            // remaining terms only touch the diagonal
            for a in 0..stride {
                blk[a * stride + a] = d[a];
            }
        });
        blocks
    }

    /// Explicit sparse Jacobian as `(row, column, value)` triplets, rows
    /// numbered as in [`ResidualVector::flatten`]. Assembled row by row,
    /// independently of the matrix-free operators.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let pr = self.problem;
        let s = self.scales;
        let k = pr.k();
        let n = pr.pixel_count();
        let ns = pr.samples.per_pixel;
        let stride = pr.stride();
        let col_r = |i: usize, c: usize| i * stride + c;
        let col_t = |i: usize, l: usize| i * stride + 3 + l;
        let mut out = Vec::new();
        let mut row = 0;

        for i in 0..n {
            for c in 0..3 {
                let e = self.exp_r[i][c];
                out.push((row, col_r(i, c), -s.data * e * self.illum[i][c]));
                for l in 0..=k {
                    out.push((row, col_t(i, l), -s.data * e * pr.basis[l][c]));
                }
                row += 1;
            }
        }
        for i in 0..n {
            for c in 0..3 {
                out.push((row, col_r(i, c), s.clustering));
                row += 1;
            }
        }
        for i in 0..n {
            for nb in [pr.right(i), pr.down(i)] {
                for c in 0..3 {
                    if let Some(j) = nb {
                        out.push((row, col_r(j, c), s.r_sparsity[i]));
                        out.push((row, col_r(i, c), -s.r_sparsity[i]));
                    }
                    row += 1;
                }
            }
        }
        for i in 0..n {
            for smp in 0..ns {
                let flat = i * ns + smp;
                let p = pr.samples.partners[flat];
                for c in 0..3 {
                    out.push((row, col_r(i, c), s.consistency[flat]));
                    if !p.temporal {
                        out.push((row, col_r(p.index as usize, c), -s.consistency[flat]));
                    }
                    row += 1;
                }
            }
        }
        for i in 0..n {
            for c in 0..3 {
                for l in 0..=k {
                    let b = pr.basis[l];
                    let mean = (b[0] + b[1] + b[2]) / 3.0;
                    out.push((row, col_t(i, l), s.monochrome[i] * (b[c] - mean)));
                }
                row += 1;
            }
        }
        for i in 0..n {
            for l in 1..=k {
                out.push((row, col_t(i, l), s.i_sparsity[i * k + l - 1]));
                row += 1;
            }
        }
        for i in 0..n {
            for l in 0..=k {
                for (dir, nb) in [pr.right(i), pr.down(i)].into_iter().enumerate() {
                    if let Some(j) = nb {
                        let sc = s.smoothness[i * 2 * (k + 1) + 2 * l + dir];
                        out.push((row, col_t(j, l), sc));
                        out.push((row, col_t(i, l), -sc));
                    }
                    row += 1;
                }
            }
        }
        for i in 0..n {
            for l in 0..=k {
                out.push((row, col_t(i, l), s.non_neg[i * (k + 1) + l]));
                row += 1;
            }
        }
        out
    }
}

use nalgebra::DMatrix;

use crate::par;

/// Outcome of a preconditioned conjugate gradient run.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖b - A x‖ / ‖b‖` at exit.
    pub residual_ratio: f64,
}

/// Solves `A x = b` from `x = 0` with a Jacobi preconditioner. `apply` evaluates
/// `A p`; `diagonal` is `diag(A)` (non-positive entries are treated as 1).
pub fn jacobi_pcg(apply: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], diagonal: &[f64], iterations: usize) -> PcgResult {
    let inv: Vec<f64> = diagonal.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    pcg(apply, |r| par::map_indexed(r.len(), |i| inv[i] * r[i]), b, iterations)
}

/// Preconditioned conjugate gradient from `x = 0`; `precondition` applies `M⁻¹`.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    iterations: usize,
) -> PcgResult {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = par::dot(b, b).sqrt();
    if b_norm == 0.0 {
        return PcgResult {
            solution: x,
            iterations: 0,
            residual_ratio: 0.0,
        };
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    let mut done = 0;
    for _ in 0..iterations {
        let ap = apply(&p);
        let pap = par::dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        par::for_each_mut(&mut x, |i, v| *v += alpha * p[i]);
        par::for_each_mut(&mut r, |i, v| *v -= alpha * ap[i]);
        done += 1;
        if par::dot(&r, &r).sqrt() <= 1e-14 * b_norm {
            break;
        }
        z = precondition(&r);
        let rz_next = par::dot(&r, &z);
        if rz_next == 0.0 {
            break;
        }
        let beta = rz_next / rz;
        rz = rz_next;
        par::for_each_mut(&mut p, |i, v| *v = z[i] + beta * *v);
    }
    PcgResult {
        solution: x,
        iterations: done,
        residual_ratio: par::dot(&r, &r).sqrt() / b_norm,
    }
}

/// Block-diagonal preconditioner with one dense block per pixel.
pub struct BlockJacobi {
    stride: usize,
    inverses: Vec<f64>,
}

impl BlockJacobi {
    /// `blocks` holds `stride × stride` row-major blocks back to back. Blocks that
    /// are not positive definite fall back to their inverted diagonal.
    pub fn new(blocks: &[f64], stride: usize) -> Self {
        let mut inverses = vec![0.0; blocks.len()];
        par::for_each_chunk_mut(&mut inverses, stride * stride, |i, out| {
            let blk = &blocks[i * stride * stride..(i + 1) * stride * stride];
            let m = DMatrix::from_row_slice(stride, stride, blk);
            match m.clone().cholesky() {
                Some(ch) => out.copy_from_slice(ch.inverse().transpose().as_slice()),
                None => {
                    for a in 0..stride {
                        let d = m[(a, a)];
                        out[a * stride + a] = if d > 0.0 { 1.0 / d } else { 1.0 };
                    }
                }
            }
        });
        BlockJacobi { stride, inverses }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let s = self.stride;
        let mut z = vec![0.0; r.len()];
        par::for_each_chunk_mut(&mut z, s, |i, out| {
            let inv = &self.inverses[i * s * s..(i + 1) * s * s];
            let ri = &r[i * s..(i + 1) * s];
            for a in 0..s {
                out[a] = (0..s).map(|b| inv[a * s + b] * ri[b]).sum();
            }
        });
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_small_spd_system_exactly() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let apply = |p: &[f64]| (0..3).map(|r| (0..3).map(|c| a[r][c] * p[c]).sum()).collect();
        let res = jacobi_pcg(apply, &[1.0, 2.0, 3.0], &[4.0, 3.0, 2.0], 16);
        let x = &res.solution;
        for r in 0..3 {
            let ax: f64 = (0..3).map(|c| a[r][c] * x[c]).sum();
            assert_relative_eq!(ax, [1.0, 2.0, 3.0][r], epsilon = 1e-10);
        }
        assert!(res.iterations <= 3);
    }

    #[test]
    fn zero_rhs_gives_zero_step() {
        let res = jacobi_pcg(|p| p.to_vec(), &[0.0; 4], &[1.0; 4], 16);
        assert_eq!(res.solution, vec![0.0; 4]);
        assert_eq!(res.iterations, 0);
    }
}

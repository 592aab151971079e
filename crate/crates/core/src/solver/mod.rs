//! Gauss–Newton minimization with sparse–dense splitting: matrix-free
//! Jacobi-PCG on the per-pixel unknowns, and a small SVD-solved system for the
//! base color updates.

mod dense;
mod pcg;

pub use dense::{solve_dense_block, SVD_RCOND};
pub use pcg::{jacobi_pcg, pcg, BlockJacobi, PcgResult};

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::energy::{
    dense_normal_equations, effective_basis, regularizer_energy, DecompositionProblem, LayerStack, Linearization,
    RowScales,
};
use crate::error::{Error, Result};
use crate::imaging::{Frame, Rgb, LOG_FLOOR};
use crate::palette::{BaseColorPalette, ClusterMap};
use crate::par;

/// Preconditioner of the sparse-phase conjugate gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// `diag(JᵀJ)`.
    Jacobi,
    /// Per-pixel `(K+4) × (K+4)` diagonal blocks of `JᵀJ`.
    BlockJacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveConfig {
    /// Flip-flop iterations; IRLS weights are refreshed at the start of each.
    pub outer_iterations: usize,
    /// Gauss–Newton steps on the sparse block per flip-flop iteration.
    pub sparse_steps: usize,
    pub pcg_iterations: usize,
    pub preconditioner: Preconditioner,
    pub max_halvings: usize,
    /// Relative frozen-weight energy decrease below which the solve stops.
    pub tolerance: f64,
    /// Run the dense (base color) phase.
    pub refine: bool,
}

impl SolveConfig {
    pub fn first_frame() -> Self {
        SolveConfig {
            outer_iterations: 8,
            sparse_steps: 4,
            pcg_iterations: 16,
            preconditioner: Preconditioner::BlockJacobi,
            max_halvings: 4,
            tolerance: 1e-4,
            refine: true,
        }
    }

    pub fn streaming() -> Self {
        SolveConfig {
            outer_iterations: 3,
            sparse_steps: 4,
            refine: false,
            ..Self::first_frame()
        }
    }
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self::first_frame()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sparse,
    Dense,
}

/// One Gauss–Newton step, with both energies evaluated under the same frozen
/// IRLS weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub outer: usize,
    pub phase: Phase,
    pub energy_before: f64,
    pub energy_after: f64,
    pub halvings: usize,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcg_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcg_residual_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub steps: Vec<StepRecord>,
}

impl SolveReport {
    /// Accepted steps whose frozen-weight energy went up.
    pub fn monotonicity_violations(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.accepted && s.energy_after > s.energy_before)
            .count()
    }

    /// Writes one JSON object per step.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub layers: LayerStack,
    /// Base color updates `Δb_1..Δb_K` relative to the basis the solve started from.
    pub delta: Vec<Rgb>,
    pub report: SolveReport,
}

/// Starting point. Without `previous`: `r = ln R_cluster`, `T_0` the channel mean
/// of `I / R_cluster` clamped to `[0, 2]`, indirect layers zero. With
/// `previous`: a copy of it.
pub fn initialize(
    frame: &Frame,
    clusters: &ClusterMap,
    palette: &BaseColorPalette,
    previous: Option<&LayerStack>,
) -> LayerStack {
    if let Some(prev) = previous {
        return prev.clone();
    }
    let (w, h) = frame.dims();
    let k = palette.k();
    let reflectance = clusters.reflectance(palette);
    let mut x = LayerStack::zeros(w, h, k);
    par::for_each_chunk_mut(&mut x.values, k + 4, |i, px| {
        let rc = reflectance[i].map(|v| v.max(LOG_FLOOR));
        let input = frame.pixels()[i];
        let mut t0 = 0.0;
        for c in 0..3 {
            px[c] = rc[c].ln();
            t0 += input[c] / rc[c];
        }
        px[3] = (t0 / 3.0).clamp(0.0, 2.0);
    });
    x
}

/// Runs the configured PCG on `JᵀJ δ = g`.
pub fn solve_normal_equations(lin: &Linearization<'_>, g: &[f64], config: &SolveConfig) -> PcgResult {
    let apply = |p: &[f64]| lin.normal_apply(p);
    match config.preconditioner {
        Preconditioner::Jacobi => jacobi_pcg(apply, g, &lin.normal_diagonal(), config.pcg_iterations),
        Preconditioner::BlockJacobi => {
            let m = BlockJacobi::new(&lin.normal_blocks(), lin.problem.stride());
            pcg(apply, |r| m.apply(r), g, config.pcg_iterations)
        }
    }
}

/// Outcome of one sparse Gauss–Newton step.
#[derive(Debug, Clone)]
pub struct SparseStep {
    pub record: StepRecord,
    /// Decrease predicted by the linearized model for the full step.
    pub predicted_decrease: f64,
}

fn fault(outer: usize, detail: impl Into<String>) -> Error {
    Error::NumericalFault {
        iteration: outer,
        detail: detail.into(),
    }
}

/// One Gauss–Newton step on the sparse unknowns with IRLS weights frozen in
/// `scales`. The step is halved up to `config.max_halvings` times while the
/// energy increases; if it never decreases, `x` is left untouched.
pub fn gn_step_sparse(
    problem: &DecompositionProblem,
    x: &mut LayerStack,
    scales: &RowScales,
    config: &SolveConfig,
    outer: usize,
) -> Result<SparseStep> {
    let f = problem.residuals(x, scales);
    if !f.is_finite() {
        return Err(fault(outer, "non-finite residuals"));
    }
    let e0 = f.energy();
    let lin = problem.linearize(x, scales);
    let mut g = lin.apply_transpose(&f);
    g.iter_mut().for_each(|v| *v = -*v);
    let pcg = solve_normal_equations(&lin, &g, config);
    let delta = pcg.solution;
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(fault(outer, "non-finite PCG update"));
    }
    // model decrease 2 gᵀδ - δᵀJᵀJδ
    let jd = lin.apply(&delta).energy();
    let predicted = 2.0 * par::dot(&g, &delta) - jd;

    let mut alpha = 1.0;
    let mut halvings = 0;
    let mut accepted = None;
    loop {
        let mut trial = x.clone();
        par::for_each_mut(&mut trial.values, |i, v| *v += alpha * delta[i]);
        let e = problem.energy(&trial, scales);
        if e.is_finite() && e <= e0 {
            accepted = Some((trial, e));
            break;
        }
        if halvings == config.max_halvings {
            break;
        }
        halvings += 1;
        alpha *= 0.5;
    }
    let (ok, e1) = match accepted {
        Some((trial, e)) => {
            *x = trial;
            (true, e)
        }
        None => (false, e0),
    };
    Ok(SparseStep {
        record: StepRecord {
            outer,
            phase: Phase::Sparse,
            energy_before: e0,
            energy_after: e1,
            halvings,
            accepted: ok,
            pcg_iterations: Some(pcg.iterations),
            pcg_residual_ratio: Some(pcg.residual_ratio),
        },
        predicted_decrease: predicted,
    })
}

/// Keeps every `b_k + Δb_k` inside `[0, 1]³`.
fn clamp_delta(base: &[Rgb], delta: &mut [Rgb]) {
    for (b, d) in base[1..].iter().zip(delta.iter_mut()) {
        for c in 0..3 {
            d[c] = (b[c] + d[c]).clamp(0.0, 1.0) - b[c];
        }
    }
}

/// Sparse-phase energy plus the refinement regularizers.
fn combined_energy(problem: &DecompositionProblem, x: &LayerStack, scales: &RowScales, base: &[Rgb], delta: &[Rgb]) -> f64 {
    problem.energy(x, scales) + regularizer_energy(base, delta, &problem.weights)
}

/// One Gauss–Newton step on `Δb` with the layers frozen. `problem.basis` holds
/// `base + delta` on entry and on exit.
pub fn gn_step_dense(
    problem: &mut DecompositionProblem,
    x: &LayerStack,
    scales: &RowScales,
    base: &[Rgb],
    delta: &mut Vec<Rgb>,
    config: &SolveConfig,
    outer: usize,
) -> Result<StepRecord> {
    let e0 = combined_energy(problem, x, scales, base, delta);
    let (normal, rhs) = dense_normal_equations(problem, x, scales, base, delta);
    let step: DVector<f64> = solve_dense_block(&normal, &rhs);
    if step.iter().any(|v| !v.is_finite()) {
        return Err(fault(outer, "non-finite dense update"));
    }
    let start_basis = problem.basis.clone();
    let mut alpha = 1.0;
    let mut halvings = 0;
    let mut accepted = None;
    loop {
        let mut trial: Vec<Rgb> = delta.clone();
        for (kk, d) in trial.iter_mut().enumerate() {
            for c in 0..3 {
                d[c] += alpha * step[kk * 3 + c];
            }
        }
        clamp_delta(base, &mut trial);
        problem.set_basis(effective_basis(base, &trial));
        let e = combined_energy(problem, x, scales, base, &trial);
        if e.is_finite() && e <= e0 {
            accepted = Some((trial, e));
            break;
        }
        if halvings == config.max_halvings {
            break;
        }
        halvings += 1;
        alpha *= 0.5;
    }
    let (ok, e1) = match accepted {
        Some((trial, e)) => {
            *delta = trial;
            (true, e)
        }
        None => {
            problem.set_basis(start_basis);
            (false, e0)
        }
    };
    Ok(StepRecord {
        outer,
        phase: Phase::Dense,
        energy_before: e0,
        energy_after: e1,
        halvings,
        accepted: ok,
        pcg_iterations: None,
        pcg_residual_ratio: None,
    })
}

/// Alternates sparse and (optionally) dense Gauss–Newton phases, refreshing the
/// IRLS weights once per flip-flop iteration. `problem.basis` is the starting
/// basis; the returned `delta` is relative to it.
pub fn flip_flop(problem: &DecompositionProblem, init: LayerStack, config: &SolveConfig) -> Result<SolveOutcome> {
    let mut problem = problem.clone();
    let base = problem.basis.clone();
    let mut delta = vec![[0.0; 3]; problem.k()];
    let mut x = init;
    let mut steps = Vec::new();
    let initial_energy = crate::energy::total_energy(&problem, &x);
    let mut status = SolveStatus::MaxIterations;
    let mut outer_done = 0;

    for outer in 0..config.outer_iterations {
        outer_done = outer + 1;
        let scales = problem.scales_at(&x);
        let start = combined_energy(&problem, &x, &scales, &base, &delta);
        let mut stalled = false;
        let mut diverged = false;
        for _ in 0..config.sparse_steps {
            let step = gn_step_sparse(&problem, &mut x, &scales, config, outer)?;
            let rec = &step.record;
            let rel = (rec.energy_before - rec.energy_after) / rec.energy_before.max(f64::MIN_POSITIVE);
            if !rec.accepted {
                let negligible = step.predicted_decrease <= config.tolerance * rec.energy_before.max(f64::MIN_POSITIVE);
                stalled = true;
                diverged = !negligible;
            }
            steps.push(step.record);
            if stalled || rel < config.tolerance * 0.1 {
                break;
            }
        }
        if config.refine && problem.k() > 0 {
            let rec = gn_step_dense(&mut problem, &x, &scales, &base, &mut delta, config, outer)?;
            steps.push(rec);
        }
        let end = combined_energy(&problem, &x, &scales, &base, &delta);
        log::debug!("flip-flop {outer}: {start:.6e} -> {end:.6e}");
        if diverged && end >= start {
            log::warn!("solver could not decrease the energy at iteration {outer}; returning best iterate");
            status = SolveStatus::Diverged;
            break;
        }
        if start <= 0.0 || (start - end) / start < config.tolerance {
            status = SolveStatus::Converged;
            break;
        }
    }

    let final_energy = crate::energy::total_energy(&problem, &x) + regularizer_energy(&base, &delta, &problem.weights);
    Ok(SolveOutcome {
        layers: x,
        delta,
        report: SolveReport {
            status,
            outer_iterations: outer_done,
            initial_energy,
            final_energy,
            steps,
        },
    })
}

//! First-frame base color refinement.

use crate::energy::{DecompositionProblem, LayerStack};
use crate::error::Result;
use crate::palette::BaseColorPalette;
use crate::solver::{flip_flop, SolveConfig, SolveReport, SolveStatus};

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub palette: BaseColorPalette,
    /// `‖Δb_k‖` per base color, zero when the update was rejected.
    pub delta_norms: Vec<f64>,
    pub layers: LayerStack,
    pub report: SolveReport,
    /// Whether the palette differs from the input.
    pub refined: bool,
}

/// Solves the first frame with the dense base color phase active and applies
/// the accepted `Δb` to the palette. With refinement disabled in `config` the
/// palette is returned unchanged. A diverged solve keeps the original palette
/// and re-solves the layers against it.
pub fn refine_palette(
    problem: &DecompositionProblem,
    init: LayerStack,
    palette: &BaseColorPalette,
    config: &SolveConfig,
) -> Result<RefineOutcome> {
    let k = palette.k();
    let out = flip_flop(problem, init.clone(), config)?;
    if !config.refine {
        return Ok(RefineOutcome {
            palette: palette.clone(),
            delta_norms: vec![0.0; k],
            layers: out.layers,
            report: out.report,
            refined: false,
        });
    }
    if out.report.status == SolveStatus::Diverged {
        log::warn!("palette refinement diverged; keeping the original palette");
        let fallback = flip_flop(problem, init, &SolveConfig { refine: false, ..config.clone() })?;
        return Ok(RefineOutcome {
            palette: palette.clone(),
            delta_norms: vec![0.0; k],
            layers: fallback.layers,
            report: fallback.report,
            refined: false,
        });
    }
    let mut refined = palette.clone();
    let mut norms = Vec::with_capacity(k);
    for (j, d) in out.delta.iter().enumerate() {
        let c = &mut refined.colors[j];
        for ch in 0..3 {
            c[ch] = (c[ch] + d[ch]).clamp(0.0, 1.0);
        }
        norms.push((0..3).map(|ch| (c[ch] - palette.colors[j][ch]).powi(2)).sum::<f64>().sqrt());
    }
    for (j, n) in norms.iter().enumerate() {
        log::info!("base color {} moved by {n:.4}", j + 1);
    }
    Ok(RefineOutcome {
        refined: norms.iter().any(|n| *n > 0.0),
        palette: refined,
        delta_norms: norms,
        layers: out.layers,
        report: out.report,
    })
}

use std::fmt::Write as _;

use super::lmse::lmse;
use super::scene::{GroundTruthBundle, GroundTruthFrame};
use crate::energy::LayerStack;
use crate::error::{Error, Result};
use crate::imaging::Rgb;
use crate::pipeline::{run_pipeline, FrameResult, PipelineConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariant {
    pub name: String,
    pub config: PipelineConfig,
}

impl AblationVariant {
    pub fn new(name: impl Into<String>, config: PipelineConfig) -> Self {
        AblationVariant {
            name: name.into(),
            config,
        }
    }

    /// `full`, `no-refine`, `no-mono` and `no-consistency` derived from `base`.
    pub fn standard(base: &PipelineConfig) -> Vec<Self> {
        let mut no_refine = base.clone();
        no_refine.first.refine = false;
        let mut no_mono = base.clone();
        no_mono.weights.monochrome = 0.0;
        let mut no_cons = base.clone();
        no_cons.weights.r_consistency = 0.0;
        vec![
            Self::new("full", base.clone()),
            Self::new("no-refine", no_refine),
            Self::new("no-mono", no_mono),
            Self::new("no-consistency", no_cons),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationColumn {
    pub name: String,
    /// Per-frame LMSE, or the failure message.
    pub result: std::result::Result<Vec<f64>, String>,
}

impl AblationColumn {
    pub fn mean(&self) -> Option<f64> {
        self.result
            .as_ref()
            .ok()
            .map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub frames: usize,
    pub columns: Vec<AblationColumn>,
}

impl AblationTable {
    pub fn column(&self, name: &str) -> Option<&AblationColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Rows `frame,variant,lmse`, then one `mean` row per variant. Failed
    /// variants report `failed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,variant,lmse\n");
        for col in &self.columns {
            match &col.result {
                Ok(values) => {
                    for (t, v) in values.iter().enumerate() {
                        let _ = writeln!(out, "{t},{},{v:.8}", col.name);
                    }
                }
                Err(_) => {
                    for t in 0..self.frames {
                        let _ = writeln!(out, "{t},{},failed", col.name);
                    }
                }
            }
        }
        for col in &self.columns {
            match col.mean() {
                Some(m) => {
                    let _ = writeln!(out, "mean,{},{m:.8}", col.name);
                }
                None => {
                    let _ = writeln!(out, "mean,{},failed", col.name);
                }
            }
        }
        out
    }
}

/// Mean of the reflectance and illumination LMSE of one estimated frame.
pub fn frame_lmse(layers: &LayerStack, basis: &[Rgb], truth: &GroundTruthFrame, true_basis: &[Rgb]) -> Result<f64> {
    lmse(
        &layers.reflectance_image(),
        &layers.illumination_image(basis),
        &truth.reflectance,
        &truth.illumination(true_basis),
        layers.width,
        layers.height,
    )
}

/// Per-frame LMSE of a pipeline run against the bundle.
pub fn score_run(bundle: &GroundTruthBundle, basis: &[Rgb], results: &[FrameResult]) -> Result<Vec<f64>> {
    let true_basis = bundle.basis();
    results
        .iter()
        .zip(&bundle.frames)
        .map(|(r, t)| frame_lmse(&r.layers, basis, t, &true_basis))
        .collect()
}

/// Runs the pipeline once per variant over the bundle's input frames.
pub fn run_ablation(bundle: &GroundTruthBundle, variants: &[AblationVariant]) -> Result<AblationTable> {
    if bundle.frames.len() < 5 {
        return Err(Error::Config(format!(
            "ablation needs at least 5 frames, bundle has {}",
            bundle.frames.len()
        )));
    }
    let frames: Vec<_> = bundle.frames.iter().map(|f| f.input.clone()).collect();
    let columns = variants
        .iter()
        .map(|v| {
            log::info!("ablation variant {}", v.name);
            let result = run_pipeline(&frames, &[], &v.config)
                .and_then(|(palette, results)| score_run(bundle, &palette.basis(), &results))
                .map_err(|e| {
                    log::warn!("variant {} failed: {e}", v.name);
                    e.to_string()
                });
            AblationColumn {
                name: v.name.clone(),
                result,
            }
        })
        .collect();
    Ok(AblationTable {
        frames: frames.len(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{render_scene, SyntheticScene};

    fn small_bundle(frames: usize) -> GroundTruthBundle {
        let mut s = SyntheticScene::default_room();
        s.width = 40;
        s.height = 40;
        s.frames = frames;
        s.camera.pixel_size *= 128.0 / 40.0;
        render_scene(&s, 0).unwrap()
    }

    #[test]
    fn ground_truth_layers_score_zero() {
        let b = small_bundle(1);
        let basis = b.basis();
        let f = &b.frames[0];
        let mut layers = LayerStack::zeros(b.width, b.height, b.palette.len());
        for i in 0..layers.pixel_count() {
            let px = layers.pixel_mut(i);
            for c in 0..3 {
                px[c] = f.reflectance[i][c].ln();
            }
            for (l, layer) in f.layers.iter().enumerate() {
                px[3 + l] = layer[i];
            }
        }
        assert!(frame_lmse(&layers, &basis, f, &basis).unwrap() < 1e-20);
    }

    #[test]
    fn repeated_variants_give_identical_columns() {
        let b = small_bundle(5);
        let mut cfg = PipelineConfig::default();
        cfg.first.outer_iterations = 2;
        cfg.streaming.outer_iterations = 1;
        let v = AblationVariant::new("a", cfg);
        let table = run_ablation(&b, &[v.clone(), AblationVariant { name: "b".into(), ..v }]).unwrap();
        assert_eq!(table.columns[0].result, table.columns[1].result);
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 5 + 2);
        assert!(csv.starts_with("frame,variant,lmse\n0,a,"));
    }

    #[test]
    fn short_bundles_are_rejected() {
        let b = small_bundle(1);
        assert!(run_ablation(&b, &AblationVariant::standard(&PipelineConfig::default())).is_err());
    }
}

//! Frame-by-frame driver: first-frame clustering, click corrections and
//! palette refinement, then warm-started streaming decomposition.

use serde::{Deserialize, Serialize};

use crate::correction::{
    correct_reflectance, extend_region, identify_region, track_region, CorrectionOutcome, CorrectionSettings,
    RegionMask, TrackingMode,
};
use crate::energy::{ConsistencyConfig, DecompositionProblem, EnergyWeights, LayerStack};
use crate::error::{Error, Result};
use crate::imaging::{chromaticity, Frame, Rgb};
use crate::palette::{estimate_palette, segment, BaseColorPalette, ClusterMap};
use crate::refine::refine_palette;
use crate::solver::{flip_flop, initialize, Preconditioner, SolveConfig, SolveReport};

pub const DEFAULT_K_MAX: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub weights: EnergyWeights,
    pub consistency: ConsistencyConfig,
    pub first: SolveConfig,
    pub streaming: SolveConfig,
    pub k_max: usize,
    pub seed: u64,
    pub tracking: TrackingMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            weights: EnergyWeights::default(),
            consistency: ConsistencyConfig::default(),
            first: SolveConfig::first_frame(),
            streaming: SolveConfig::streaming(),
            k_max: DEFAULT_K_MAX,
            seed: 0,
            tracking: TrackingMode::BoundarySeeds,
        }
    }
}

impl PipelineConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.weights.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.weights.set(key, value)? {
            return Ok(());
        }
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "k_max" => self.k_max = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "refine" => self.first.refine = num(key, value)?,
            "outer_iterations" => self.first.outer_iterations = num(key, value)?,
            "streaming_outer_iterations" => self.streaming.outer_iterations = num(key, value)?,
            "sparse_steps" => {
                self.first.sparse_steps = num(key, value)?;
                self.streaming.sparse_steps = self.first.sparse_steps;
            }
            "pcg_iterations" => {
                self.first.pcg_iterations = num(key, value)?;
                self.streaming.pcg_iterations = self.first.pcg_iterations;
            }
            "max_halvings" => {
                self.first.max_halvings = num(key, value)?;
                self.streaming.max_halvings = self.first.max_halvings;
            }
            "tolerance" => {
                self.first.tolerance = num(key, value)?;
                self.streaming.tolerance = self.first.tolerance;
            }
            "preconditioner" => {
                let p = match value {
                    "jacobi" => Preconditioner::Jacobi,
                    "block_jacobi" => Preconditioner::BlockJacobi,
                    other => return Err(Error::Config(format!("unknown preconditioner {other:?}"))),
                };
                self.first.preconditioner = p;
                self.streaming.preconditioner = p;
            }
            "tracking" => {
                self.tracking = match value {
                    "boundary_seeds" => TrackingMode::BoundarySeeds,
                    "all_seeds" => TrackingMode::AllSeeds,
                    other => return Err(Error::Config(format!("unknown tracking mode {other:?}"))),
                }
            }
            "consistency_window" => {
                let w: usize = num(key, value)?;
                if w % 2 == 0 {
                    return Err(Error::Config("consistency_window must be odd".into()));
                }
                self.consistency.window = w;
            }
            "consistency_samples" => self.consistency.samples = num(key, value)?,
            "consistency_tau" => self.consistency.tau = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn correction_settings(&self) -> CorrectionSettings {
        CorrectionSettings {
            weights: self.weights.clone(),
            consistency: self.consistency,
            solve: SolveConfig {
                refine: false,
                ..self.first.clone()
            },
            seed: self.seed,
        }
    }
}

/// Operator click on the first frame. `extend` merges the clicked component
/// into the most recent region instead of starting a new one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub x: usize,
    pub y: usize,
    #[serde(default)]
    pub extend: bool,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub index: usize,
    pub layers: LayerStack,
    pub clusters: ClusterMap,
    pub report: SolveReport,
    pub regions: Vec<RegionMask>,
    /// Regions dropped in this frame because no seed survived.
    pub lost: usize,
}

/// Stateful driver over one video.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    /// Palette from clustering, before refinement.
    pub initial_palette: BaseColorPalette,
    /// Palette used for decomposition, refined once on the first frame.
    pub palette: BaseColorPalette,
    first_frame: Frame,
    first_clusters: ClusterMap,
    /// Clusters of the first frame before any click correction.
    raw_clusters: ClusterMap,
    dark: Vec<bool>,
    regions: Vec<RegionMask>,
    previous: Option<(Frame, FrameResult)>,
}

impl Pipeline {
    /// Clusters the first frame. Call [`Pipeline::click`] for corrections and
    /// then [`Pipeline::solve_first`].
    pub fn new(first: &Frame, config: PipelineConfig) -> Result<Self> {
        first.ensure_min_size()?;
        config.weights.validate()?;
        let (palette, clusters) = estimate_palette(first, config.k_max, config.seed)?;
        log::info!("estimated {} base colors", palette.k());
        let dark = chromaticity(first).dark;
        Ok(Pipeline {
            config,
            initial_palette: palette.clone(),
            palette,
            first_frame: first.clone(),
            raw_clusters: clusters.clone(),
            first_clusters: clusters,
            dark,
            regions: Vec::new(),
            previous: None,
        })
    }

    /// Starts from a known palette and cluster map instead of clustering.
    pub fn with_clusters(first: &Frame, palette: BaseColorPalette, clusters: ClusterMap, config: PipelineConfig) -> Result<Self> {
        first.ensure_min_size()?;
        config.weights.validate()?;
        if clusters.ids.len() != first.len() {
            return Err(Error::Dimensions {
                expected: first.dims(),
                actual: (clusters.width, clusters.height),
            });
        }
        Ok(Pipeline {
            dark: chromaticity(first).dark,
            initial_palette: palette.clone(),
            palette,
            first_frame: first.clone(),
            raw_clusters: clusters.clone(),
            first_clusters: clusters,
            regions: Vec::new(),
            previous: None,
            config,
        })
    }

    pub fn first_clusters(&self) -> &ClusterMap {
        &self.first_clusters
    }

    pub fn regions(&self) -> &[RegionMask] {
        &self.regions
    }

    pub fn basis(&self) -> Vec<Rgb> {
        self.palette.basis()
    }

    pub fn latest(&self) -> Option<&FrameResult> {
        self.previous.as_ref().map(|(_, r)| r)
    }

    /// Identifies (or extends) a misclustered region on the first frame and
    /// selects its corrected base color. Resets any decomposition state. A
    /// failed click leaves the pipeline unchanged.
    pub fn click(&mut self, click: Click) -> Result<(RegionMask, CorrectionOutcome)> {
        let mut clusters = self.first_clusters.clone();
        let mut regions = self.regions.clone();
        let target = if click.extend && !regions.is_empty() {
            let mut region = regions.pop().expect("non-empty");
            // restore the source ids so the merged region is scored from scratch
            for &p in &region.pixels {
                clusters.ids[p as usize] = self.raw_clusters.ids[p as usize];
            }
            extend_region(&mut region, (click.x, click.y), &clusters, &self.dark)?;
            region
        } else {
            identify_region((click.x, click.y), &clusters, &self.dark)?
        };
        let outcome = correct_reflectance(
            &target,
            &self.first_frame,
            &self.initial_palette,
            &clusters,
            &self.config.correction_settings(),
        )?;
        let mut region = target;
        region.corrected_id = outcome.corrected_id;
        region.apply(&mut clusters);
        regions.push(region.clone());
        self.first_clusters = clusters;
        self.regions = regions;
        self.previous = None;
        self.palette = self.initial_palette.clone();
        Ok((region, outcome))
    }

    /// Refines the palette (if enabled) and decomposes the first frame.
    pub fn solve_first(&mut self) -> Result<&FrameResult> {
        let frame = &self.first_frame;
        let problem = DecompositionProblem::build(
            frame,
            &self.initial_palette,
            &self.first_clusters,
            None,
            self.config.weights.clone(),
            &self.config.consistency,
            self.config.seed,
        );
        let init = initialize(frame, &self.first_clusters, &self.initial_palette, None);
        let out = refine_palette(&problem, init, &self.initial_palette, &self.config.first)?;
        self.palette = out.palette;
        let result = FrameResult {
            index: 0,
            layers: out.layers,
            clusters: self.first_clusters.clone(),
            report: out.report,
            regions: self.regions.clone(),
            lost: 0,
        };
        self.previous = Some((frame.clone(), result));
        Ok(self.latest().expect("just stored"))
    }

    /// Decomposes the next frame, warm-started from the previous one.
    pub fn next_frame(&mut self, frame: &Frame) -> Result<&FrameResult> {
        let (prev_frame, prev) = self
            .previous
            .take()
            .ok_or_else(|| Error::Config("next_frame called before solve_first".into()))?;
        if frame.dims() != prev_frame.dims() {
            self.previous = Some((prev_frame, prev));
            return Err(Error::Dimensions {
                expected: self.first_frame.dims(),
                actual: frame.dims(),
            });
        }
        let index = prev.index + 1;
        let mut clusters = segment(frame, &self.palette);
        let mut regions = Vec::with_capacity(prev.regions.len());
        let mut lost = 0;
        for r in &prev.regions {
            match track_region(r, &clusters, self.config.tracking) {
                Ok(mut t) => {
                    t.frame = index;
                    regions.push(t);
                }
                Err(Error::RegionLost) => {
                    log::warn!("region seeded at {:?} lost in frame {index}", r.seed);
                    lost += 1;
                }
                Err(e) => return Err(e),
            }
        }
        for r in &regions {
            r.apply(&mut clusters);
        }
        let prev_log: Vec<Rgb> = (0..prev.layers.pixel_count()).map(|i| prev.layers.log_reflectance(i)).collect();
        let problem = DecompositionProblem::build(
            frame,
            &self.palette,
            &clusters,
            Some((&prev_frame, &prev_log)),
            self.config.weights.clone(),
            &self.config.consistency,
            self.config.seed.wrapping_add(index as u64),
        );
        let init = warm_start(frame, &clusters, &self.palette, &prev.layers, &prev.clusters);
        let out = flip_flop(&problem, init, &SolveConfig { refine: false, ..self.config.streaming.clone() })?;
        let result = FrameResult {
            index,
            layers: out.layers,
            clusters,
            report: out.report,
            regions,
            lost,
        };
        self.previous = Some((frame.clone(), result));
        Ok(self.latest().expect("just stored"))
    }
}

/// Copies the previous solution where a pixel kept its cluster id and falls
/// back to the cold initialization where it did not.
pub fn warm_start(
    frame: &Frame,
    clusters: &ClusterMap,
    palette: &BaseColorPalette,
    previous: &LayerStack,
    previous_clusters: &ClusterMap,
) -> LayerStack {
    let mut x = initialize(frame, clusters, palette, None);
    let s = x.stride();
    for i in 0..x.pixel_count() {
        if clusters.ids[i] == previous_clusters.ids[i] {
            x.values[i * s..(i + 1) * s].copy_from_slice(previous.pixel(i));
        }
    }
    x
}

/// Runs the whole pipeline over `frames`, applying `clicks` to the first frame.
pub fn run_pipeline(frames: &[Frame], clicks: &[Click], config: &PipelineConfig) -> Result<(BaseColorPalette, Vec<FrameResult>)> {
    let first = frames.first().ok_or_else(|| Error::Config("no input frames".into()))?;
    let mut p = Pipeline::new(first, config.clone())?;
    for &c in clicks {
        p.click(c)?;
    }
    let mut results = vec![p.solve_first()?.clone()];
    for f in &frames[1..] {
        results.push(p.next_frame(f)?.clone());
    }
    Ok((p.palette.clone(), results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_overrides_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::parse("# comment\nlambda_data = 100\nk_max=4\nrefine = false\ntracking = all_seeds\n").unwrap();
        assert_eq!(cfg.weights.data, 100.0);
        assert_eq!(cfg.k_max, 4);
        assert!(!cfg.first.refine);
        assert_eq!(cfg.tracking, TrackingMode::AllSeeds);
        assert!(PipelineConfig::parse("bogus = 1").is_err());
        assert!(PipelineConfig::parse("lambda_data = -1").is_err());
        assert!(PipelineConfig::parse("consistency_window = 4").is_err());
        assert!(PipelineConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn single_frame_input_yields_one_result() {
        let frame = Frame::from_fn(16, 16, |x, _| if x < 8 { [0.6, 0.2, 0.1] } else { [0.2, 0.3, 0.6] });
        let cfg = PipelineConfig {
            k_max: 4,
            ..PipelineConfig::default()
        };
        let (palette, results) = run_pipeline(&[frame], &[], &cfg).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(palette.k(), 2);
    }

    #[test]
    fn streaming_needs_a_first_frame() {
        let frame = Frame::filled(8, 8, [0.4; 3]);
        let mut p = Pipeline::new(&frame, PipelineConfig::default()).unwrap();
        assert!(p.next_frame(&frame).is_err());
    }
}

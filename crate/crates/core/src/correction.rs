//! Click-seeded misclustering regions, their tracking through the video, and
//! the sparsity-based choice of the corrected base color.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::energy::{ConsistencyConfig, DecompositionProblem, EnergyWeights};
use crate::error::{Error, Result};
use crate::imaging::{Frame, Rgb};
use crate::palette::{BaseColorPalette, ClusterMap};
use crate::par;
use crate::solver::{flip_flop, initialize, SolveConfig};

/// Padding around the region's bounding box for candidate solves.
pub const CORRECTION_PADDING: usize = 16;

/// 4-connected set of pixels that shared `source_id` when identified or tracked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    /// Member pixel indices, ascending.
    pub pixels: Vec<u32>,
    pub source_id: usize,
    pub corrected_id: usize,
    pub seed: (usize, usize),
}

impl RegionMask {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.pixels.binary_search(&(i as u32)).is_ok()
    }

    pub fn as_bitmap(&self) -> Vec<bool> {
        let mut m = vec![false; self.width * self.height];
        for &p in &self.pixels {
            m[p as usize] = true;
        }
        m
    }

    /// `(x0, y0, w, h)` of the member pixels.
    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &p in &self.pixels {
            let (x, y) = (p as usize % self.width, p as usize / self.width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    /// Intersection over union with another mask of the same size.
    pub fn iou(&self, other: &[bool]) -> f64 {
        let mine = self.as_bitmap();
        let inter = mine.iter().zip(other).filter(|(a, b)| **a && **b).count();
        let union = mine.iter().zip(other).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Writes `corrected_id` into the member pixels of `clusters`.
    pub fn apply(&self, clusters: &mut ClusterMap) {
        for &p in &self.pixels {
            clusters.ids[p as usize] = self.corrected_id as u16;
        }
    }
}

/// 4-connected flood fill over pixels with id `id`, from `seeds`, skipping
/// pixels already marked in `visited`.
fn flood(clusters: &ClusterMap, id: u16, seeds: impl IntoIterator<Item = usize>, visited: &mut [bool]) {
    let (w, h) = (clusters.width, clusters.height);
    let mut queue: VecDeque<usize> = VecDeque::new();
    for s in seeds {
        if clusters.ids[s] == id {
            visited[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut push = |j: usize| {
            if !visited[j] && clusters.ids[j] == id {
                visited[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < w {
            push(i + 1);
        }
        if y > 0 {
            push(i - w);
        }
        if y + 1 < h {
            push(i + w);
        }
    }
}

fn mask_pixels(bitmap: &[bool]) -> Vec<u32> {
    bitmap
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i as u32))
        .collect()
}

/// Flood-fills the clicked pixel's cluster. `dark` marks pixels that cannot be
/// clicked.
pub fn identify_region(click: (usize, usize), clusters: &ClusterMap, dark: &[bool]) -> Result<RegionMask> {
    let (x, y) = click;
    let (w, h) = (clusters.width, clusters.height);
    if x >= w || y >= h || dark.get(y * w + x).copied().unwrap_or(false) {
        return Err(Error::EmptyRegion { x, y });
    }
    let id = clusters.ids[y * w + x];
    let mut visited = vec![false; w * h];
    flood(clusters, id, [y * w + x], &mut visited);
    Ok(RegionMask {
        frame: 0,
        width: w,
        height: h,
        pixels: mask_pixels(&visited),
        source_id: id as usize,
        corrected_id: id as usize,
        seed: click,
    })
}

/// Adds the component under a further click to `region`. The click must hit the
/// region's source cluster.
pub fn extend_region(region: &mut RegionMask, click: (usize, usize), clusters: &ClusterMap, dark: &[bool]) -> Result<()> {
    let extra = identify_region(click, clusters, dark)?;
    if extra.source_id != region.source_id {
        return Err(Error::EmptyRegion { x: click.0, y: click.1 });
    }
    let mut bitmap = region.as_bitmap();
    for p in extra.pixels {
        bitmap[p as usize] = true;
    }
    region.pixels = mask_pixels(&bitmap);
    Ok(())
}

/// How tracking treats seeds that lie inside the previous region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    /// Interior seeds are unioned directly; fills start only from seeds with a
    /// 4-neighbor outside the seed set.
    #[default]
    BoundarySeeds,
    /// Every seed starts a fill.
    AllSeeds,
}

/// Probes the previous region's pixels in the current cluster map and grows the
/// surviving seeds into full components.
pub fn track_region(prev: &RegionMask, clusters: &ClusterMap, mode: TrackingMode) -> Result<RegionMask> {
    let (w, h) = (clusters.width, clusters.height);
    if (w, h) != (prev.width, prev.height) {
        return Err(Error::Dimensions {
            expected: (prev.width, prev.height),
            actual: (w, h),
        });
    }
    let id = prev.source_id as u16;
    let seeds: Vec<usize> = prev
        .pixels
        .iter()
        .map(|&p| p as usize)
        .filter(|&p| clusters.ids[p] == id)
        .collect();
    if seeds.is_empty() {
        return Err(Error::RegionLost);
    }
    let mut visited = vec![false; w * h];
    match mode {
        TrackingMode::AllSeeds => flood(clusters, id, seeds, &mut visited),
        TrackingMode::BoundarySeeds => {
            let mut is_seed = vec![false; w * h];
            for &s in &seeds {
                is_seed[s] = true;
            }
            let interior = |i: usize| {
                let (x, y) = (i % w, i / w);
                x > 0 && x + 1 < w && y > 0 && y + 1 < h && is_seed[i - 1] && is_seed[i + 1] && is_seed[i - w] && is_seed[i + w]
            };
            let mut frontier = Vec::new();
            for &s in &seeds {
                if interior(s) {
                    visited[s] = true;
                } else {
                    frontier.push(s);
                }
            }
            // pixels adjacent to an interior seed are seeds themselves, so
            // filling from the frontier reaches everything reachable from any seed
            flood(clusters, id, frontier, &mut visited);
        }
    }
    Ok(RegionMask {
        frame: prev.frame + 1,
        width: w,
        height: h,
        pixels: mask_pixels(&visited),
        source_id: prev.source_id,
        corrected_id: prev.corrected_id,
        seed: prev.seed,
    })
}

/// Result of the candidate search.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub corrected_id: usize,
    /// `Σ_region Σ_{j≥1} |T_j|` per candidate `k = 1..K`; `None` if its solve failed.
    pub scores: Vec<Option<f64>>,
}

/// Settings shared by all candidate solves.
#[derive(Debug, Clone)]
pub struct CorrectionSettings {
    pub weights: EnergyWeights,
    pub consistency: ConsistencyConfig,
    pub solve: SolveConfig,
    pub seed: u64,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        CorrectionSettings {
            weights: EnergyWeights::default(),
            consistency: ConsistencyConfig::default(),
            solve: SolveConfig {
                refine: false,
                ..SolveConfig::first_frame()
            },
            seed: 0,
        }
    }
}

/// Re-solves the padded bounding box of `region` once per base color `k`, with
/// the region's clustered reflectance set to `b_k`, and returns the candidate
/// whose indirect layers are sparsest over the region. Ties go to the lower id.
pub fn correct_reflectance(
    region: &RegionMask,
    frame: &Frame,
    palette: &BaseColorPalette,
    clusters: &ClusterMap,
    settings: &CorrectionSettings,
) -> Result<CorrectionOutcome> {
    if region.is_empty() {
        return Err(Error::EmptyRegion {
            x: region.seed.0,
            y: region.seed.1,
        });
    }
    let k = palette.k();
    if k == 1 {
        return Ok(CorrectionOutcome {
            corrected_id: 1,
            scores: vec![None],
        });
    }
    let (w, h) = frame.dims();
    let (bx, by, bw, bh) = region.bounding_box();
    let x0 = bx.saturating_sub(CORRECTION_PADDING);
    let y0 = by.saturating_sub(CORRECTION_PADDING);
    let x1 = (bx + bw + CORRECTION_PADDING).min(w);
    let y1 = (by + bh + CORRECTION_PADDING).min(h);
    let (cw, ch) = (x1 - x0, y1 - y0);
    let sub_frame = frame.crop(x0, y0, cw, ch);
    let members: Vec<usize> = region
        .pixels
        .iter()
        .map(|&p| {
            let (x, y) = (p as usize % w, p as usize / w);
            (y - y0) * cw + (x - x0)
        })
        .collect();

    let solve_candidate = |cand: usize| -> Result<f64> {
        let mut sub_clusters = clusters.crop(x0, y0, cw, ch);
        for &m in &members {
            sub_clusters.ids[m] = cand as u16;
        }
        let problem = DecompositionProblem::build(
            &sub_frame,
            palette,
            &sub_clusters,
            None,
            settings.weights.clone(),
            &settings.consistency,
            settings.seed,
        );
        let init = initialize(&sub_frame, &sub_clusters, palette, None);
        let out = flip_flop(&problem, init, &settings.solve)?;
        let score: f64 = members
            .iter()
            .map(|&m| (1..=k).map(|j| out.layers.transport(m, j).abs()).sum::<f64>())
            .sum();
        if score.is_finite() {
            Ok(score)
        } else {
            Err(Error::NumericalFault {
                iteration: 0,
                detail: format!("candidate {cand} produced a non-finite score"),
            })
        }
    };
    let scores: Vec<Option<f64>> = par::map_indexed(k, |i| match solve_candidate(i + 1) {
        Ok(s) => Some(s),
        Err(err) => {
            log::warn!("correction candidate {} skipped: {err}", i + 1);
            None
        }
    });
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i + 1, s));
            }
        }
    }
    match best {
        Some((id, _)) => Ok(CorrectionOutcome { corrected_id: id, scores }),
        None => Err(Error::CorrectionFailed),
    }
}

/// Deliberately misclustered spill scene: a green wall casts green light onto
/// a white floor, and a white floor patch near the wall is labelled green.
#[derive(Debug, Clone)]
pub struct SpillFixture {
    pub frame: Frame,
    pub palette: BaseColorPalette,
    pub clusters: ClusterMap,
    pub click: (usize, usize),
    /// Id of the white base color.
    pub white_id: usize,
    pub green_id: usize,
    /// The patch's true extent.
    pub patch: Vec<bool>,
}

/// Builds the fixture directly from the image model with seeded geometry and
/// lighting variations.
pub fn spill_fixture(seed: u64) -> SpillFixture {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (48usize, 40usize);
    let white: Rgb = [0.8, 0.8, 0.8];
    let green: Rgb = [0.15, 0.7, 0.2];
    let red: Rgb = [0.75, 0.2, 0.15];
    let palette = BaseColorPalette::new(vec![white, green, red]);
    let wall = rng.gen_range(10..14usize);
    let gap = 2;
    let pw = rng.gen_range(6..10usize);
    let ph = rng.gen_range(8..14usize);
    let py = rng.gen_range(6..h - ph - 6);
    let px = wall + gap;
    let t0 = rng.gen_range(0.55..0.75);
    let spill = rng.gen_range(0.35..0.5);
    let decay = rng.gen_range(6.0..10.0);
    let mut data = Vec::with_capacity(w * h);
    let mut ids = Vec::with_capacity(w * h);
    let mut patch = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let shade = t0 * (1.0 - 0.004 * y as f64);
            let in_patch = x >= px && x < px + pw && y >= py && y < py + ph;
            let (r, tg, id) = if x < wall {
                (green, 0.0, 2)
            } else {
                let tg = spill * (-((x - wall) as f64) / decay).exp();
                (white, tg, if in_patch { 2 } else { 1 })
            };
            let s = [shade + green[0] * tg, shade + green[1] * tg, shade + green[2] * tg];
            data.push([r[0] * s[0], r[1] * s[1], r[2] * s[2]]);
            ids.push(id);
            patch.push(in_patch);
        }
    }
    SpillFixture {
        frame: Frame::new(w, h, data).expect("fixture dimensions"),
        palette,
        clusters: ClusterMap { width: w, height: h, ids },
        click: (px + pw / 2, py + ph / 2),
        white_id: 1,
        green_id: 2,
        patch,
    }
}

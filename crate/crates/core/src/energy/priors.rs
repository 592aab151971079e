//! Auxiliary maps that stay fixed during a solve: the soft-color-Retinex gate
//! and the spatiotemporal consistency partners.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{chroma_distance, ChromaticityImage};
use crate::par;

/// Gain inside `w_SR = 1 - exp(-gain * ΔC)`.
pub const RETINEX_GAIN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RetinexWeightMap {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

pub fn retinex_weight(delta_c: f64) -> f64 {
    1.0 - (-RETINEX_GAIN * delta_c).exp()
}

/// `ΔC` is the largest chromaticity difference to any of the four neighbors.
pub fn build_retinex_weights(chroma: &ChromaticityImage) -> RetinexWeightMap {
    let (w, h) = (chroma.width, chroma.height);
    let weights = par::map_indexed(w * h, |i| {
        let (x, y) = (i % w, i / w);
        let c = chroma.chroma[i];
        let mut delta: f64 = 0.0;
        let mut probe = |j: usize| delta = delta.max(chroma_distance(c, chroma.chroma[j]));
        if x > 0 {
            probe(i - 1);
        }
        if x + 1 < w {
            probe(i + 1);
        }
        if y > 0 {
            probe(i - w);
        }
        if y + 1 < h {
            probe(i + w);
        }
        retinex_weight(delta)
    });
    RetinexWeightMap {
        width: w,
        height: h,
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    /// Side of the square spatial window (odd).
    pub window: usize,
    pub samples: usize,
    /// Chromaticity distance below which a partner counts.
    pub tau: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            window: 15,
            samples: 4,
            tau: 0.05,
        }
    }
}

/// One sampled partner of a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partner {
    /// Linear pixel index of the partner.
    pub index: u32,
    /// Partner lives in the previous frame (its reflectance is a constant).
    pub temporal: bool,
    /// Binary chroma-closeness gate.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencySamples {
    pub width: usize,
    pub height: usize,
    pub per_pixel: usize,
    /// `partners[i * per_pixel + s]`.
    pub partners: Vec<Partner>,
    /// CSR reverse index of same-frame partners: pixel `j` is the partner of the
    /// flat samples `incoming[incoming_offsets[j]..incoming_offsets[j + 1]]`.
    pub incoming_offsets: Vec<u32>,
    pub incoming: Vec<u32>,
}

impl ConsistencySamples {
    pub fn empty(width: usize, height: usize) -> Self {
        ConsistencySamples {
            width,
            height,
            per_pixel: 0,
            partners: Vec::new(),
            incoming_offsets: vec![0; width * height + 1],
            incoming: Vec::new(),
        }
    }

    pub fn from_partners(width: usize, height: usize, per_pixel: usize, partners: Vec<Partner>) -> Self {
        let n = width * height;
        assert_eq!(partners.len(), n * per_pixel);
        let mut counts = vec![0u32; n + 1];
        for p in &partners {
            if !p.temporal && p.weight > 0.0 {
                counts[p.index as usize + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let mut fill = counts.clone();
        let mut incoming = vec![0u32; counts[n] as usize];
        for (flat, p) in partners.iter().enumerate() {
            if !p.temporal && p.weight > 0.0 {
                let slot = &mut fill[p.index as usize];
                incoming[*slot as usize] = flat as u32;
                *slot += 1;
            }
        }
        ConsistencySamples {
            width,
            height,
            per_pixel,
            partners,
            incoming_offsets: counts,
            incoming,
        }
    }

    pub fn incoming_of(&self, j: usize) -> &[u32] {
        &self.incoming[self.incoming_offsets[j] as usize..self.incoming_offsets[j + 1] as usize]
    }

    /// Restricts samples to a crop window; partners falling outside get weight 0.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut partners = Vec::with_capacity(w * h * self.per_pixel);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let i = y * self.width + x;
                for s in 0..self.per_pixel {
                    let p = self.partners[i * self.per_pixel + s];
                    let (px, py) = (p.index as usize % self.width, p.index as usize / self.width);
                    let inside = px >= x0 && px < x0 + w && py >= y0 && py < y0 + h;
                    partners.push(if inside {
                        Partner {
                            index: ((py - y0) * w + (px - x0)) as u32,
                            ..p
                        }
                    } else {
                        Partner {
                            index: 0,
                            temporal: false,
                            weight: 0.0,
                        }
                    });
                }
            }
        }
        Self::from_partners(w, h, self.per_pixel, partners)
    }
}

/// Draws `config.samples` partners per pixel uniformly from the spatial window
/// in the current frame and, when `previous` is given, the previous frame.
pub fn sample_consistency(
    current: &ChromaticityImage,
    previous: Option<&ChromaticityImage>,
    seed: u64,
    config: &ConsistencyConfig,
) -> ConsistencySamples {
    let (w, h) = (current.width, current.height);
    if config.samples == 0 {
        return ConsistencySamples::empty(w, h);
    }
    let half = (config.window / 2) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partners = Vec::with_capacity(w * h * config.samples);
    let frames = if previous.is_some() { 2 } else { 1 };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let c = current.chroma[(y as usize) * w + x as usize];
            for _ in 0..config.samples {
                let temporal = frames == 2 && rng.gen_bool(0.5);
                // offsets are drawn from the window clipped to the frame
                let (lo_x, hi_x) = ((-half).max(-x), half.min(w as i64 - 1 - x));
                let (lo_y, hi_y) = ((-half).max(-y), half.min(h as i64 - 1 - y));
                let mut found = None;
                for _ in 0..8 {
                    let dx = rng.gen_range(lo_x..=hi_x);
                    let dy = rng.gen_range(lo_y..=hi_y);
                    if !temporal && dx == 0 && dy == 0 {
                        continue;
                    }
                    found = Some((y + dy) as usize * w + (x + dx) as usize);
                    break;
                }
                partners.push(match found {
                    Some(j) => {
                        let other = if temporal {
                            previous.expect("temporal partner needs a previous frame").chroma[j]
                        } else {
                            current.chroma[j]
                        };
                        Partner {
                            index: j as u32,
                            temporal,
                            weight: if chroma_distance(c, other) < config.tau { 1.0 } else { 0.0 },
                        }
                    }
                    None => Partner {
                        index: 0,
                        temporal: false,
                        weight: 0.0,
                    },
                });
            }
        }
    }
    ConsistencySamples::from_partners(w, h, config.samples, partners)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{chromaticity, Frame};
    use approx::assert_relative_eq;

    #[test]
    fn retinex_examples() {
        let flat = chromaticity(&Frame::filled(8, 8, [0.3, 0.5, 0.2]));
        assert!(build_retinex_weights(&flat).weights.iter().all(|w| *w == 0.0));
        assert_relative_eq!(retinex_weight(0.1), 0.993_262_053_000_914_5, epsilon = 1e-12);
        assert!(retinex_weight(1e6) <= 1.0);
        assert!(retinex_weight(0.5) < 1.0);
    }

    #[test]
    fn retinex_uses_max_neighbor_difference() {
        let f = Frame::from_fn(8, 8, |x, _| if x < 4 { [0.6, 0.2, 0.2] } else { [0.2, 0.6, 0.2] });
        let c = chromaticity(&f);
        let m = build_retinex_weights(&c);
        let d = chroma_distance(c.at(3, 0), c.at(4, 0));
        assert_relative_eq!(m.weights[3], retinex_weight(d), epsilon = 1e-12);
        assert_relative_eq!(m.weights[4], retinex_weight(d), epsilon = 1e-12);
        assert_eq!(m.weights[0], 0.0);
    }

    #[test]
    fn uniform_chroma_gates_everything_open() {
        let c = chromaticity(&Frame::filled(16, 16, [0.3, 0.3, 0.5]));
        let s = sample_consistency(&c, Some(&c), 9, &ConsistencyConfig::default());
        assert!(s.partners.iter().all(|p| p.weight == 1.0));
        assert!(s.partners.iter().any(|p| p.temporal));
    }

    #[test]
    fn partners_across_an_edge_are_gated() {
        let f = Frame::from_fn(32, 8, |x, _| if x < 16 { [0.8, 0.1, 0.1] } else { [0.1, 0.1, 0.8] });
        let c = chromaticity(&f);
        let s = sample_consistency(&c, None, 1, &ConsistencyConfig::default());
        for (flat, p) in s.partners.iter().enumerate() {
            let i = flat / s.per_pixel;
            let same_side = (i % 32 < 16) == (p.index as usize % 32 < 16);
            assert_eq!(p.weight == 1.0, same_side);
            let (dx, dy) = (
                (i % 32) as i64 - (p.index as usize % 32) as i64,
                (i / 32) as i64 - (p.index as usize / 32) as i64,
            );
            assert!(dx.abs() <= 7 && dy.abs() <= 7);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_indexed() {
        let c = chromaticity(&Frame::from_fn(12, 9, |x, y| [0.2 + 0.01 * x as f64, 0.3, 0.1 + 0.02 * y as f64]));
        let a = sample_consistency(&c, None, 42, &ConsistencyConfig::default());
        let b = sample_consistency(&c, None, 42, &ConsistencyConfig::default());
        assert_eq!(a, b);
        for j in 0..12 * 9 {
            for &flat in a.incoming_of(j) {
                assert_eq!(a.partners[flat as usize].index as usize, j);
            }
        }
        let total: usize = (0..12 * 9).map(|j| a.incoming_of(j).len()).sum();
        assert_eq!(total, a.partners.iter().filter(|p| p.weight > 0.0 && !p.temporal).count());
    }
}

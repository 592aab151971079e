//! Base color estimation by weighted k-means over a chromaticity histogram.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{chroma_distance, chroma_of, chromaticity, ChromaticityImage, Frame, Rgb};
use crate::par;

/// Partitions along each chromaticity axis.
pub const HIST_BINS: usize = 10;
/// Centers closer than this (Euclidean in `(r, g)`) are merged.
pub const MERGE_THRESHOLD: f64 = 0.2;
pub const KMEANS_MAX_ITERATIONS: usize = 100;
/// White illuminant color.
pub const ILLUMINANT: Rgb = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub count: usize,
    pub mid: [f64; 2],
    pub mean_rgb: Rgb,
}

#[derive(Debug, Clone)]
pub struct ChromaHistogram {
    /// Row-major over `(r_bin, g_bin)`: index `r_bin * HIST_BINS + g_bin`.
    pub bins: Vec<HistogramBin>,
}

impl ChromaHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn populated(&self) -> impl Iterator<Item = (usize, &HistogramBin)> {
        self.bins.iter().enumerate().filter(|(_, b)| b.count > 0)
    }
}

pub fn bin_index(chroma: [f64; 2]) -> usize {
    let b = |v: f64| ((v * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1);
    b(chroma[0]) * HIST_BINS + b(chroma[1])
}

pub fn build_histogram(chroma: &ChromaticityImage) -> Result<ChromaHistogram> {
    let n = chroma.chroma.len();
    let (counts, sums) = par::fold_chunks(
        n,
        par::REDUCE_CHUNK,
        || (vec![0usize; HIST_BINS * HIST_BINS], vec![[0.0f64; 3]; HIST_BINS * HIST_BINS]),
        |(counts, sums), i| {
            if chroma.dark[i] {
                return;
            }
            let c = chroma.chroma[i];
            let s = chroma.intensity[i];
            let b = bin_index(c);
            counts[b] += 1;
            let rgb = [c[0] * s, c[1] * s, (1.0 - c[0] - c[1]) * s];
            for k in 0..3 {
                sums[b][k] += rgb[k];
            }
        },
        |(ca, sa), (cb, sb)| {
            for i in 0..ca.len() {
                ca[i] += cb[i];
                for k in 0..3 {
                    sa[i][k] += sb[i][k];
                }
            }
        },
    );
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyHistogram);
    }
    let step = 1.0 / HIST_BINS as f64;
    let bins = (0..HIST_BINS * HIST_BINS)
        .map(|b| {
            let (ri, gi) = (b / HIST_BINS, b % HIST_BINS);
            let count = counts[b];
            let mean_rgb = if count > 0 {
                sums[b].map(|v| v / count as f64)
            } else {
                [0.0; 3]
            };
            HistogramBin {
                count,
                mid: [(ri as f64 + 0.5) * step, (gi as f64 + 0.5) * step],
                mean_rgb,
            }
        })
        .collect();
    Ok(ChromaHistogram { bins })
}

fn nearest(point: [f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = chroma_distance(point, *c);
        // strict comparison keeps the lowest index on ties
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Weighted k-means over populated bins (bin mid-point as the sample, bin
/// population as its weight), seeded by farthest-point selection.
pub fn weighted_kmeans(hist: &ChromaHistogram, k_max: usize, seed: u64) -> Vec<[f64; 2]> {
    let samples: Vec<([f64; 2], f64)> = hist.populated().map(|(_, b)| (b.mid, b.count as f64)).collect();
    if samples.is_empty() || k_max == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut first = samples.len() - 1;
    for (i, s) in samples.iter().enumerate() {
        if pick < s.1 {
            first = i;
            break;
        }
        pick -= s.1;
    }
    let mut centers = vec![samples[first].0];
    while centers.len() < k_max {
        let mut far = None;
        let mut far_d = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let d = centers
                .iter()
                .map(|c| chroma_distance(s.0, *c))
                .fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => centers.push(samples[i].0),
            None => break,
        }
    }

    let mut assignment: Vec<usize> = samples.iter().map(|s| nearest(s.0, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut acc = vec![([0.0f64; 2], 0.0f64); centers.len()];
        for (s, &a) in samples.iter().zip(&assignment) {
            acc[a].0[0] += s.0[0] * s.1;
            acc[a].0[1] += s.0[1] * s.1;
            acc[a].1 += s.1;
        }
        centers = acc
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(sum, w)| [sum[0] / w, sum[1] / w])
            .collect();
        let next: Vec<usize> = samples.iter().map(|s| nearest(s.0, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    centers
}

/// Reflectance base colors `b_1..b_K` plus their chromaticity centers. The
/// illuminant `b_0` is implicit and always white.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseColorPalette {
    pub colors: Vec<Rgb>,
    pub centers: Vec<[f64; 2]>,
}

impl BaseColorPalette {
    pub fn new(colors: Vec<Rgb>) -> Self {
        let centers = colors
            .iter()
            .map(|c| chroma_of(*c).unwrap_or(crate::imaging::NEUTRAL_CHROMA))
            .collect();
        BaseColorPalette { colors, centers }
    }

    /// Number of reflectance base colors.
    pub fn k(&self) -> usize {
        self.colors.len()
    }

    /// `b_k` for `k` in `0..=K`.
    pub fn color(&self, k: usize) -> Rgb {
        if k == 0 {
            ILLUMINANT
        } else {
            self.colors[k - 1]
        }
    }

    /// `[b_0, b_1, .., b_K]`.
    pub fn basis(&self) -> Vec<Rgb> {
        std::iter::once(ILLUMINANT).chain(self.colors.iter().copied()).collect()
    }

    pub fn check_id(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k() {
            Err(Error::InvalidCluster(k))
        } else {
            Ok(())
        }
    }

    pub fn to_document(&self) -> PaletteDocument {
        PaletteDocument {
            k: self.k(),
            colors: self.colors.clone(),
            centers: Some(self.centers.clone()),
            refined: None,
            initial: None,
        }
    }

    pub fn from_document(doc: &PaletteDocument) -> Result<Self> {
        if doc.colors.len() != doc.k {
            return Err(Error::Config(format!(
                "palette declares K = {} but lists {} colors",
                doc.k,
                doc.colors.len()
            )));
        }
        let mut p = BaseColorPalette::new(doc.colors.clone());
        if let Some(c) = &doc.centers {
            if c.len() == doc.k {
                p.centers = c.clone();
            }
        }
        Ok(p)
    }
}

/// On-disk palette: `{ "K": int, "colors": [[r,g,b],...] }`, plus the refinement
/// flag and pre-refinement colors once refined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteDocument {
    #[serde(rename = "K")]
    pub k: usize,
    pub colors: Vec<Rgb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<Rgb>>,
}

/// Greedily merges centers closer than [`MERGE_THRESHOLD`] (closest pair first,
/// smaller population into larger), then averages the RGB of the pixels
/// assigned to each surviving center.
pub fn merge_clusters(centers: &[[f64; 2]], frame: &Frame, chroma: &ChromaticityImage) -> BaseColorPalette {
    let mut centers: Vec<[f64; 2]> = centers.to_vec();
    let populations = |centers: &[[f64; 2]]| -> Vec<f64> {
        let mut pop = vec![0.0; centers.len()];
        for i in 0..chroma.chroma.len() {
            if !chroma.dark[i] {
                pop[nearest(chroma.chroma[i], centers)] += 1.0;
            }
        }
        pop
    };
    let mut pop = populations(&centers);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let d = chroma_distance(centers[i], centers[j]);
                if d < MERGE_THRESHOLD && best.is_none_or(|b| d < b.2) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let (keep, drop) = if pop[j] > pop[i] { (j, i) } else { (i, j) };
        let w = pop[keep] + pop[drop];
        if w > 0.0 {
            for a in 0..2 {
                centers[keep][a] = (centers[keep][a] * pop[keep] + centers[drop][a] * pop[drop]) / w;
            }
        }
        pop[keep] = w;
        centers.remove(drop);
        pop.remove(drop);
    }

    // Final assignment; centers that end up owning no pixel are dropped.
    loop {
        let mut sums = vec![[0.0f64; 3]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, p) in frame.pixels().iter().enumerate() {
            if chroma.dark[i] {
                continue;
            }
            let k = nearest(chroma.chroma[i], &centers);
            counts[k] += 1;
            for c in 0..3 {
                sums[k][c] += p[c];
            }
        }
        if counts.iter().all(|&c| c > 0) || centers.len() <= 1 {
            let colors = sums
                .iter()
                .zip(&counts)
                .map(|(s, &n)| if n > 0 { s.map(|v| v / n as f64) } else { [0.0; 3] })
                .collect();
            return BaseColorPalette { colors, centers };
        }
        let keep: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        centers = centers
            .into_iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(c))
            .collect();
    }
}

/// Per-pixel cluster ids in `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl ClusterMap {
    pub fn id(&self, x: usize, y: usize) -> usize {
        self.ids[y * self.width + x] as usize
    }

    /// `R_cluster`: the base color of each pixel's cluster.
    pub fn reflectance(&self, palette: &BaseColorPalette) -> Vec<Rgb> {
        self.ids.iter().map(|&k| palette.color(k as usize)).collect()
    }

    pub fn as_frame(&self, palette: &BaseColorPalette) -> Frame {
        Frame::new(self.width, self.height, self.reflectance(palette)).expect("dimensions match")
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ClusterMap {
        let mut ids = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            ids.extend_from_slice(&self.ids[y * self.width + x0..y * self.width + x0 + w]);
        }
        ClusterMap {
            width: w,
            height: h,
            ids,
        }
    }
}

pub fn segment(frame: &Frame, palette: &BaseColorPalette) -> ClusterMap {
    segment_chroma(&chromaticity(frame), palette)
}

pub fn segment_chroma(chroma: &ChromaticityImage, palette: &BaseColorPalette) -> ClusterMap {
    let (w, h) = (chroma.width, chroma.height);
    let mut ids: Vec<u16> = par::map_indexed(w * h, |i| {
        if chroma.dark[i] {
            0
        } else {
            nearest(chroma.chroma[i], &palette.centers) as u16 + 1
        }
    });
    fill_dark(&mut ids, &chroma.dark, w, h);
    ClusterMap { width: w, height: h, ids }
}

/// Dark pixels copy the id of the nearest non-dark pixel (Euclidean distance,
/// ties to the earlier pixel in scanline order).
fn fill_dark(ids: &mut [u16], dark: &[bool], w: usize, h: usize) {
    if dark.iter().all(|d| *d) {
        ids.iter_mut().for_each(|v| *v = 1);
        return;
    }
    let source: Vec<u16> = ids.to_vec();
    let max_r = w.max(h);
    for i in 0..w * h {
        if !dark[i] {
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let mut best: Option<(i64, usize)> = None;
        for r in 1..=max_r as i64 {
            if let Some((d2, _)) = best {
                if r * r > d2 {
                    break;
                }
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if dark[j] {
                        continue;
                    }
                    let d2 = dx * dx + dy * dy;
                    if best.is_none_or(|(bd, bj)| d2 < bd || (d2 == bd && j < bj)) {
                        best = Some((d2, j));
                    }
                }
            }
        }
        ids[i] = best.map_or(1, |(_, j)| source[j]);
    }
}

/// Full first-frame clustering: histogram, k-means, merge, segmentation.
pub fn estimate_palette(frame: &Frame, k_max: usize, seed: u64) -> Result<(BaseColorPalette, ClusterMap)> {
    let chroma = chromaticity(frame);
    let hist = build_histogram(&chroma)?;
    let centers = weighted_kmeans(&hist, k_max, seed);
    let palette = merge_clusters(&centers, frame, &chroma);
    let map = segment_chroma(&chroma, &palette);
    Ok((palette, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_color_frame() -> Frame {
        Frame::from_fn(10, 10, |x, _| {
            if x < 5 {
                [0.9, 0.05, 0.05]
            } else {
                [0.05, 0.9, 0.05]
            }
        })
    }

    #[test]
    fn gray_frame_fills_one_bin() {
        let f = Frame::filled(8, 8, [0.4, 0.4, 0.4]);
        let h = build_histogram(&chromaticity(&f)).unwrap();
        let populated: Vec<_> = h.populated().collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].1.count, 64);
        assert_eq!(populated[0].0, bin_index([1.0 / 3.0, 1.0 / 3.0]));
    }

    #[test]
    fn two_colors_two_bins() {
        let h = build_histogram(&chromaticity(&two_color_frame())).unwrap();
        // brute force: (0.9, 0.05) -> bin (9, 0); (0.05, 0.9) -> bin (0, 9)
        let populated: Vec<_> = h.populated().map(|(i, b)| (i, b.count)).collect();
        assert_eq!(populated, vec![(9, 50), (90, 50)]);
        assert_relative_eq!(h.bins[90].mean_rgb[0], 0.9, epsilon = 1e-12);
        assert_eq!(h.total(), 100);
    }

    #[test]
    fn all_dark_is_an_error() {
        let f = Frame::filled(8, 8, [0.0; 3]);
        assert!(matches!(build_histogram(&chromaticity(&f)), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn bins_outside_simplex_stay_empty() {
        let f = Frame::from_fn(16, 16, |x, y| [x as f64 / 15.0, y as f64 / 15.0, 0.3]);
        let h = build_histogram(&chromaticity(&f)).unwrap();
        for (i, b) in h.bins.iter().enumerate() {
            let (ri, gi) = (i / HIST_BINS, i % HIST_BINS);
            if ri + gi > HIST_BINS {
                assert_eq!(b.count, 0, "bin {i}");
            }
        }
    }

    #[test]
    fn kmeans_degenerate_and_separated() {
        let gray = build_histogram(&chromaticity(&Frame::filled(8, 8, [0.2; 3]))).unwrap();
        let c = weighted_kmeans(&gray, 10, 7);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0], gray.bins[bin_index([1.0 / 3.0; 2])].mid);

        let h = build_histogram(&chromaticity(&two_color_frame())).unwrap();
        let mut c = weighted_kmeans(&h, 10, 7);
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in c.iter().zip([h.bins[9].mid, h.bins[90].mid]) {
            assert_relative_eq!(got[0], want[0], epsilon = 1e-12);
            assert_relative_eq!(got[1], want[1], epsilon = 1e-12);
        }
        assert_eq!(weighted_kmeans(&h, 10, 3), weighted_kmeans(&h, 10, 3));
    }

    fn chroma_rgb(r: f64, g: f64) -> Rgb {
        [r, g, 1.0 - r - g]
    }

    #[test]
    fn close_centers_merge_into_population_weighted_color() {
        let a = chroma_rgb(0.5, 0.3);
        let b = chroma_rgb(0.6, 0.3);
        let f = Frame::from_fn(40, 25, |x, y| if y * 40 + x < 100 { a } else { b });
        let chroma = chromaticity(&f);
        let p = merge_clusters(&[[0.5, 0.3], [0.6, 0.3]], &f, &chroma);
        assert_eq!(p.k(), 1);
        let expected = [(0.5 * 100.0 + 0.6 * 900.0) / 1000.0, 0.3, 0.0];
        assert_relative_eq!(p.colors[0][0], expected[0], epsilon = 1e-12);
        assert_relative_eq!(p.colors[0][1], expected[1], epsilon = 1e-12);
        // larger cluster dominates the merged center
        assert_relative_eq!(p.centers[0][0], 0.59, epsilon = 1e-12);
    }

    #[test]
    fn distant_centers_survive() {
        let f = Frame::from_fn(10, 10, |x, _| if x < 5 { chroma_rgb(0.2, 0.3) } else { chroma_rgb(0.7, 0.3) });
        let p = merge_clusters(&[[0.2, 0.3], [0.7, 0.3]], &f, &chromaticity(&f));
        assert_eq!(p.k(), 2);
    }

    #[test]
    fn chain_of_close_centers_collapses() {
        let pts = [[0.30, 0.30], [0.42, 0.30], [0.36, 0.40]];
        let f = Frame::from_fn(30, 10, |x, _| {
            let c = pts[x / 10];
            chroma_rgb(c[0], c[1])
        });
        let p = merge_clusters(&pts, &f, &chromaticity(&f));
        assert_eq!(p.k(), 1);
        for i in 0..p.k() {
            for j in i + 1..p.k() {
                assert!(chroma_distance(p.centers[i], p.centers[j]) >= MERGE_THRESHOLD);
            }
        }
    }

    #[test]
    fn segmentation_ties_and_dark_pixels() {
        let palette = BaseColorPalette {
            colors: vec![chroma_rgb(0.25, 0.5), chroma_rgb(0.75, 0.25)],
            centers: vec![[0.25, 0.5], [0.75, 0.5]],
        };
        // equidistant chroma (0.5, 0.5) -> lowest id
        let f = Frame::filled(8, 8, chroma_rgb(0.5, 0.5));
        assert!(segment(&f, &palette).ids.iter().all(|&k| k == 1));
        let f = Frame::filled(8, 8, [0.75, 0.5, 0.0]);
        assert!(segment(&f, &palette).ids.iter().all(|&k| k == 2));
    }

    #[test]
    fn dark_fill_matches_brute_force() {
        let palette = BaseColorPalette {
            colors: vec![chroma_rgb(0.2, 0.4), chroma_rgb(0.6, 0.4), chroma_rgb(0.3, 0.1)],
            centers: vec![[0.2, 0.4], [0.6, 0.4], [0.3, 0.1]],
        };
        let layout = [
            "1.2.", //
            "..3.", //
            ".2..", //
            "....",
        ];
        let (w, h) = (4, 4);
        let mut px = Vec::new();
        for row in layout {
            for ch in row.chars() {
                px.push(match ch {
                    '1' => chroma_rgb(0.2, 0.4),
                    '2' => chroma_rgb(0.6, 0.4),
                    '3' => chroma_rgb(0.3, 0.1),
                    _ => [0.0; 3],
                });
            }
        }
        let f = Frame::new(w, h, px).unwrap();
        let map = segment(&f, &palette);
        let chroma = chromaticity(&f);
        for i in 0..w * h {
            if !chroma.dark[i] {
                continue;
            }
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let j = (0..w * h)
                .filter(|&j| !chroma.dark[j])
                .min_by_key(|&j| {
                    let (jx, jy) = ((j % w) as i64, (j / w) as i64);
                    ((jx - x).pow(2) + (jy - y).pow(2), j)
                })
                .unwrap();
            assert_eq!(map.ids[i], map.ids[j], "pixel {i}");
        }
    }

    #[test]
    fn palette_json_shape() {
        let p = BaseColorPalette::new(vec![[0.5, 0.1, 0.1]]);
        let json = serde_json::to_value(p.to_document()).unwrap();
        assert_eq!(json["K"], 1);
        assert_eq!(json["colors"][0][0], 0.5);
        let back: PaletteDocument = serde_json::from_value(json).unwrap();
        assert_eq!(BaseColorPalette::from_document(&back).unwrap(), p);
    }
}

//! Appearance edits that recombine decomposition layers under a modified
//! palette. All operations are pure and leave the layer stack untouched.

use crate::energy::LayerStack;
use crate::error::{Error, Result};
use crate::imaging::{Frame, Rgb};
use crate::palette::{BaseColorPalette, ClusterMap};
use crate::par;

/// Divisions by palette channels are guarded at this value.
pub const RATIO_GUARD: f64 = 1e-4;

fn check(layers: &LayerStack, palette: &BaseColorPalette, k: usize) -> Result<()> {
    if layers.k != palette.k() {
        return Err(Error::InvalidCluster(k));
    }
    palette.check_id(k)
}

fn ratio(new: Rgb, old: Rgb) -> Rgb {
    [0, 1, 2].map(|c| new[c] / old[c].max(RATIO_GUARD))
}

fn to_frame(layers: &LayerStack, data: Vec<Rgb>) -> Frame {
    Frame::new(layers.width, layers.height, data).expect("layer dimensions")
}

/// `R ⊙ Σ_j b_j T_j` with the given basis, optionally skipping layer `skip`.
fn compose(layers: &LayerStack, basis: &[Rgb], skip: Option<usize>, remap: impl Fn(usize, Rgb) -> Rgb + Sync) -> Vec<Rgb> {
    par::map_indexed(layers.pixel_count(), |i| {
        let r = remap(i, layers.reflectance(i));
        let mut s = [0.0; 3];
        for (l, b) in basis.iter().enumerate() {
            if Some(l) == skip {
                continue;
            }
            let t = layers.transport(i, l);
            for c in 0..3 {
                s[c] += b[c] * t;
            }
        }
        [r[0] * s[0], r[1] * s[1], r[2] * s[2]]
    })
}

/// Replaces `b_k` by `new_color` in the illumination sum and remaps the
/// reflectance of cluster-`k` pixels by `new_color / b_k`. Clamped to `[0, 1]`.
pub fn recolor(
    layers: &LayerStack,
    palette: &BaseColorPalette,
    k: usize,
    new_color: Rgb,
    clusters: &ClusterMap,
) -> Result<Frame> {
    check(layers, palette, k)?;
    if clusters.ids.len() != layers.pixel_count() {
        return Err(Error::Dimensions {
            expected: (layers.width, layers.height),
            actual: (clusters.width, clusters.height),
        });
    }
    let old = palette.color(k);
    let scale = ratio(new_color, old);
    let identity = new_color == old;
    let mut basis = palette.basis();
    basis[k] = new_color;
    let data = compose(layers, &basis, None, |i, r| {
        if !identity && clusters.ids[i] as usize == k {
            [r[0] * scale[0], r[1] * scale[1], r[2] * scale[2]]
        } else {
            r
        }
    });
    Ok(to_frame(layers, data))
}

/// `R ⊙ Σ_{j≠k} b_j T_j`, unclamped.
pub fn suppress_spill_raw(layers: &LayerStack, palette: &BaseColorPalette, k: usize) -> Result<Vec<Rgb>> {
    check(layers, palette, k)?;
    Ok(compose(layers, &palette.basis(), Some(k), |_, r| r))
}

/// Reconstruction without the indirect layer of base color `k`, clamped.
pub fn suppress_spill(layers: &LayerStack, palette: &BaseColorPalette, k: usize) -> Result<Frame> {
    Ok(to_frame(layers, suppress_spill_raw(layers, palette, k)?))
}

/// Replaces matte pixels by `new_background` and relights the rest by scaling
/// `b_k` with the ratio of the new to the old mean background color. An empty
/// matte compares the means over the whole frame.
pub fn rekey_background(
    layers: &LayerStack,
    palette: &BaseColorPalette,
    k: usize,
    new_background: &Frame,
    matte: &[bool],
) -> Result<Frame> {
    check(layers, palette, k)?;
    let n = layers.pixel_count();
    if new_background.dims() != (layers.width, layers.height) || matte.len() != n {
        return Err(Error::Dimensions {
            expected: (layers.width, layers.height),
            actual: new_background.dims(),
        });
    }
    let basis = palette.basis();
    let old = layers.reconstruction(&basis);
    let any = matte.iter().any(|m| *m);
    let mut old_mean = [0.0; 3];
    let mut new_mean = [0.0; 3];
    let mut count = 0.0;
    for i in (0..n).filter(|&i| !any || matte[i]) {
        let nb = new_background.pixels()[i];
        for c in 0..3 {
            old_mean[c] += old[i][c];
            new_mean[c] += nb[c];
        }
        count += 1.0;
    }
    let scale = ratio(new_mean.map(|v| v / count), old_mean.map(|v| v / count));
    let mut relit_basis = basis.clone();
    relit_basis[k] = [0, 1, 2].map(|c| basis[k][c] * scale[c]);
    let relit = compose(layers, &relit_basis, None, |_, r| r);
    let data = (0..n)
        .map(|i| if matte[i] { new_background.pixels()[i] } else { relit[i] })
        .collect();
    Ok(to_frame(layers, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (LayerStack, BaseColorPalette, ClusterMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let palette = BaseColorPalette::new(vec![[0.8, 0.2, 0.1], [0.1, 0.3, 0.7]]);
        let (w, h) = (6, 5);
        let mut layers = LayerStack::zeros(w, h, 2);
        let mut ids = Vec::new();
        for i in 0..w * h {
            let id = rng.gen_range(1..=2usize);
            ids.push(id as u16);
            let b = palette.color(id);
            let px = layers.pixel_mut(i);
            for c in 0..3 {
                px[c] = (b[c] * rng.gen_range(0.9..1.1)).ln();
            }
            px[3] = rng.gen_range(0.2..0.5);
            px[4] = rng.gen_range(0.0..0.2);
            px[5] = rng.gen_range(0.0..0.2);
        }
        (layers, palette, ClusterMap { width: w, height: h, ids })
    }

    fn max_diff(a: &[Rgb], b: &[Rgb]) -> f64 {
        a.iter().zip(b).flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs())).fold(0.0, f64::max)
    }

    #[test]
    fn unchanged_color_is_identity() {
        let (layers, palette, clusters) = setup(1);
        let recon = layers.reconstruction(&palette.basis());
        for k in 1..=2 {
            let out = recolor(&layers, &palette, k, palette.color(k), &clusters).unwrap();
            assert!(max_diff(out.pixels(), &recon) <= 1e-6);
        }
    }

    #[test]
    fn suppression_is_linear() {
        let (layers, palette, _) = setup(2);
        let recon = layers.reconstruction(&palette.basis());
        for k in 1..=2 {
            let out = suppress_spill_raw(&layers, &palette, k).unwrap();
            let b = palette.color(k);
            for i in 0..layers.pixel_count() {
                let r = layers.reflectance(i);
                let t = layers.transport(i, k);
                for c in 0..3 {
                    assert!((out[i][c] + r[c] * b[c] * t - recon[i][c]).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn suppressing_every_layer_leaves_direct_light() {
        let (mut layers, palette, _) = setup(3);
        for i in 0..layers.pixel_count() {
            layers.set_transport(i, 2, 0.0);
        }
        let out = suppress_spill_raw(&layers, &palette, 1).unwrap();
        for i in 0..layers.pixel_count() {
            let r = layers.reflectance(i);
            let t0 = layers.transport(i, 0);
            for c in 0..3 {
                assert!((out[i][c] - r[c] * t0).abs() < 1e-15);
            }
        }
        // already-zero layer
        let again = suppress_spill_raw(&layers, &palette, 2).unwrap();
        assert!(max_diff(&again, &layers.reconstruction(&palette.basis())) <= 1e-6);
    }

    #[test]
    fn recoloring_a_layerless_cluster_touches_only_its_pixels() {
        let (mut layers, palette, clusters) = setup(4);
        for i in 0..layers.pixel_count() {
            layers.set_transport(i, 1, 0.0);
        }
        let recon = layers.reconstruction(&palette.basis());
        let out = recolor(&layers, &palette, 1, [0.2, 0.9, 0.2], &clusters).unwrap();
        for i in 0..layers.pixel_count() {
            let changed = max_diff(&out.pixels()[i..i + 1], &recon[i..i + 1]) > 1e-9;
            assert_eq!(changed, clusters.ids[i] == 1, "pixel {i}");
        }
    }

    #[test]
    fn invalid_ids_are_rejected() {
        let (layers, palette, clusters) = setup(5);
        assert!(recolor(&layers, &palette, 0, [0.0; 3], &clusters).is_err());
        assert!(suppress_spill(&layers, &palette, 3).is_err());
    }

    #[test]
    fn rekey_with_the_same_background_is_identity() {
        let (layers, palette, _) = setup(6);
        let recon = layers.reconstruction_frame(&palette.basis());
        let matte: Vec<bool> = (0..30).map(|i| i % 6 == 0).collect();
        let out = rekey_background(&layers, &palette, 2, &recon, &matte).unwrap();
        assert!(max_diff(out.pixels(), recon.pixels()) <= 1e-6);
    }

    #[test]
    fn rekey_swaps_the_spill_color_at_equal_transport() {
        let (layers, palette, _) = setup(7);
        let bg = Frame::filled(6, 5, [0.3; 3]);
        let matte = vec![false; 30];
        let out = rekey_background(&layers, &palette, 2, &bg, &matte).unwrap();
        // all-foreground matte: means over the whole frame
        let recon = layers.reconstruction(&palette.basis());
        let mean: Vec<f64> = (0..3).map(|c| recon.iter().map(|p| p[c]).sum::<f64>() / 30.0).collect();
        let b = palette.color(2);
        let b_new: Vec<f64> = (0..3).map(|c| b[c] * 0.3 / mean[c]).collect();
        for i in 0..30 {
            let r = layers.reflectance(i);
            for c in 0..3 {
                let s = layers.transport(i, 0) + palette.color(1)[c] * layers.transport(i, 1) + b_new[c] * layers.transport(i, 2);
                assert!((out.pixels()[i][c] - (r[c] * s).clamp(0.0, 1.0)).abs() < 1e-12);
            }
        }
        assert!(rekey_background(&layers, &palette, 2, &Frame::filled(5, 5, [0.0; 3]), &matte).is_err());
    }
}

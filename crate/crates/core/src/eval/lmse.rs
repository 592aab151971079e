use crate::error::{Error, Result};
use crate::imaging::Rgb;

pub const LMSE_WINDOW: usize = 20;
pub const LMSE_STRIDE: usize = 10;

/// Window origins along one axis; the last window is flush with the border.
fn origins(len: usize) -> Vec<usize> {
    if len <= LMSE_WINDOW {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..=len - LMSE_WINDOW).step_by(LMSE_STRIDE).collect();
    if *v.last().unwrap() != len - LMSE_WINDOW {
        v.push(len - LMSE_WINDOW);
    }
    v
}

/// Local scale-invariant error of one layer: windows of 20 px at stride 10,
/// each estimate window fitted to the truth by `α* = ⟨e,t⟩ / ⟨e,e⟩`, summed
/// squared errors normalized by the summed windowed truth energy.
pub fn lmse_layer(estimated: &[Rgb], truth: &[Rgb], width: usize, height: usize) -> Result<f64> {
    if estimated.len() != truth.len() || truth.len() != width * height {
        return Err(Error::Dimensions {
            expected: (width, height),
            actual: (estimated.len(), 1),
        });
    }
    let mut err = 0.0;
    let mut energy = 0.0;
    let wx = LMSE_WINDOW.min(width);
    let wy = LMSE_WINDOW.min(height);
    for &y0 in &origins(height) {
        for &x0 in &origins(width) {
            let (mut ee, mut et, mut tt) = (0.0, 0.0, 0.0);
            for y in y0..y0 + wy {
                for x in x0..x0 + wx {
                    let (e, t) = (estimated[y * width + x], truth[y * width + x]);
                    for c in 0..3 {
                        ee += e[c] * e[c];
                        et += e[c] * t[c];
                        tt += t[c] * t[c];
                    }
                }
            }
            let alpha = if ee > 0.0 { et / ee } else { 0.0 };
            // ‖α e - t‖² expanded
            err += (alpha * alpha * ee - 2.0 * alpha * et + tt).max(0.0);
            energy += tt;
        }
    }
    Ok(if energy > 0.0 { err / energy } else { 0.0 })
}

/// Mean of the reflectance and illumination scores.
pub fn lmse(
    est_reflectance: &[Rgb],
    est_illumination: &[Rgb],
    true_reflectance: &[Rgb],
    true_illumination: &[Rgb],
    width: usize,
    height: usize,
) -> Result<f64> {
    let r = lmse_layer(est_reflectance, true_reflectance, width, height)?;
    let s = lmse_layer(est_illumination, true_illumination, width, height)?;
    Ok(0.5 * (r + s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pattern(w: usize, h: usize) -> Vec<Rgb> {
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                [0.3 + 0.2 * (x * 0.1).sin(), 0.4 + 0.1 * (y * 0.2).cos(), 0.5]
            })
            .collect()
    }

    /// Windowed definition evaluated literally, window by window.
    fn brute(e: &[Rgb], t: &[Rgb], w: usize, h: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut y0 = 0;
        loop {
            let yy = y0.min(h - 20);
            let mut x0 = 0;
            loop {
                let xx = x0.min(w - 20);
                let mut ev = Vec::new();
                let mut tv = Vec::new();
                for y in yy..yy + 20 {
                    for x in xx..xx + 20 {
                        ev.extend_from_slice(&e[y * w + x]);
                        tv.extend_from_slice(&t[y * w + x]);
                    }
                }
                let a: f64 = ev.iter().zip(&tv).map(|(p, q)| p * q).sum::<f64>() / ev.iter().map(|p| p * p).sum::<f64>();
                num += ev.iter().zip(&tv).map(|(p, q)| (a * p - q).powi(2)).sum::<f64>();
                den += tv.iter().map(|q| q * q).sum::<f64>();
                if xx == w - 20 {
                    break;
                }
                x0 += 10;
            }
            if yy == h - 20 {
                break;
            }
            y0 += 10;
        }
        num / den
    }

    #[test]
    fn identity_and_scale_give_zero() {
        let t = pattern(80, 80);
        assert_eq!(lmse_layer(&t, &t, 80, 80).unwrap(), 0.0);
        let doubled: Vec<Rgb> = t.iter().map(|p| p.map(|v| 2.0 * v)).collect();
        assert!(lmse_layer(&doubled, &t, 80, 80).unwrap() < 1e-24);
    }

    #[test]
    fn noise_matches_windowed_definition() {
        let t = pattern(80, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e: Vec<Rgb> = t.iter().map(|p| p.map(|v| v + rng.gen_range(-0.05..0.05))).collect();
        let fast = lmse_layer(&e, &t, 80, 80).unwrap();
        let slow = brute(&e, &t, 80, 80);
        assert!(fast > 0.0);
        assert!((fast - slow).abs() <= 1e-12 * slow);
    }

    #[test]
    fn per_window_positive_scaling_is_free() {
        let t = pattern(40, 40);
        let e: Vec<Rgb> = t
            .iter()
            .enumerate()
            .map(|(i, p)| p.map(|v| v * if (i % 40) < 20 { 3.0 } else { 0.5 }))
            .collect();
        // windows at x0 = 0 and 20 are pure-scaled; the straddling window is not
        let mixed = lmse_layer(&e, &t, 40, 40).unwrap();
        assert!(mixed > 0.0);
        let uniform: Vec<Rgb> = t.iter().map(|p| p.map(|v| v * 7.0)).collect();
        assert!(lmse_layer(&uniform, &t, 40, 40).unwrap() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let t = pattern(20, 20);
        assert!(lmse_layer(&t[..10], &t, 20, 20).is_err());
    }
}

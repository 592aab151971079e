//! On-disk layouts.
//!
//! A decomposition directory holds `palette.json`, `summary.json` and one
//! `frame_NNNNNN/` layer set per frame with `reflectance.pfm`, `t0.pfm` ..
//! `tK.pfm`, `clusters.pfm`, `reconstruction.png` and `report.jsonl`.
//!
//! A ground-truth bundle holds `manifest.json`, the rendered inputs under
//! `input/` and the true layers under `truth/frame_NNNNNN/`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use lumisplit_core::energy::LayerStack;
use lumisplit_core::eval::{GroundTruthBundle, GroundTruthFrame, SyntheticScene};
use lumisplit_core::imaging::{
    decode_pfm, frame_file_name, list_frames, load_frame, save_frame_pfm, save_pfm_rgb, save_pfm_scalar,
    save_png_preview, Frame, Rgb, LOG_FLOOR,
};
use lumisplit_core::palette::{BaseColorPalette, ClusterMap, PaletteDocument};
use lumisplit_core::pipeline::FrameResult;
use lumisplit_core::solver::SolveStatus;
use lumisplit_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const PALETTE_FILE: &str = "palette.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_pfm(path: &Path, channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, c, values) = decode_pfm(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })?;
    if c != channels {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {channels} channels, found {c}"),
        });
    }
    Ok((w, h, values))
}

pub fn frame_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("frame_{index:06}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub index: usize,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub min_transport: f64,
    pub monotonicity_violations: usize,
    pub regions: usize,
    pub lost_regions: usize,
}

impl FrameSummary {
    pub fn of(result: &FrameResult) -> Self {
        FrameSummary {
            index: result.index,
            status: result.report.status,
            outer_iterations: result.report.outer_iterations,
            initial_energy: result.report.initial_energy,
            final_energy: result.report.final_energy,
            min_transport: result.layers.min_transport(),
            monotonicity_violations: result.report.monotonicity_violations(),
            regions: result.regions.len(),
            lost_regions: result.lost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub frames: Vec<FrameSummary>,
}

/// Palette document carrying the refined colors and, when they differ, the
/// colors before refinement.
pub fn palette_document(refined: &BaseColorPalette, initial: &BaseColorPalette) -> PaletteDocument {
    let mut doc = refined.to_document();
    let changed = refined.colors != initial.colors;
    doc.refined = Some(changed);
    if changed {
        doc.initial = Some(initial.colors.clone());
    }
    doc
}

pub fn write_palette(root: &Path, doc: &PaletteDocument) -> Result<()> {
    create_dir(root)?;
    write_json(&root.join(PALETTE_FILE), doc)
}

pub fn read_palette(root: &Path) -> Result<BaseColorPalette> {
    let doc: PaletteDocument = read_json(&root.join(PALETTE_FILE))?;
    BaseColorPalette::from_document(&doc)
}

/// Writes one layer set.
pub fn write_layer_set(root: &Path, result: &FrameResult, basis: &[Rgb]) -> Result<()> {
    let dir = frame_dir(root, result.index);
    create_dir(&dir)?;
    let layers = &result.layers;
    let (w, h) = (layers.width, layers.height);
    save_pfm_rgb(&dir.join("reflectance.pfm"), w, h, &layers.reflectance_image())?;
    for l in 0..=layers.k {
        save_pfm_scalar(&dir.join(format!("t{l}.pfm")), w, h, &layers.layer(l))?;
    }
    let ids: Vec<f64> = result.clusters.ids.iter().map(|&id| id as f64).collect();
    save_pfm_scalar(&dir.join("clusters.pfm"), w, h, &ids)?;
    save_png_preview(&dir.join("reconstruction.png"), w, h, &layers.reconstruction(basis), 1.0)?;
    let path = dir.join("report.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    result.report.write_jsonl(BufWriter::new(file)).map_err(io_err(&path))
}

/// Reads a layer set back. Reflectance is stored linearly and re-logged with
/// the usual floor.
pub fn read_layer_set(root: &Path, index: usize, k: usize) -> Result<(LayerStack, ClusterMap)> {
    let dir = frame_dir(root, index);
    let (w, h, refl) = read_pfm(&dir.join("reflectance.pfm"), 3)?;
    let mut layers = LayerStack::zeros(w, h, k);
    for i in 0..w * h {
        let px = layers.pixel_mut(i);
        for c in 0..3 {
            px[c] = refl[3 * i + c].max(LOG_FLOOR).ln();
        }
    }
    for l in 0..=k {
        let path = dir.join(format!("t{l}.pfm"));
        let (lw, lh, values) = read_pfm(&path, 1)?;
        if (lw, lh) != (w, h) {
            return Err(Error::Dimensions {
                expected: (w, h),
                actual: (lw, lh),
            });
        }
        for (i, v) in values.into_iter().enumerate() {
            layers.set_transport(i, l, v);
        }
    }
    let (_, _, ids) = read_pfm(&dir.join("clusters.pfm"), 1)?;
    let clusters = ClusterMap {
        width: w,
        height: h,
        ids: ids.into_iter().map(|v| v.round() as u16).collect(),
    };
    Ok((layers, clusters))
}

/// Writes the palette, every layer set and `summary.json`.
pub fn write_decomposition(
    root: &Path,
    palette: &BaseColorPalette,
    initial: &BaseColorPalette,
    results: &[FrameResult],
) -> Result<RunSummary> {
    write_palette(root, &palette_document(palette, initial))?;
    let basis = palette.basis();
    for r in results {
        write_layer_set(root, r, &basis)?;
    }
    let (width, height) = results
        .first()
        .map(|r| (r.layers.width, r.layers.height))
        .unwrap_or((0, 0));
    let summary = RunSummary {
        width,
        height,
        k: palette.k(),
        frames: results.iter().map(FrameSummary::of).collect(),
    };
    write_json(&root.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn read_summary(root: &Path) -> Result<RunSummary> {
    read_json(&root.join(SUMMARY_FILE))
}

/// Input frames of a directory: a bundle's `input/` when a manifest is
/// present, the directory itself otherwise.
pub fn load_input_frames(dir: &Path) -> Result<Vec<Frame>> {
    let source = if dir.join(MANIFEST_FILE).is_file() {
        dir.join("input")
    } else {
        dir.to_path_buf()
    };
    let paths = list_frames(&source)?;
    if paths.is_empty() {
        return Err(Error::Io {
            path: source,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no frame_NNNNNN.png or .pfm files"),
        });
    }
    let frames: Vec<Frame> = paths.iter().map(|p| load_frame(p)).collect::<Result<_>>()?;
    let dims = frames[0].dims();
    for f in &frames {
        f.ensure_min_size()?;
        if f.dims() != dims {
            return Err(Error::Dimensions {
                expected: dims,
                actual: f.dims(),
            });
        }
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub palette: Vec<Rgb>,
    pub seed: u64,
    pub scene: SyntheticScene,
}

pub fn write_bundle(root: &Path, bundle: &GroundTruthBundle, scene: &SyntheticScene, seed: u64) -> Result<()> {
    let input = root.join("input");
    create_dir(&input)?;
    let (w, h) = (bundle.width, bundle.height);
    for (t, f) in bundle.frames.iter().enumerate() {
        save_frame_pfm(&input.join(frame_file_name(t, "pfm")), &f.input)?;
        let dir = frame_dir(&root.join("truth"), t);
        create_dir(&dir)?;
        save_pfm_rgb(&dir.join("reflectance.pfm"), w, h, &f.reflectance)?;
        for (l, layer) in f.layers.iter().enumerate() {
            save_pfm_scalar(&dir.join(format!("t{l}.pfm")), w, h, layer)?;
        }
        let labels: Vec<f64> = f.labels.ids.iter().map(|&id| id as f64).collect();
        save_pfm_scalar(&dir.join("labels.pfm"), w, h, &labels)?;
    }
    write_json(
        &root.join(MANIFEST_FILE),
        &Manifest {
            width: w,
            height: h,
            frames: bundle.frames.len(),
            palette: bundle.palette.clone(),
            seed,
            scene: scene.clone(),
        },
    )
}

/// Reads a bundle written by [`write_bundle`]. Values pass through 32-bit
/// floats on disk.
pub fn read_bundle(root: &Path) -> Result<GroundTruthBundle> {
    let manifest: Manifest = read_json(&root.join(MANIFEST_FILE))?;
    let inputs = load_input_frames(root)?;
    if inputs.len() != manifest.frames {
        return Err(Error::Config(format!(
            "manifest lists {} frames, found {}",
            manifest.frames,
            inputs.len()
        )));
    }
    let k = manifest.palette.len();
    let mut basis = vec![[1.0; 3]];
    basis.extend(manifest.palette.iter().copied());
    let mut frames = Vec::with_capacity(inputs.len());
    for (t, input) in inputs.into_iter().enumerate() {
        let dir = frame_dir(&root.join("truth"), t);
        let (_, _, r) = read_pfm(&dir.join("reflectance.pfm"), 3)?;
        let reflectance: Vec<Rgb> = r.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let layers = (0..=k)
            .map(|l| read_pfm(&dir.join(format!("t{l}.pfm")), 1).map(|(_, _, v)| v))
            .collect::<Result<Vec<_>>>()?;
        let (_, _, ids) = read_pfm(&dir.join("labels.pfm"), 1)?;
        let labels = ClusterMap {
            width: manifest.width,
            height: manifest.height,
            ids: ids.into_iter().map(|v| v.round() as u16).collect(),
        };
        let mut frame = GroundTruthFrame {
            input,
            exact: Vec::new(),
            reflectance,
            layers,
            labels,
        };
        let s = frame.illumination(&basis);
        frame.exact = frame
            .reflectance
            .iter()
            .zip(&s)
            .map(|(r, s)| [r[0] * s[0], r[1] * s[1], r[2] * s[2]])
            .collect();
        frames.push(frame);
    }
    Ok(GroundTruthBundle {
        width: manifest.width,
        height: manifest.height,
        palette: manifest.palette,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lumisplit_core::energy::random_problem;
    use lumisplit_core::solver::SolveReport;

    fn result() -> FrameResult {
        let (_, layers) = random_problem(9, 8, 2, 3);
        FrameResult {
            index: 4,
            clusters: ClusterMap {
                width: 9,
                height: 8,
                ids: (0..72).map(|i| (i % 3) as u16).collect(),
            },
            layers,
            report: SolveReport {
                status: SolveStatus::Converged,
                outer_iterations: 1,
                initial_energy: 2.0,
                final_energy: 1.0,
                steps: Vec::new(),
            },
            regions: Vec::new(),
            lost: 0,
        }
    }

    #[test]
    fn layer_sets_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let r = result();
        let basis = vec![[1.0; 3], [0.8, 0.2, 0.1], [0.1, 0.3, 0.7]];
        write_layer_set(dir.path(), &r, &basis).unwrap();
        let (layers, clusters) = read_layer_set(dir.path(), 4, 2).unwrap();
        assert_eq!(clusters, r.clusters);
        for i in 0..72 {
            for l in 0..=2 {
                assert!((layers.transport(i, l) - r.layers.transport(i, l)).abs() < 1e-6);
            }
            for c in 0..3 {
                let (a, b) = (layers.reflectance(i)[c], r.layers.reflectance(i)[c]);
                assert!((a - b).abs() <= 1e-6 * b.max(1.0));
            }
        }
        assert!(dir.path().join("frame_000004/reconstruction.png").is_file());
    }

    #[test]
    fn palette_document_records_the_initial_colors_only_when_refined() {
        let a = BaseColorPalette::new(vec![[0.5, 0.2, 0.1]]);
        let b = BaseColorPalette::new(vec![[0.52, 0.2, 0.1]]);
        let same = palette_document(&a, &a);
        assert_eq!(same.refined, Some(false));
        assert!(same.initial.is_none());
        let moved = palette_document(&b, &a);
        assert_eq!(moved.initial, Some(a.colors.clone()));
        let dir = tempfile::tempdir().unwrap();
        write_palette(dir.path(), &moved).unwrap();
        assert_eq!(read_palette(dir.path()).unwrap(), b);
    }

    #[test]
    fn empty_input_directories_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_input_frames(dir.path()), Err(Error::Io { .. })));
        assert!(matches!(load_input_frames(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}

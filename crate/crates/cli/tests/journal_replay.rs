use std::path::Path;

use lumisplit_cli::app::decompose;
use lumisplit_cli::journal::{read_journal, replay_clicks, Journal};
use lumisplit_cli::output::{load_input_frames, read_layer_set, read_summary};
use lumisplit_cli::session::Session;
use lumisplit_core::eval::{render_scene, SyntheticScene};
use lumisplit_core::imaging::{frame_file_name, save_frame_pfm};
use lumisplit_core::pipeline::PipelineConfig;

fn render_input(dir: &Path, frames: usize) {
    let mut scene = SyntheticScene::default_room();
    scene.width = 40;
    scene.height = 40;
    scene.frames = frames;
    scene.camera.pixel_size *= 128.0 / 40.0;
    let bundle = render_scene(&scene, 0).unwrap();
    for (t, f) in bundle.frames.iter().enumerate() {
        save_frame_pfm(&dir.join(frame_file_name(t, "pfm")), &f.input).unwrap();
    }
}

fn config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.first.outer_iterations = 3;
    c.streaming.outer_iterations = 2;
    c
}

#[test]
fn replaying_a_session_journal_reproduces_its_layers() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");
    std::fs::create_dir(&input).unwrap();
    render_input(&input, 4);
    let journal_path = dir.path().join("session.jsonl");

    let frames = load_input_frames(&input).unwrap();
    let session_layers = {
        let mut s = Session::start(frames, config(), Some(Journal::open(&journal_path).unwrap())).unwrap();
        let requests = [
            r#"{"seq":1,"kind":"hello"}"#,
            r#"{"seq":2,"kind":"frame-request","frame":1}"#,
            r#"{"seq":3,"kind":"click","frame":0,"x":99,"y":0}"#,
            r#"{"seq":4,"kind":"click","frame":0,"x":20,"y":30}"#,
            r#"{"seq":5,"kind":"recolor","k":1,"color":[0.5,0.5,0.5]}"#,
            r#"{"seq":6,"kind":"click","frame":0,"x":20,"y":8,"extend":true}"#,
        ];
        for r in requests {
            s.handle_text(r);
        }
        s.wait_all().unwrap()
    };

    let entries = read_journal(&journal_path).unwrap();
    assert_eq!(entries.len(), 6, "one entry per request");
    assert!(!entries[2].ok);
    let clicks = replay_clicks(&entries);
    assert!(!clicks.is_empty());

    let out = dir.path().join("out");
    decompose(&input, &out, Some(&journal_path), &config()).unwrap();
    let summary = read_summary(&out).unwrap();
    assert_eq!(summary.frames.len(), session_layers.len());
    for (s, r) in summary.frames.iter().zip(&session_layers) {
        let (a, b) = (s.final_energy, r.report.final_energy);
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "frame {}: {a} vs {b}", s.index);
        let (layers, clusters) = read_layer_set(&out, s.index, summary.k).unwrap();
        assert_eq!(clusters, r.clusters);
        for i in 0..layers.pixel_count() {
            for l in 0..=layers.k {
                assert!((layers.transport(i, l) - r.layers.transport(i, l)).abs() < 1e-5);
            }
        }
    }
}

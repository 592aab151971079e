use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use lumisplit_cli::output::read_summary;
use lumisplit_core::eval::SyntheticScene;

fn lumisplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumisplit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn small_scene(dir: &Path) -> String {
    let mut scene = SyntheticScene::default_room();
    scene.width = 32;
    scene.height = 32;
    scene.frames = 3;
    scene.camera.pixel_size *= 4.0;
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string(&scene).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn render_decompose_and_edit() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let bundle = dir.path().join("bundle");
    let conf = dir.path().join("fast.conf");
    std::fs::write(&conf, "outer_iterations = 3\nstreaming_outer_iterations = 2\n").unwrap();
    let conf = conf.to_str().unwrap();

    let out = lumisplit(&["render-synthetic", bundle.to_str().unwrap(), "--scene", &scene]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(bundle.join("manifest.json").is_file());

    let dec = dir.path().join("dec");
    let dec_s = dec.to_str().unwrap();
    let out = lumisplit(&["decompose", bundle.to_str().unwrap(), dec_s, "--config", conf]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_summary(&dec).unwrap();
    assert_eq!(summary.frames.len(), 3);
    let palette = std::fs::read(dec.join("palette.json")).unwrap();

    // same seed and config: identical palette document
    let again = dir.path().join("again");
    let out = lumisplit(&["decompose", bundle.to_str().unwrap(), again.to_str().unwrap(), "--config", conf]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(again.join("palette.json")).unwrap(), palette);
    for (a, b) in summary.frames.iter().zip(read_summary(&again).unwrap().frames) {
        assert!((a.final_energy - b.final_energy).abs() <= 1e-8 * a.final_energy.abs().max(1.0));
    }

    let out = lumisplit(&["recolor", dec_s, "--k", "1", "--color", "0.2,0.4,0.9", "--frame", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dec.join("frame_000002/recolor_k1.png").is_file());
    let out = lumisplit(&["suppress", dec_s, "--k", "1"]);
    assert!(out.status.success());
    assert!(dec.join("frame_000000/suppress_k1.png").is_file());

    let out = lumisplit(&["suppress", dec_s, "--k", "99"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_input_exits_with_the_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = lumisplit(&["decompose", missing.to_str().unwrap(), dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let bad_conf = dir.path().join("bad.conf");
    std::fs::write(&bad_conf, "no_such_key = 1\n").unwrap();
    let out = lumisplit(&["decompose", ".", "o", "--config", bad_conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn busy_port_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let bundle = dir.path().join("bundle");
    assert!(lumisplit(&["render-synthetic", bundle.to_str().unwrap(), "--scene", &scene, "--frames", "1"])
        .status
        .success());
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = lumisplit(&["serve", bundle.to_str().unwrap(), "--port", &port]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

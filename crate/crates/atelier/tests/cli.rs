use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atelier::image_io::save_png;
use atelier::model_io::load_model;
use atelier::tables::{read_results, RESULTS_HEADER, TILE_HEADER};
use atelier_core::classifier::{init_model, CnnConfig, ConvStage, Pool};
use atelier_core::ImageBuffer;

fn atelier(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atelier"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_gray(dir: &Path, name: &str, w: usize, h: usize, f: impl Fn(usize) -> u8) -> String {
    let path = dir.join(name);
    let img = ImageBuffer::new(w, h, 1, (0..w * h).map(f).collect()).unwrap();
    save_png(&img, &path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn entropy_of_constant_and_uniform_images() {
    let dir = tempfile::tempdir().unwrap();
    let flat = write_gray(dir.path(), "flat.png", 20, 20, |_| 9);
    let out = atelier(&["entropy", &flat]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "0.000000\n");

    let ramp = write_gray(dir.path(), "ramp.png", 256, 2, |i| (i % 256) as u8);
    assert_eq!(stdout(&atelier(&["entropy", &ramp])), "8.000000\n");
}

#[test]
fn missing_file_is_a_data_error() {
    let out = atelier(&["entropy", "/nonexistent/painting.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("painting.png"));
    assert!(out.stdout.is_empty());
}

#[test]
fn resolved_config_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let flat = write_gray(dir.path(), "flat.png", 8, 8, |_| 0);
    let out = atelier(&["--seed", "7", "entropy", &flat]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed: 7"), "{err}");
}

#[test]
fn tile_manifest_rows() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_gray(dir.path(), "x.png", 300, 300, |i| (i * 31 % 251) as u8);
    let table = dir.path().join("tiles.tsv");
    let out = atelier(&["tile", &img, "--size", "100", "--stride", "100", "--out", p(&table)]);
    assert!(out.status.success());
    let text = fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TILE_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].starts_with("0\t0\t100\t"));
    assert!(rows[8].starts_with("200\t200\t100\t"));
}

#[test]
fn tile_flag_and_size_errors() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_gray(dir.path(), "x.png", 50, 50, |i| i as u8);
    let out = atelier(&["tile", &img, "--size", "20", "--stride", "30"]);
    assert_eq!(out.status.code(), Some(1));
    let out = atelier(&["tile", &img, "--size", "64"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("smaller"));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(atelier(&["tile"]).status.code(), Some(1));
    assert_eq!(atelier(&["bogus"]).status.code(), Some(1));
    assert_eq!(atelier(&["entropy", "x", "--frobnicate"]).status.code(), Some(1));
    let help = atelier(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("ensemble"));
}

#[test]
fn config_file_seeds_flags() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_gray(dir.path(), "x.png", 300, 300, |i| (i * 31 % 251) as u8);
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "size = 100\nstride = 100\n").unwrap();
    let out = atelier(&["--config", p(&conf), "tile", &img]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 10);
    // The command line overrides the file.
    let out = atelier(&["--config", p(&conf), "tile", &img, "--stride", "50"]);
    assert_eq!(stdout(&out).lines().count(), 26);
}

fn tiny_corpus(dir: &Path) -> String {
    let out = atelier(&[
        "synth", "--out-dir", p(&dir.join("corpus")), "--n-per-class", "4", "--width", "192",
        "--height", "192",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("corpus/manifest.tsv").to_str().unwrap().to_string()
}

const TINY_NET: [&str; 6] = ["--size", "64", "--conv", "2x3p", "--dense-units", "4"];

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let model = dir.path().join("m.bin");
    let mut args = vec!["train", "--manifest", &manifest, "--epochs", "0", "--seed", "5"];
    args.extend(TINY_NET);
    args.extend(["--out", p(&model)]);
    let out = atelier(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let expected = init_model(&CnnConfig {
        input_size: 64,
        input_channels: 3,
        conv_layers: vec![ConvStage::new(2, 3, Pool::Max2)],
        dense_units: 4,
        seed: 5,
        epochs: 0,
        ..CnnConfig::default()
    })
    .unwrap();
    let saved = load_model(&model).unwrap();
    assert_eq!(saved.params(), expected.params());
    assert_eq!(saved.trained_epochs(), 0);
    let metrics = fs::read_to_string(dir.path().join("m.bin.metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn leaking_manifest_stops_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.tsv");
    fs::write(
        &manifest,
        "a.png\tpos\tp1\ttrain\nb.png\tpos\tp1\ttest\nc.png\tneg\tp2\tval\n",
    )
    .unwrap();
    let model = dir.path().join("m.bin");
    let out = atelier(&["train", "--manifest", p(&manifest), "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!model.exists());
}

#[test]
fn classify_map_gradcam_and_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = tiny_corpus(d);
    let model = d.join("m.bin");
    let mut args = vec!["train", "--manifest", &manifest, "--epochs", "1", "--out", p(&model)];
    args.extend(TINY_NET);
    assert!(atelier(&args).status.success());

    let results = d.join("r.tsv");
    let out = atelier(&[
        "classify", "--model", p(&model), "--manifest", &manifest, "--out", p(&results),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&results).unwrap();
    assert!(text.starts_with(RESULTS_HEADER));
    let rows = read_results(&results).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.true_label.is_some() && r.n_tiles_kept > 0));

    // Single image by path: painting named after the file.
    let painting = d.join("corpus/a000.png");
    let out = atelier(&["classify", "--model", p(&model), p(&painting)]);
    assert!(stdout(&out).lines().nth(1).unwrap().starts_with("a000\t"));

    let map = d.join("map.png");
    let out = atelier(&["map", "--model", p(&model), p(&painting), "--out", p(&map)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("map.map.tsv").exists());
    assert!(fs::read_to_string(d.join("map.legend.txt")).unwrap().contains("gray"));
    let rendered = atelier::image_io::load_image(&map).unwrap();
    assert_eq!((rendered.width(), rendered.height(), rendered.channels()), (192, 192, 3));

    let tile = write_gray(d, "tile.png", 64, 64, |i| (i * 13 % 256) as u8);
    let out = atelier(&["gradcam", "--model", p(&model), &tile, "--out", p(&d.join("cam.png"))]);
    // Gray tile against an RGB model.
    assert_eq!(out.status.code(), Some(2));
    let rgb = atelier::image_io::load_image(&painting).unwrap();
    let crop = rgb.crop(&atelier_core::Rect::square(10, 10, 64)).unwrap();
    save_png(&crop, d.join("rgb_tile.png")).unwrap();
    let out = atelier(&[
        "gradcam", "--model", p(&model), p(&d.join("rgb_tile.png")), "--out", p(&d.join("cam.png")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let wrong = write_gray(d, "big.png", 70, 70, |i| i as u8);
    let out = atelier(&["gradcam", "--model", p(&model), &wrong, "--out", p(&d.join("x.png"))]);
    assert_eq!(out.status.code(), Some(2));

    // Combining a model with itself is the identity for every weight.
    let combined = d.join("ens.tsv");
    let out = atelier(&[
        "ensemble", "--resultsA", p(&results), "--resultsB", p(&results), "--labels", &manifest,
        "--out", p(&combined),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let merged = read_results(&combined).unwrap();
    for (m, r) in merged.iter().zip(&rows) {
        assert_eq!(m.mean_prob, r.mean_prob);
        assert_eq!(m.n_tiles_kept, 2 * r.n_tiles_kept);
    }
    assert!(d.join("ens.tsv.weights.tsv").exists());
}

#[test]
fn corrupt_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    fs::write(&model, b"ATRM\x01\0\0\0garbage").unwrap();
    let img = write_gray(dir.path(), "x.png", 120, 120, |i| i as u8);
    let out = atelier(&["classify", "--model", p(&model), &img]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

use std::path::Path;
use std::process::{Command, Output};

use sift_merge::pipeline::synthetic::{self, ObjectTexture, BACKGROUND};
use sift_merge::raster::{load_image, save_image, RasterImage, RgbImage};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sift-merge")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Training image, shifted scene and trained model in `dir`.
fn setup(dir: &Path) {
    let texture = ObjectTexture::random(21);
    save_image(&RasterImage::Rgb(synthetic::training_image(&texture)), dir.join("train.ppm")).unwrap();
    let scene = synthetic::render_scene(&texture, &synthetic::shifted_pose(21), 256, 256);
    save_image(&RasterImage::Rgb(scene.image), dir.join("scene.png")).unwrap();
    let out = cli(&["train", "-o", s(&dir.join("m.kpdb")), s(&dir.join("train.ppm"))]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn train_then_detect_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let text = std::fs::read_to_string(d.join("m.kpdb")).unwrap();
    assert!(text.starts_with("KPDB 1 "));

    let out = cli(&[
        "--verbose",
        "detect",
        "-m",
        s(&d.join("m.kpdb")),
        "-i",
        s(&d.join("scene.png")),
        "--overlay",
        s(&d.join("o.ppm")),
        "--mask",
        s(&d.join("k.pgm")),
        "--merge-log",
        s(&d.join("log.txt")),
        "--dump-dir",
        s(&d.join("dump")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("object pixels="));
    assert!(std::fs::read(d.join("o.ppm")).unwrap().starts_with(b"P6"));
    let mask = load_image(d.join("k.pgm")).unwrap().to_gray();
    assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(mask.data().iter().filter(|&&v| v == 1.0).count() > 10_000);
    assert!(d.join("log.txt").exists());
    assert!(d.join("dump/labels.pgm").exists());
    assert!(d.join("dump/regions.ppm").exists());
    assert!(d.join("dump/dog_o0_p0.pgm").exists());
}

#[test]
fn errors_are_stage_tagged_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);

    let missing = cli(&["detect", "-m", s(&d.join("m.kpdb")), "-i", s(&d.join("nope.png"))]);
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("[load]"), "{}", stderr(&missing));

    std::fs::write(d.join("bad.kpdb"), "NOPE\n").unwrap();
    let bad_model = cli(&["detect", "-m", s(&d.join("bad.kpdb")), "-i", s(&d.join("scene.png"))]);
    assert!(!bad_model.status.success());
    assert!(stderr(&bad_model).contains("[load] format error"), "{}", stderr(&bad_model));

    save_image(&RasterImage::Rgb(RgbImage::filled(128, 128, BACKGROUND)), d.join("empty.ppm")).unwrap();
    let not_found = cli(&["detect", "-m", s(&d.join("m.kpdb")), "-i", s(&d.join("empty.ppm"))]);
    assert_eq!(not_found.status.code(), Some(2));
    assert!(stderr(&not_found).contains("[matching] object not found"), "{}", stderr(&not_found));

    let bad_set = cli(&["--set", "ratio_threshold=2", "detect", "-m", s(&d.join("m.kpdb")), "-i", s(&d.join("scene.png"))]);
    assert!(!bad_set.status.success());
    assert!(stderr(&bad_set).contains("[config]"), "{}", stderr(&bad_set));

    let flat = d.join("flat.ppm");
    save_image(&RasterImage::Rgb(RgbImage::filled(64, 64, [9, 9, 9])), &flat).unwrap();
    let untrainable = cli(&["train", "-o", s(&d.join("f.kpdb")), s(&flat)]);
    assert!(!untrainable.status.success());
    assert!(stderr(&untrainable).contains("[features] training failed"), "{}", stderr(&untrainable));
}

#[test]
fn config_file_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::write(d.join("cfg.txt"), "# strict matching\nratio_threshold = 0.01\n").unwrap();
    let strict = cli(&["--config", s(&d.join("cfg.txt")), "detect", "-m", s(&d.join("m.kpdb")), "-i", s(&d.join("scene.png"))]);
    assert_eq!(strict.status.code(), Some(2), "{}", stderr(&strict));
    let relaxed = cli(&[
        "--config",
        s(&d.join("cfg.txt")),
        "--set",
        "ratio_threshold=0.8",
        "detect",
        "-m",
        s(&d.join("m.kpdb")),
        "-i",
        s(&d.join("scene.png")),
    ]);
    assert!(relaxed.status.success(), "{}", stderr(&relaxed));
}

#[test]
fn synth_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = cli(&["synth", "-o", s(&d.join("syn")), "--count", "1", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let syn = d.join("syn");
    for f in ["train_seed3.ppm", "seed3_identity.ppm", "seed3_shifted.ppm", "seed3_identity_mask.pgm"] {
        assert!(syn.join(f).exists(), "{f}");
    }
    let t = cli(&["train", "-o", s(&d.join("m.kpdb")), s(&syn.join("train_seed3.ppm"))]);
    assert!(t.status.success());

    let (tests, truth) = (d.join("tests"), d.join("truth"));
    std::fs::create_dir_all(&tests).unwrap();
    std::fs::create_dir_all(&truth).unwrap();
    for tag in ["identity", "shifted"] {
        std::fs::copy(syn.join(format!("seed3_{tag}.ppm")), tests.join(format!("{tag}.ppm"))).unwrap();
        std::fs::copy(syn.join(format!("seed3_{tag}_mask.pgm")), truth.join(format!("{tag}.pgm"))).unwrap();
    }
    let report = d.join("report.txt");
    let e = cli(&[
        "eval",
        "-m",
        s(&d.join("m.kpdb")),
        "-d",
        s(&tests),
        "--truth",
        s(&truth),
        "--report",
        s(&report),
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("n_test=2"));
    assert!(text.contains("accuracy_rate=100"));

    let synthetic = cli(&["eval", "--synthetic", "1", "--seed", "3"]);
    assert!(synthetic.status.success(), "{}", stderr(&synthetic));
    assert!(String::from_utf8_lossy(&synthetic.stdout).contains("n_test=2"));
}

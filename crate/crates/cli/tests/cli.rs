use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctpipe_core::ingestion::{Manifest, ScanRecord};
use ctpipe_core::npy::{load_volume, save_volume};
use ctpipe_core::{Category, IntensityDomain, Sex, Split, Volume};
use image::{ImageBuffer, Luma};
use serde_json::Value;

fn ctpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctpipe"))
        .args(args)
        .env_remove("CTPIPE_WORKERS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn write_slices(dir: &Path, depth: usize, size: u32, lung: std::ops::Range<usize>) {
    std::fs::create_dir_all(dir).unwrap();
    for d in 0..depth {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(size, size, |x, y| {
            let inner = (4..size - 4).contains(&x) && (4..size - 4).contains(&y);
            Luma([if lung.contains(&d) && inner { 30 } else { 900 + ((x + y) % 50) as u16 }])
        });
        img.save(dir.join(format!("img{d}.png"))).unwrap();
    }
}

fn manifest(root: &Path, rows: &[(&str, &str, Category, Sex, Split)]) -> PathBuf {
    let records = rows
        .iter()
        .map(|&(id, path, label, sex, split)| ScanRecord {
            scan_id: id.into(),
            path: path.into(),
            label,
            sex,
            split,
        })
        .collect();
    let path = root.join("manifest.csv");
    std::fs::write(&path, Manifest::new(records).unwrap().to_csv().unwrap()).unwrap();
    path
}

#[test]
fn ingest_trim_resize_normalize_chain() {
    let dir = tempfile::tempdir().unwrap();
    let slices = dir.path().join("scanA");
    write_slices(&slices, 30, 20, 8..22);

    let raw = dir.path().join("raw.npy");
    assert!(ctpipe(&["ingest", "--slices", s(&slices), "--output", s(&raw)]).status.success());
    let (v, side) = load_volume(&raw).unwrap();
    assert_eq!(side.scan_id, "scanA");
    assert_eq!(v.shape().as_tuple(), (30, 20, 20));
    assert_eq!(v.domain(), IntensityDomain::Raw);

    let trimmed = dir.path().join("trim.npy");
    let out = ctpipe(&["trim", "--input", s(&raw), "--output", s(&trimmed), "--emit-range"]);
    assert!(out.status.success());
    let range: Value = serde_json::from_slice(&std::fs::read(dir.path().join("trim.range.json")).unwrap()).unwrap();
    assert_eq!((range["d_lo"].as_u64(), range["d_hi"].as_u64()), (Some(8), Some(21)));
    assert_eq!(load_volume(&trimmed).unwrap().0.depth(), 14);

    let resized = dir.path().join("resized.npy");
    let out = ctpipe(&["resize", "--input", s(&trimmed), "--output", s(&resized), "--depth", "7", "--height", "10", "--width", "12"]);
    assert!(out.status.success());
    assert_eq!(load_volume(&resized).unwrap().0.shape().as_tuple(), (7, 10, 12));

    let unit = dir.path().join("unit.npy");
    assert!(ctpipe(&["normalize", "--input", s(&resized), "--output", s(&unit)]).status.success());
    let (n, side) = load_volume(&unit).unwrap();
    assert_eq!(side.intensity_domain, IntensityDomain::Unit);
    assert_eq!(n.min_max(), (0.0, 1.0));
}

#[test]
fn ingest_rejects_mixed_slice_sizes() {
    let dir = tempfile::tempdir().unwrap();
    write_slices(&dir.path().join("s"), 3, 16, 0..0);
    ImageBuffer::<Luma<u16>, _>::from_pixel(8, 8, Luma([1u16]))
        .save(dir.path().join("s/img9.png"))
        .unwrap();
    let out = ctpipe(&["ingest", "--slices", s(&dir.path().join("s")), "--output", s(&dir.path().join("o.npy"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn augment_log_then_replay_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::from_fn((40, 24, 24), IntensityDomain::Unit, |d, h, w| ((d * 7 + h * 3 + w) % 97) as f32 / 96.0).unwrap();
    let input = dir.path().join("in.npy");
    save_volume(&input, "vol", &v).unwrap();
    let (a, b, log) = (dir.path().join("a.npy"), dir.path().join("b.npy"), dir.path().join("draws.json"));

    let out = ctpipe(&["augment", "--input", s(&input), "--output", s(&a), "--seed", "11", "--epoch", "2", "--depth", "32", "--log-draws", s(&log)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = ctpipe(&["augment", "--input", s(&input), "--output", s(&b), "--depth", "32", "--replay", s(&log)]);
    assert!(out.status.success());

    let (va, vb) = (load_volume(&a).unwrap().0, load_volume(&b).unwrap().0);
    assert_eq!(va.shape().as_tuple(), (32, 24, 24));
    assert!(va.data().iter().zip(vb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(va.data().iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn augment_refuses_raw_volume() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.npy");
    save_volume(&input, "r", &Volume::filled((4, 4, 4), 100.0, IntensityDomain::Raw).unwrap()).unwrap();
    let out = ctpipe(&["augment", "--input", s(&input), "--output", s(&dir.path().join("o.npy"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_slices(&dir.path().join("good"), 24, 16, 6..18);
    let rows = [
        ("good", "good", Category::A, Sex::Male, Split::Train),
        ("gone", "missing_dir", Category::G, Sex::Female, Split::Val),
    ];
    let m = manifest(dir.path(), &rows[..1]);
    let out_dir = dir.path().join("out");
    let common = ["--depth", "8", "--height", "8", "--width", "8"];

    let mut args = vec!["pipeline", "--manifest", s(&m), "--output-dir", s(&out_dir)];
    args.extend(common);
    let out = ctpipe(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("good.npy").exists());
    assert!(out_dir.join("report.json").exists());

    manifest(dir.path(), &rows);
    let out = ctpipe(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gone"));
    let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scans"].as_array().unwrap().len(), 2);

    let missing = dir.path().join("nope.csv");
    let out = ctpipe(&["pipeline", "--manifest", s(&missing), "--output-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_reads_config_and_worker_env() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["x", "y"] {
        write_slices(&dir.path().join(id), 20, 16, 4..16);
    }
    let m = manifest(
        dir.path(),
        &[
            ("x", "x", Category::Covid, Sex::Male, Split::Train),
            ("y", "y", Category::Normal, Sex::Female, Split::Train),
        ],
    );
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({
        "manifest": m,
        "output_dir": dir.path().join("out"),
        "target": {"depth": 6, "height": 5, "width": 4},
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ctpipe"))
        .args(["pipeline", "--config", s(&cfg)])
        .env("CTPIPE_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (v, side) = load_volume(&dir.path().join("out/y.npy")).unwrap();
    assert_eq!(v.shape().as_tuple(), (6, 5, 4));
    assert_eq!(side.intensity_domain, IntensityDomain::Unit);
}

#[test]
fn stats_table_and_expected_check() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        dir.path(),
        &[
            ("a", "a", Category::A, Sex::Female, Split::Train),
            ("b", "b", Category::A, Sex::Male, Split::Train),
            ("c", "c", Category::G, Sex::Male, Split::Val),
        ],
    );
    let out = ctpipe(&["stats", "--manifest", s(&m)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("Training") && l.contains("1/1")));

    let out = ctpipe(&["stats", "--manifest", s(&m), "--json"]);
    let stats = json(&out);
    let expected = dir.path().join("expected.json");
    std::fs::write(&expected, stats.to_string()).unwrap();
    assert_eq!(ctpipe(&["stats", "--manifest", s(&m), "--expected", s(&expected)]).status.code(), Some(0));

    let mut wrong = stats.clone();
    wrong["train"]["total"]["female"] = 9.into();
    std::fs::write(&expected, wrong.to_string()).unwrap();
    let out = ctpipe(&["stats", "--manifest", s(&m), "--expected", s(&expected)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));
}

#[test]
fn weights_follow_train_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    let ids: Vec<String> = (0..8).map(|i| format!("s{i}")).collect();
    // A:4, G:2, Covid:1, Normal:1
    let labels = [Category::A, Category::A, Category::A, Category::A, Category::G, Category::G, Category::Covid, Category::Normal];
    for (id, &label) in ids.iter().zip(&labels) {
        rows.push((id.as_str(), id.as_str(), label, Sex::Female, Split::Train));
    }
    let m = manifest(dir.path(), &rows);
    let w = json(&ctpipe(&["weights", "--manifest", s(&m)]));
    assert_eq!(w["scheme"], "inverse_frequency");
    assert_eq!(w["categories"], serde_json::json!(["A", "G", "Covid", "Normal"]));
    assert_eq!(w["counts"], serde_json::json!([4, 2, 1, 1]));
    assert_eq!(w["weights"], serde_json::json!([0.5, 1.0, 2.0, 2.0]));

    let u = json(&ctpipe(&["weights", "--manifest", s(&m), "--scheme", "uniform"]));
    assert_eq!(u["weights"], serde_json::json!([1.0, 1.0, 1.0, 1.0]));
    let out = ctpipe(&["weights", "--manifest", s(&m), "--scheme", "manual", "--weights", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ctpipe(&["weights", "--manifest", s(&m), "--split", "val"]);
    assert_eq!(out.status.code(), Some(1), "empty categories have no inverse weight");
}

#[test]
fn eval_accepts_labels_and_logits() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        dir.path(),
        &[
            ("p", "p", Category::A, Sex::Female, Split::Val),
            ("q", "q", Category::A, Sex::Male, Split::Val),
            ("r", "r", Category::G, Sex::Male, Split::Val),
        ],
    );
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "scan_id,predicted_label\np,A\nq,G\nr,G\n").unwrap();
    let e = json(&ctpipe(&["eval", "--predictions", s(&labels), "--manifest", s(&m)]));
    assert!((e["macro_f1"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(e["confusion"]["counts"][0], serde_json::json!([1, 1, 0, 0]));

    let logits = dir.path().join("logits.csv");
    std::fs::write(
        &logits,
        "scan_id,logit_A,logit_G,logit_Covid,logit_Normal\np,3,0,0,0\nq,0.5,0.5,0,0\nr,0,2,1,-1\n",
    )
    .unwrap();
    let e = json(&ctpipe(&["eval", "--predictions", s(&logits), "--manifest", s(&m)]));
    // q ties between A and G and resolves to A.
    assert_eq!(e["macro_f1"].as_f64(), Some(0.5));
    assert_eq!(e["per_category_f1"]["A"].as_f64(), Some(1.0));

    std::fs::write(&labels, "scan_id,predicted_label\nzzz,A\n").unwrap();
    assert_eq!(ctpipe(&["eval", "--predictions", s(&labels), "--manifest", s(&m)]).status.code(), Some(1));
}

#[test]
fn attn_demo_prints_trace() {
    let out = ctpipe(&["attn-demo"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("R = 2, K = 1, channels = 2"));
    let line = text.lines().find(|l| l.starts_with("(5) output")).unwrap();
    let a0 = 1.0 / (1.0 + (-0.8f64).exp());
    assert!(line.contains(&format!("{}", a0 + 3.0 * (1.0 - a0))[..8]));
}

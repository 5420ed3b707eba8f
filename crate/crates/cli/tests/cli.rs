use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rangepack::geometry::{quantize, read_rimg, QuantizationSpec};
use rangepack::metrics::{MetricReport, Psnr};
use rangepack::predictor::WeightBundle;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangepack"))
        .args(args)
        .output()
        .expect("spawn rangepack")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn genscene(dir: &Path, kind: &str, seed: &str) -> PathBuf {
    let out = dir.join(kind);
    ok(&[
        "genscene", "--kind", kind, "--seed", seed, "--height", "16", "--width", "160", "-o",
        s(&out),
    ]);
    out
}

fn read(path: &Path) -> rangepack::geometry::RangeImage {
    read_rimg(fs::File::open(path).unwrap()).unwrap().0
}

fn bpp_of(stdout: &str) -> f64 {
    let line = stdout.lines().next().unwrap();
    let field = line.split(", ").nth(1).unwrap();
    field.trim_end_matches(" bpp").parse().unwrap()
}

#[test]
fn encode_decode_round_trip_matches_quantized_input() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "boxes-on-ground", "4");
    let (input, calib) = (scene.join("frame_0.rimg"), scene.join("calib.json"));
    let container = tmp.path().join("f.rfrm");
    let decoded = tmp.path().join("d.rimg");
    for predictor in ["previous-valid", "linear"] {
        for block in ["16x50", "whole", "4x7"] {
            ok(&[
                "encode", s(&input), "--calib", s(&calib), "--precision", "0.1", "--predictor",
                predictor, "--block", block, "-o", s(&container),
            ]);
            ok(&["decode", s(&container), "--calib", s(&calib), "-o", s(&decoded)]);
            let expected = quantize(&read(&input), QuantizationSpec::new(0.1).unwrap());
            assert_eq!(read(&decoded), expected, "{predictor} {block}");
        }
    }
}

#[test]
fn coarser_precision_costs_fewer_bits() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "planes", "1");
    let out = tmp.path().join("f.rfrm");
    let bpp = |p: &str| {
        bpp_of(&ok(&[
            "encode", s(&scene.join("frame_0.rimg")), "--calib", s(&scene.join("calib.json")),
            "--precision", p, "-o", s(&out),
        ]))
    };
    assert!(bpp("0.1") < bpp("0.02"));
}

#[test]
fn anchor_sequence_round_trip_and_missing_weights() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "moving-sensor-pair", "2");
    let calib = scene.join("calib.json");
    let wdir = tmp.path().join("weights");
    fs::create_dir(&wdir).unwrap();
    let bundle = WeightBundle::random(4, 199, &[8, 16], 0, &[8], 11).unwrap();
    let wpath = wdir.join("t.rwgt");
    fs::write(&wpath, bundle.to_bytes()).unwrap();
    let container = tmp.path().join("seq.rseq");
    ok(&[
        "encode", s(&scene.join("frame_0.rimg")), s(&scene.join("frame_1.rimg")), "--calib",
        s(&calib), "--predictor", "anchor", "--weights", s(&wpath), "--temporal", "-o",
        s(&container),
    ]);
    let out = tmp.path().join("dec.rimg");
    ok(&[
        "decode", s(&container), "--calib", s(&calib), "--weights-dir", s(&wdir), "-o", s(&out),
    ]);
    let spec = QuantizationSpec::new(0.1).unwrap();
    for t in 0..2 {
        let original = read(&scene.join(format!("frame_{t}.rimg")));
        assert_eq!(read(&tmp.path().join(format!("dec_{t}.rimg"))), quantize(&original, spec));
    }

    let missing = run(&["decode", s(&container), "--calib", s(&calib), "-o", s(&out)]);
    assert_eq!(missing.status.code(), Some(5));
    let msg = String::from_utf8_lossy(&missing.stderr);
    assert!(msg.contains(&bundle.digest_hex()), "{msg}");
}

#[test]
fn temporal_flag_requires_anchor_predictor() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "sphere", "0");
    let out = run(&[
        "encode", s(&scene.join("frame_0.rimg")), "--calib", s(&scene.join("calib.json")),
        "--temporal", "-o", s(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_and_mismatched_inputs_fail() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "boxes-on-ground", "5");
    let calib = scene.join("calib.json");
    let container = tmp.path().join("f.rfrm");
    ok(&[
        "encode", s(&scene.join("frame_0.rimg")), "--calib", s(&calib), "-o", s(&container),
    ]);
    let good = fs::read(&container).unwrap();
    let out = tmp.path().join("d.rimg");

    let mut bad = good.clone();
    let k = bad.len() - 3;
    bad[k] ^= 0x40;
    fs::write(&container, &bad).unwrap();
    let r = run(&["decode", s(&container), "--calib", s(&calib), "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("corrupt"));
    assert!(!out.exists());

    fs::write(&container, &good).unwrap();
    let other = tmp.path().join("other");
    ok(&[
        "genscene", "--kind", "planes", "--height", "8", "--width", "160", "-o", s(&other),
    ]);
    let r = run(&[
        "decode", s(&container), "--calib", s(&other.join("calib.json")), "-o", s(&out),
    ]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("header mismatch"));
}

#[test]
fn eval_reports() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "sphere", "8");
    let (frame, calib) = (scene.join("frame_0.rimg"), scene.join("calib.json"));
    let report_path = tmp.path().join("r.json");
    ok(&["eval", s(&frame), s(&frame), "--calib", s(&calib), "-o", s(&report_path)]);
    let report = MetricReport::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.cd_sym, 0.0);
    assert_eq!(report.psnr, Psnr::Infinite);
    assert_eq!(report.bpp, None);

    let container = tmp.path().join("f.rfrm");
    let decoded = tmp.path().join("d.rimg");
    ok(&["encode", s(&frame), "--calib", s(&calib), "--precision", "0.1", "-o", s(&container)]);
    ok(&["decode", s(&container), "--calib", s(&calib), "-o", s(&decoded)]);
    let json = ok(&[
        "eval", s(&frame), s(&decoded), "--calib", s(&calib), "--container", s(&container),
    ]);
    let report = MetricReport::from_json(&json).unwrap();
    assert!(report.cd_sym > 0.0 && report.cd_sym <= 0.05, "{}", report.cd_sym);
    assert!(report.bpp.unwrap() > 0.0);
    assert_eq!(MetricReport::from_json(&report.to_json().unwrap()).unwrap(), report);
}

fn table_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("rd_table.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

fn zero_mass(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let (mut zero, mut total) = (0u64, 0u64);
    for line in text.lines().skip(1) {
        let (d, c) = line.split_once('\t').unwrap();
        let c: u64 = c.parse().unwrap();
        total += c;
        if d == "0" {
            zero += c;
        }
    }
    zero as f64 / total as f64
}

#[test]
fn bench_table_is_sorted_monotone_and_deterministic() {
    let tmp = TempDir::new().unwrap();
    let args = |out: &Path| {
        ok(&[
            "bench", "--scene", "boxes-on-ground", "--seed", "6", "--height", "16", "--width",
            "200", "--precisions", "0.2,0.02,0.1", "--out-dir", s(out),
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(args(&a), args(&b));
    let rows = table_rows(&a);
    assert_eq!(rows.len(), 6);
    let precisions: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(precisions.windows(2).all(|w| w[0] <= w[1]));
    for name in ["previous-valid", "linear"] {
        let bpp: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == name)
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert!(bpp.windows(2).all(|w| w[1] < w[0]), "{name}: {bpp:?}");
        let mass: Vec<f64> = ["0.02", "0.1", "0.2"]
            .iter()
            .map(|p| zero_mass(&a.join(format!("hist_{name}_{p}.tsv"))))
            .collect();
        assert!(mass.windows(2).all(|w| w[1] >= w[0]), "{name}: {mass:?}");
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn bench_reads_a_corpus_directory() {
    let tmp = TempDir::new().unwrap();
    let scene = genscene(tmp.path(), "static-pair", "3");
    assert_eq!(
        fs::read(scene.join("frame_0.rimg")).unwrap(),
        fs::read(scene.join("frame_1.rimg")).unwrap()
    );
    let out = tmp.path().join("b");
    ok(&[
        "bench", "--corpus", s(&scene), "--precisions", "0.1", "--predictors", "linear",
        "--out-dir", s(&out),
    ]);
    let rows = table_rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "linear");
}

#[test]
fn genscene_is_deterministic_and_rejects_unknown_kinds() {
    let tmp = TempDir::new().unwrap();
    let a = genscene(&tmp.path().join("a"), "planes", "9");
    let b = genscene(&tmp.path().join("b"), "planes", "9");
    for f in ["frame_0.rimg", "calib.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let r = run(&["genscene", "--kind", "torus", "-o", s(&tmp.path().join("c"))]);
    assert!(!r.status.success());
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use volmatte::io::{read_volume, Kind};
use volmatte::trimap::{build_trimap, fuse_masks};
use volmatte::Label;

fn volmatte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volmatte"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

struct Case {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Case {
    fn new(size: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = volmatte(&[
            "phantom",
            "--size",
            &size.to_string(),
            "--seed",
            &seed.to_string(),
            "--out-dir",
            &s(&root.join("ph")),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        Case { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> String {
        s(&self.root.join(rel))
    }

    fn masks(&self) -> Vec<String> {
        (0..4).map(|j| self.path(&format!("ph/mask_{j}"))).collect()
    }

    fn trimap(&self, radius: usize) -> String {
        let out_stem = self.path("trimap");
        let mut args = vec!["trimap".to_string(), "--dilate-radius".into(), radius.to_string()];
        args.push("--out".into());
        args.push(out_stem.clone());
        args.push("--masks".into());
        args.extend(self.masks());
        let out = volmatte(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(code(&out), 0);
        out_stem
    }
}

#[test]
fn trimap_counts_match_library() {
    let c = Case::new(20, 3);
    let stem = c.path("t");
    let mut args = vec!["trimap", "--masks"];
    let masks = c.masks();
    args.extend(masks.iter().map(String::as_str));
    args.extend(["--dilate-radius", "3", "--out", &stem]);
    let out = volmatte(&args);
    assert_eq!(code(&out), 0);
    assert!(Path::new(&format!("{stem}.json")).exists());
    assert!(Path::new(&format!("{stem}.raw")).exists());

    let loaded: Vec<_> = masks
        .iter()
        .map(|m| read_volume(m).unwrap().into_mask().unwrap())
        .collect();
    let (overlap, union) = fuse_masks(&loaded).unwrap();
    let t = build_trimap(&overlap, &union, 3).unwrap();
    let counts = &json(&out)["counts"];
    let want = t.counts();
    assert_eq!(counts["foreground"], want.foreground);
    assert_eq!(counts["unknown"], want.unknown);
    assert_eq!(counts["background"], want.background);
    let written = read_volume(&stem).unwrap().into_trimap().unwrap();
    assert_eq!(written, t);
}

#[test]
fn trimap_rejects_single_mask() {
    let c = Case::new(16, 0);
    let out = volmatte(&["trimap", "--masks", &c.path("ph/mask_0"), "--out", &c.path("t")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn trimap_rejects_mismatched_masks() {
    let a = Case::new(16, 0);
    let b = Case::new(18, 0);
    let out = volmatte(&["trimap", "--masks", &a.path("ph/mask_0"), &b.path("ph/mask_1"), "--out", &a.path("t")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn mat_writes_matte_and_report() {
    let c = Case::new(16, 1);
    let t = c.trimap(2);
    let a = c.path("a");
    let out = volmatte(&["mat", "--method", "cf", "--image", &c.path("ph/image"), "--trimap", &t, "--out", &a]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for ext in [".json", ".raw", ".report.json"] {
        assert!(Path::new(&format!("{a}{ext}")).exists(), "{ext}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(format!("{a}.report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "cf");
    assert_eq!(report["report"]["converged"], true);
    assert!(report["report"]["final_rel_residual"].as_f64().unwrap() <= 1e-7);
    let matte = read_volume(&a).unwrap();
    assert_eq!(matte.kind(), Kind::Alpha);
}

#[test]
fn mat_accepts_key_value_flags() {
    let c = Case::new(16, 1);
    let t = c.trimap(2);
    let a = c.path("kv");
    let image = format!("image={}", c.path("ph/image"));
    let trimap = format!("trimap={t}");
    let out_arg = format!("out={a}");
    let out = volmatte(&["mat", "method=knn", &image, &trimap, &out_arg, "lambda=100", "window=-1350:150"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["method"], "knn");
}

#[test]
fn mat_unknown_method_is_usage_error() {
    let c = Case::new(16, 1);
    let t = c.trimap(2);
    let out = volmatte(&["mat", "--method", "bayes", "--image", &c.path("ph/image"), "--trimap", &t, "--out", &c.path("x")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn mat_rejects_dimension_mismatch() {
    let a = Case::new(16, 1);
    let b = Case::new(18, 1);
    let t = b.trimap(2);
    let out = volmatte(&["mat", "--method", "cf", "--image", &a.path("ph/image"), "--trimap", &t, "--out", &a.path("x")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn mat_non_convergence_exits_3_with_report() {
    let c = Case::new(16, 1);
    let t = c.trimap(2);
    let a = c.path("slow");
    let out = volmatte(&[
        "mat", "--method", "cf", "--image", &c.path("ph/image"), "--trimap", &t, "--out", &a, "--max-iterations", "1",
    ]);
    assert_eq!(code(&out), 3);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(format!("{a}.report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["converged"], false);
    assert_eq!(report["report"]["iterations"], 1);
}

#[test]
fn calibrated_constraints_are_fractional_below_window_top() {
    let c = Case::new(16, 2);
    let t = c.trimap(2);
    let a = c.path("plus");
    let out = volmatte(&[
        "mat",
        "--method",
        "cf",
        "--calibrated",
        "--window",
        "-1350:150",
        "--image",
        &c.path("ph/image"),
        "--trimap",
        &t,
        "--out",
        &a,
        "--debug-constraints",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["method"], "cf+");

    let dump: Value = serde_json::from_str(&std::fs::read_to_string(format!("{a}.constraints.json")).unwrap()).unwrap();
    let image = read_volume(c.path("ph/image")).unwrap().into_image().unwrap();
    let trimap = read_volume(&t).unwrap().into_trimap().unwrap();
    let index = dump["index"].as_array().unwrap();
    let target = dump["target"].as_array().unwrap();
    let mut fg_seen = 0;
    for (i, s) in index.iter().zip(target) {
        let i = i.as_u64().unwrap() as usize;
        let s = s.as_f64().unwrap();
        match trimap.labels[i] {
            Label::Background => assert_eq!(s, 0.0),
            Label::Foreground => {
                let hu = image.values[i] as f64;
                assert!(hu < 150.0);
                let expect = (hu + 1350.0) / 1500.0;
                assert!((s - expect).abs() < 1e-12);
                assert!(s > 0.0 && s < 1.0);
                fg_seen += 1;
            }
            Label::Unknown => panic!("unknown voxel {i} constrained"),
        }
    }
    assert!(fg_seen > 0);
    assert_eq!(dump["constrained_count"].as_u64().unwrap() as usize, index.len());
}

#[test]
fn mat_rejects_wrong_file_kind() {
    let c = Case::new(16, 2);
    let t = c.trimap(2);
    let out = volmatte(&["mat", "--method", "cf", "--image", &c.path("ph/alpha_gt"), "--trimap", &t, "--out", &c.path("x")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn calibrated_needs_hu_image() {
    let c = Case::new(16, 2);
    let t = c.trimap(2);
    let img = read_volume(c.path("ph/image")).unwrap().into_image().unwrap();
    let norm = volmatte::volume::clamp_window(&img, -1350.0, 150.0).unwrap();
    let stem = c.path("norm");
    volmatte::io::write_volume(&norm.into(), &stem).unwrap();
    let run = |calibrated: &str| {
        volmatte(&[
            "mat", "--method", "cf", calibrated, "--image", &stem, "--trimap", &t, "--out", &c.path("x"),
        ])
    };
    assert_eq!(code(&run("--calibrated")), 2);
    assert_eq!(code(&run("--calibrated=false")), 0);
}

#[test]
fn phantom_is_deterministic() {
    let a = Case::new(16, 42);
    let b = Case::new(16, 42);
    let names = ["image", "alpha_gt", "fg", "bg", "mask_0", "mask_1", "mask_2", "mask_3"];
    for name in names {
        for ext in ["json", "raw"] {
            let rel = format!("ph/{name}.{ext}");
            assert_eq!(
                std::fs::read(a.root.join(&rel)).unwrap(),
                std::fs::read(b.root.join(&rel)).unwrap(),
                "{rel}"
            );
        }
    }
}

#[test]
fn phantom_rejects_small_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = volmatte(&["phantom", "--size", "8", "--out-dir", &s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn phantom_files_have_the_right_kinds() {
    let c = Case::new(16, 0);
    let kinds = [
        ("ph/image", Kind::Image),
        ("ph/fg", Kind::Image),
        ("ph/bg", Kind::Image),
        ("ph/alpha_gt", Kind::Alpha),
        ("ph/mask_0", Kind::Mask),
        ("ph/mask_3", Kind::Mask),
    ];
    for (rel, kind) in kinds {
        assert_eq!(read_volume(c.path(rel)).unwrap().kind(), kind, "{rel}");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(c.path("ph/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["thresholds"].as_array().unwrap().len(), 4);
}

#[test]
fn eval_rejects_shape_mismatch() {
    let a = Case::new(16, 0);
    let b = Case::new(17, 0);
    let out = volmatte(&["eval", "--pred", &a.path("ph/alpha_gt"), "--gt", &b.path("ph/alpha_gt")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_identical_and_single_case_aggregate() {
    let c = Case::new(16, 0);
    let gt = c.path("ph/alpha_gt");
    let out = volmatte(&["eval", "--pred", &gt, "--gt", &gt, "--aggregate"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    for m in ["sad", "mse", "grad", "conn"] {
        assert_eq!(v["cases"][0]["metrics"]["raw"][m], 0.0);
        assert_eq!(v["aggregate"][m]["formatted"], "0.00(±0.00)");
    }
}

#[test]
fn eval_broadcasts_single_reference() {
    let c = Case::new(16, 0);
    let gt = c.path("ph/alpha_gt");
    let out = volmatte(&["eval", "--pred", &gt, &gt, &gt, "--gt", &gt, "--aggregate"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["cases"].as_array().unwrap().len(), 3);
    let out = volmatte(&["eval", "--pred", &gt, &gt, &gt, "--gt", &gt, &gt]);
    assert_eq!(code(&out), 2);
}

fn pipeline(c: &Case, extra: &[&str]) -> (Output, Value) {
    let out_dir = c.path("pl");
    let image = c.path("ph/image");
    let masks = c.masks();
    let mut args = vec!["pipeline", "--image", &image, "--out-dir", &out_dir, "--xy-size", "24"];
    args.push("--masks");
    args.extend(masks.iter().map(String::as_str));
    args.extend(extra);
    let out = volmatte(&args);
    let manifest = serde_json::from_str(&std::fs::read_to_string(c.root.join("pl/manifest.json")).unwrap()).unwrap();
    (out, manifest)
}

#[test]
fn pipeline_method_restriction() {
    let c = Case::new(16, 5);
    let (out, m) = pipeline(&c, &["--methods", "cf", "--serial"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cands = m["candidates"].as_array().unwrap();
    let names: Vec<&str> = cands.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["cf", "cf+"]);
    for cand in cands {
        assert!(cand["metrics"].is_null());
        for key in ["matte", "montage"] {
            let p = cand[key].as_str().unwrap();
            let probe = if key == "matte" { format!("{p}.raw") } else { p.to_string() };
            assert!(Path::new(&probe).exists(), "{probe}");
        }
    }
    let pre = &m["preprocessing"];
    assert_eq!(pre["cropped_dims"][0], 24);
    assert_eq!(pre["crop"]["z_pad"], 3);
    assert_eq!(m["status"], "ok");
}

#[test]
fn pipeline_serial_and_concurrent_agree() {
    let c = Case::new(16, 6);
    let (_, serial) = pipeline(&c, &["--serial"]);
    let bytes = |m: &Value| -> Vec<Vec<u8>> {
        m["candidates"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| std::fs::read(format!("{}.raw", c["matte"].as_str().unwrap())).unwrap())
            .collect()
    };
    let first = bytes(&serial);
    let (_, concurrent) = pipeline(&c, &[]);
    assert_eq!(first.len(), 4);
    assert_eq!(first, bytes(&concurrent));
}

#[test]
fn pipeline_failure_leaves_partial_manifest() {
    let c = Case::new(16, 7);
    let bad = c.path("missing_mask");
    let out_dir = c.path("pl");
    let out = volmatte(&[
        "pipeline",
        "--image",
        &c.path("ph/image"),
        "--masks",
        &c.path("ph/mask_0"),
        &bad,
        "--out-dir",
        &out_dir,
    ]);
    assert_eq!(code(&out), 2);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(c.root.join("pl/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("missing_mask"));
    assert!(m["candidates"].as_array().unwrap().is_empty());
}

#[test]
fn pipeline_unknown_method_is_usage_error() {
    let c = Case::new(16, 7);
    let (out, _) = {
        let out_dir = c.path("pl2");
        let image = c.path("ph/image");
        let masks = c.masks();
        let mut args = vec!["pipeline", "--image", &image, "--out-dir", &out_dir, "--methods", "cf,lkm", "--masks"];
        args.extend(masks.iter().map(String::as_str));
        (volmatte(&args), ())
    };
    assert_eq!(code(&out), 2);
}

//! Helpers shared by the CLI integration tests: running the real binary
//! and byte-level comparison of output trees.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alight"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn alight")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "alight {:?} exited {:?}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Runs the binary and returns its exit code.
pub fn exit_code(args: &[&str]) -> i32 {
    run(args).status.code().expect("no exit code")
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let bytes = std::fs::read(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_slice(&bytes)
        .unwrap_or_else(|e| panic!("bad JSON in {}: {e}", path.display()))
}

/// Every file under `dir` as relative path -> contents.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    collect(dir, dir, &mut out);
    out
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).expect("read_dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect(root, &path, out);
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .into_owned();
            out.insert(rel, std::fs::read(&path).expect("read file"));
        }
    }
}

/// Asserts two output trees are byte-identical, naming the first mismatch.
pub fn assert_same_tree(a: &Path, b: &Path, what: &str) {
    let ta = tree(a);
    let tb = tree(b);
    let ka: Vec<&String> = ta.keys().collect();
    let kb: Vec<&String> = tb.keys().collect();
    assert_eq!(ka, kb, "{what}: file lists differ");
    for (name, bytes) in &ta {
        assert_eq!(
            bytes, &tb[name],
            "{what}: {name} differs between {} and {}",
            a.display(),
            b.display()
        );
    }
}

/// Builds a procedural model and returns the model path.
pub fn build_model(dir: &Path, per_type: usize, side: usize, k: usize, seed: u64) -> PathBuf {
    let model = dir.join("model.alight");
    run_ok(&[
        "build-model",
        "--procedural",
        "--per-type",
        &per_type.to_string(),
        "--map-side",
        &side.to_string(),
        "--components",
        &k.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &model.to_string_lossy(),
    ]);
    model
}

pub fn generate(
    model: &Path,
    out: &Path,
    scenes: usize,
    faces: usize,
    crop: usize,
    seed: u64,
    extra: &[&str],
) {
    let mut args = vec![
        "generate".to_string(),
        "--model".into(),
        model.to_string_lossy().into_owned(),
        "--out".into(),
        out.to_string_lossy().into_owned(),
        "--scenes".into(),
        scenes.to_string(),
        "--faces".into(),
        faces.to_string(),
        "--crop".into(),
        crop.to_string(),
        "--seed".into(),
        seed.to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&refs);
}

/// Copies each ground-truth albedo map (and its sidecar) into `pred_dir`
/// under the prediction naming scheme `<face_id>.f32`.
pub fn gt_as_predictions(dataset: &Path, pred_dir: &Path) {
    std::fs::create_dir_all(pred_dir).unwrap();
    let manifest = alight_core::benchmark::load_manifest(dataset).unwrap();
    for scene in &manifest.scenes {
        for face in &scene.faces {
            let src = dataset.join(&face.albedo_map);
            let dst = pred_dir.join(format!("{}.f32", face.face_id));
            std::fs::copy(&src, &dst).unwrap();
            let mut src_side = src.clone().into_os_string();
            src_side.push(".json");
            let mut dst_side = dst.into_os_string();
            dst_side.push(".json");
            std::fs::copy(src_side, dst_side).unwrap();
        }
    }
}

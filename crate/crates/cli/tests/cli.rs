use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cloudnet_core::model::{Network, NetworkConfig, WeightInit};
use cloudnet_core::raster_io::{read_gray, write_gt, write_scene, write_u8, GrayRaster, Raster, Split};
use cloudnet_core::synthetic::cloud_scene;

fn cloudnet(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cloudnet"));
    cmd.env_remove("CLOUDNET_DATA_ROOT").args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("run cloudnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Config for a tiny network so commands run in well under a second.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[paths]
data_root = "data"
output_dir = "out"

[network]
input_side = 16
depth_schedule = [4, 8]
bottleneck_depth = 16

[train]
seed = 3
max_epochs = 2
batch_size = 2
initial_lr = 1e-3
patch_size = 32
init = {{ kind = "glorot-uniform" }}

[inference]
model_input_side = 16
{extra}
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn add_scene(root: &Path, split: Split, id: &str, h: usize, w: usize, seed: u64, with_gt: bool) -> Raster<u8> {
    let (scene, mask) = cloud_scene(id, h, w, seed);
    write_scene(root, split, id, &scene).unwrap();
    if with_gt {
        write_gt(root, split, id, &mask).unwrap();
    }
    mask
}

#[test]
fn help_lists_defaults() {
    let o = cloudnet(&["--help"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for v in ["1e-4", "0.7", "15", "1e-9", "0.047", "384", "192"] {
        assert!(text.contains(v), "--help lacks {v}:\n{text}");
    }
    for sub in ["prepare", "train", "predict", "evaluate"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(cloudnet(&[], None).status.code(), Some(1));
    assert_eq!(cloudnet(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(cloudnet(&["train"], None).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[paths]\noutput_dir = \"o\"\ndata_root = \"d\"\n[train]\nmax_epochs = 1\n").unwrap();
    let o = cloudnet(&["train"], Some(&cfg));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.seed"));
}

#[test]
fn prepare_counts_patches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "patch_size = 384");
    add_scene(&dir.path().join("data"), Split::Train, "big", 768, 768, 1, true);
    let o = cloudnet(&["prepare"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("train: 1 scenes -> 4 patches"), "{}", stdout(&o));
    let manifest = std::fs::read_to_string(dir.path().join("out/patches/train_manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(dir.path().join("out/patches/train/gt/gt_patch_1_1_big.TIF").exists());
    // Idempotent: a second run reports the same.
    let again = cloudnet(&["prepare"], Some(&cfg));
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn prepare_on_empty_root_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    let cfg = small_config(dir.path(), "");
    let o = cloudnet(&["prepare"], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no scenes"));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    add_scene(&dir.path().join("data"), Split::Train, "a", 32, 32, 1, true);
    let o = cloudnet(&["train", "--max-epochs", "0"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let net = Network::<f32>::load(&dir.path().join("out/best.ckpt"), None).unwrap();
    let expected = Network::<f32>::build(net.config().clone(), WeightInit::GlorotUniform, 3).unwrap();
    assert_eq!(net, expected);
    assert_eq!(std::fs::read_to_string(dir.path().join("out/history.csv")).unwrap(), "epoch,loss,lr\n");
}

#[test]
fn missing_ground_truth_stops_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    add_scene(&dir.path().join("data"), Split::Train, "a", 32, 32, 1, false);
    let o = cloudnet(&["train"], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out/history.csv").exists());
}

#[test]
fn train_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    for i in 0..3 {
        add_scene(&dir.path().join("data"), Split::Train, &format!("s{i}"), 48, 40, i, true);
    }
    let history = dir.path().join("out/history.csv");
    assert!(cloudnet(&["train", "--max-epochs", "3"], Some(&cfg)).status.success());
    let full = std::fs::read_to_string(&history).unwrap();
    assert_eq!(full.lines().count(), 4);
    assert!(cloudnet(&["train", "--max-epochs", "3"], Some(&cfg)).status.success());
    assert_eq!(std::fs::read_to_string(&history).unwrap(), full);

    assert!(cloudnet(&["train", "--max-epochs", "1"], Some(&cfg)).status.success());
    let last = dir.path().join("out/last.ckpt");
    let o = cloudnet(&["train", "--max-epochs", "3", "--checkpoint", last.to_str().unwrap()], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&history).unwrap(), full);

    let other = cloudnet(&["train", "--max-epochs", "3", "--seed", "99"], Some(&cfg));
    assert!(other.status.success());
    assert_ne!(std::fs::read_to_string(&history).unwrap(), full);
}

#[test]
fn predict_writes_scene_sized_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "patch_size = 384");
    let data = dir.path().join("data");
    add_scene(&data, Split::Train, "a", 32, 32, 1, true);
    add_scene(&data, Split::Test, "t", 768, 768, 2, false);
    assert!(cloudnet(&["train", "--max-epochs", "1"], Some(&cfg)).status.success());
    let o = cloudnet(&["predict", "--emit-prob"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mask = dir.path().join("out/predictions/t_mask.TIF");
    match read_gray(&mask).unwrap() {
        GrayRaster::U8(r) => {
            assert_eq!(r.dims(), (768, 768));
            assert!(r.data().iter().all(|&v| v == 0 || v == 255));
        }
        other => panic!("unexpected mask type {other:?}"),
    }
    assert!(dir.path().join("out/predictions/t_prob.TIF").exists());
    assert_eq!(cloudnet(&["predict", "nope"], Some(&cfg)).status.code(), Some(2));
}

#[test]
fn predict_rejects_incompatible_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    add_scene(&dir.path().join("data"), Split::Test, "t", 20, 20, 2, false);
    let five = Network::<f32>::build(NetworkConfig::with_levels(64, 4, 5), WeightInit::default(), 0).unwrap();
    let ckpt = dir.path().join("five.ckpt");
    five.save(&ckpt).unwrap();
    let o = cloudnet(&["predict", "--checkpoint", ckpt.to_str().unwrap()], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn evaluate_known_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let pred = Raster::new(2, 5, vec![255, 255, 255, 0, 0, 0, 0, 0, 0, 255]).unwrap();
    let gt = Raster::new(2, 5, vec![255, 255, 255, 255, 0, 0, 0, 0, 0, 0]).unwrap();
    write_u8(&dir.path().join("out/predictions/s_mask.TIF"), &pred).unwrap();
    write_u8(&dir.path().join("data/test/gt/gt_s.TIF"), &gt).unwrap();
    let o = cloudnet(&["evaluate"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(text.contains("Jaccard 60.00  Precision 75.00  Recall 75.00  Specificity 83.33  Overall 80.00"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(csv.contains("global,3,5,1,1,0.6,0.75,0.75,"));
}

#[test]
fn evaluate_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    for (i, id) in ["p", "q"].iter().enumerate() {
        let mask = cloud_scene(id, 30, 30, i as u64).1.map(|v| v * 255);
        write_u8(&dir.path().join(format!("out/predictions/{id}_mask.TIF")), &mask).unwrap();
        write_u8(&dir.path().join(format!("data/test/gt/gt_{id}.TIF")), &mask).unwrap();
    }
    let o = cloudnet(&["evaluate"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Jaccard 100.00  Precision 100.00  Recall 100.00  Specificity 100.00  Overall 100.00"));
}

#[test]
fn evaluate_without_predictions_lists_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    std::fs::create_dir_all(dir.path().join("out/predictions")).unwrap();
    write_u8(&dir.path().join("data/test/gt/gt_s7.TIF"), &Raster::filled(4, 4, 0u8)).unwrap();
    let o = cloudnet(&["evaluate"], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gt_s7"), "{}", stderr(&o));
}

#[test]
fn data_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "patch_size = 384");
    let elsewhere = dir.path().join("elsewhere");
    add_scene(&elsewhere, Split::Train, "e", 400, 10, 1, true);
    let o = Command::new(env!("CARGO_BIN_EXE_cloudnet"))
        .args(["prepare", "--config"])
        .arg(&cfg)
        .env("CLOUDNET_DATA_ROOT", &elsewhere)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("train: 1 scenes -> 2 patches"));
}

use std::path::{Path, PathBuf};

use cloudnet_core::evaluation::{evaluate_testset, REFERENCE_ROWS, METRIC_NAMES};
use cloudnet_core::inference::{predict_scene, write_prediction};
use cloudnet_core::loss::SoftJaccard;
use cloudnet_core::model::Network;
use cloudnet_core::raster_io::{
    build_manifest, write_gt, write_scene, DatasetManifest, Raster, SpectralScene, Split, GT_DIR,
};
use cloudnet_core::tiling::{cut_mask, cut_patches};
use cloudnet_core::trainer::{load_samples, train_samples, write_history_csv, EpochRecord, LrEvent, TrainState};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}_manifest.csv", split.name()))
}

/// Cuts every raw scene into padded patches and writes them, with
/// per-split manifests, under `<output_dir>/patches`.
pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let size = cfg.inference.patch_size;
    let out = cfg.patches_dir();
    let mut scenes_seen = 0;
    for split in [Split::Train, Split::Test] {
        let manifest = build_manifest(&cfg.data_root, split)?;
        if manifest.is_empty() {
            continue;
        }
        scenes_seen += manifest.entries.len();
        for entry in &manifest.entries {
            let scene = entry.load_scene()?;
            let gt = entry.load_gt(&scene)?;
            let (grid, patches) = cut_patches(&scene, size);
            for p in &patches {
                let name = grid.patch_name(p.grid_row, p.grid_col);
                let bands: [Raster<u16>; 4] =
                    std::array::from_fn(|b| Raster::new(size, size, p.channel(b).to_vec()).expect("patch plane"));
                write_scene(&out, split, &name, &SpectralScene::new(name.clone(), bands)?)?;
            }
            if let Some(gt) = gt {
                let (grid, cells) = cut_mask(scene.scene_id(), gt.mask(), size)?;
                for m in cells {
                    let name = grid.patch_name(m.grid_row, m.grid_col);
                    write_gt(&out, split, &name, &Raster::new(size, size, m.values)?)?;
                }
            }
        }
        let patches = build_manifest(&out, split)?;
        patches.write_csv(&manifest_path(&out, split))?;
        println!(
            "{}: {} scenes -> {} patches",
            split.name(),
            manifest.entries.len(),
            patches.entries.len()
        );
    }
    if scenes_seen == 0 {
        return Err(CliError::Data(format!(
            "no scenes found under {} (expected train/ or test/ with blue, green, red, nir directories)",
            cfg.data_root.display()
        )));
    }
    println!("patches written to {}", out.display());
    Ok(())
}

fn training_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let prepared = manifest_path(&cfg.patches_dir(), Split::Train);
    let manifest = if prepared.exists() {
        DatasetManifest::read_csv(&prepared, Split::Train)?
    } else {
        build_manifest(&cfg.data_root, Split::Train)?
    };
    if manifest.is_empty() {
        return Err(CliError::Data(format!(
            "no training scenes: neither {} nor {} has any",
            prepared.display(),
            cfg.data_root.join(Split::Train.name()).display()
        )));
    }
    Ok(manifest)
}

/// Trains, writing `best.ckpt`, `last.ckpt` and `history.csv` to the output
/// directory. `resume` continues from a checkpoint written by this command.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let manifest = training_manifest(cfg)?;
    let samples = load_samples::<f32>(&manifest, cfg.train.patch_size, cfg.network.input_side)?;
    println!("loaded {} training samples from {} manifest entries", samples.len(), manifest.entries.len());
    let state = match resume {
        Some(path) => {
            let s = TrainState::<f32>::load(path, Some(&cfg.network))?;
            println!("resuming after epoch {} at lr {:e}", s.epoch, s.lr());
            s
        }
        None => TrainState::new(cfg.network.clone(), &cfg.train)?,
    };
    let best = cfg.best_checkpoint();
    let last = cfg.last_checkpoint();
    let history = cfg.output_dir.join("history.csv");
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    write_history_csv(&history, &state.history)?;
    let mut improved_any = false;
    let mut observer = |s: &TrainState<f32>, r: &EpochRecord, e: LrEvent| {
        s.save(&last)?;
        if e == LrEvent::Improved {
            s.save(&best)?;
            improved_any = true;
        }
        write_history_csv(&history, &s.history)?;
        println!("epoch {:>4}  loss {:.6}  lr {:e}  {:?}", r.epoch, r.loss, r.lr, e);
        Ok(())
    };
    let out = train_samples(state, &samples, &cfg.train, &cfg.augment, &SoftJaccard::default(), &mut observer)?;
    if !improved_any && (resume.is_none() || !best.exists()) {
        out.state.save(&best)?;
    }
    if out.state.history.is_empty() || !last.exists() {
        out.state.save(&last)?;
    }
    println!(
        "finished after {} epochs ({:?}); best checkpoint {}",
        out.state.epoch,
        out.stop,
        best.display()
    );
    Ok(())
}

/// Writes `<scene_id>_mask.TIF` (and optionally `_prob.TIF`) for test scenes.
pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>, emit_prob: bool, scene_ids: &[String]) -> Result<()> {
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.checkpoint.clone())
        .unwrap_or_else(|| cfg.best_checkpoint());
    if !ckpt.exists() {
        return Err(CliError::Data(format!("checkpoint {} not found; run `train` first", ckpt.display())));
    }
    let net = Network::<f32>::load(&ckpt, Some(&cfg.network))?;
    let manifest = build_manifest(&cfg.data_root, Split::Test)?;
    let mut entries: Vec<_> = manifest.entries.iter().collect();
    if !scene_ids.is_empty() {
        let unknown: Vec<&String> = scene_ids
            .iter()
            .filter(|id| !entries.iter().any(|e| &e.scene_id == *id))
            .collect();
        if !unknown.is_empty() {
            return Err(CliError::Data(format!("unknown test scenes: {unknown:?}")));
        }
        entries.retain(|e| scene_ids.contains(&e.scene_id));
    }
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "no test scenes under {}",
            cfg.data_root.join(Split::Test.name()).display()
        )));
    }
    let dir = cfg.predictions_dir();
    for entry in entries {
        let scene = entry.load_scene()?;
        let pred = predict_scene(&net, &scene, &cfg.inference)?;
        let cloud = pred.mask.data().iter().filter(|&&v| v == 1).count();
        write_prediction(&dir, &pred, emit_prob)?;
        println!(
            "{}: {}x{}, cloud cover {:.2}%",
            entry.scene_id,
            scene.height(),
            scene.width(),
            100.0 * cloud as f64 / pred.mask.data().len() as f64
        );
    }
    println!("masks written to {}", dir.display());
    Ok(())
}

/// Scores predictions against `<data_root>/test/gt`, writing `report.csv`
/// and `report.txt`.
pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let pred_dir = cfg.predictions_dir();
    let gt_dir = cfg.data_root.join(Split::Test.name()).join(GT_DIR);
    for (what, dir) in [("prediction", &pred_dir), ("ground-truth", &gt_dir)] {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("{what} directory {} does not exist", dir.display())));
        }
    }
    let report = evaluate_testset(&pred_dir, &gt_dir)?;
    let mut text = report.render_table();
    text.push_str("\nreference results on the 38-Cloud test set\n");
    let width = REFERENCE_ROWS.iter().map(|r| r.0.len()).max().unwrap_or(0);
    text.push_str(&format!("{:<width$}", "method"));
    for name in METRIC_NAMES {
        text.push_str(&format!("  {name:>11}"));
    }
    text.push('\n');
    for (name, vals) in REFERENCE_ROWS {
        text.push_str(&format!("{name:<width$}"));
        for v in vals {
            text.push_str(&format!("  {v:>11.2}"));
        }
        text.push('\n');
    }
    let txt = cfg.output_dir.join("report.txt");
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    std::fs::write(&txt, &text).map_err(|e| io_err(&txt, e))?;
    report.write_csv(&cfg.output_dir.join("report.csv"))?;
    print!("{text}");
    Ok(())
}

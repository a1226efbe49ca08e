//! Writes a small synthetic dataset in the on-disk layout the CLI reads.
//!
//! ```text
//! cargo run -p cloudnet-core --example synthetic_dataset -- <root> [train scenes] [test scenes] [side]
//! ```

use std::path::PathBuf;

use cloudnet_core::raster_io::{write_gt, write_scene, Split};
use cloudnet_core::synthetic::cloud_scene;

fn main() {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let mut next = |default: usize| args.next().map_or(default, |v| v.parse().expect("number"));
    let (train, test, side) = (next(8), next(2), next(64));
    for (split, count, offset) in [(Split::Train, train, 0), (Split::Test, test, 1000)] {
        for i in 0..count {
            let id = format!("{}{i:03}", split.name());
            let (scene, mask) = cloud_scene(&id, side, side, offset + i as u64);
            write_scene(&root, split, &id, &scene).expect("write scene");
            write_gt(&root, split, &id, &mask).expect("write ground truth");
        }
    }
    println!("wrote {train} train and {test} test scenes of {side}x{side} to {}", root.display());
}

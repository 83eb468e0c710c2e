//! Generate one cloud of every synthetic shape and write them as PLY.
//!
//! cargo run --example synth_gen -- [out_dir]

use std::path::PathBuf;

use kpcc::pointcloud::save_ply;
use kpcc::synthgen::{gen, ShapeKind};

fn main() -> kpcc::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let depth = 8;
    for kind in ShapeKind::ALL {
        let pc = gen(&kind.default_shape(depth), depth, 1)?;
        let path = dir.join(format!("{kind}.ply"));
        save_ply(&pc, &path)?;
        println!("{:<7} {:>7} points -> {}", kind.to_string(), pc.len(), path.display());
    }
    Ok(())
}

//! Tabulate bits per point for a few shapes under each built-in model.
//!
//! cargo run --release --example bench_table

use kpcc::pipeline::{bench, EncodeConfig};
use kpcc::pointcloud::save_ply;
use kpcc::probmodel::ModelSpec;
use kpcc::synthgen::{gen, Shape};

fn main() -> kpcc::Result<()> {
    let dir = std::env::temp_dir().join(format!("kpcc-bench-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let shapes = [
        ("plane", Shape::Plane { axis: 2, level: 100 }),
        ("sphere", Shape::Sphere { radius: 120 }),
        ("boxes", Shape::BoxUnion { count: 4 }),
        ("figure", Shape::Figure),
    ];
    let mut inputs = Vec::new();
    for (name, shape) in &shapes {
        let path = dir.join(format!("{name}.ply"));
        save_ply(&gen(shape, 9, 1)?, &path)?;
        inputs.push(path);
    }
    let models = [
        ModelSpec::Uniform,
        ModelSpec::Adaptive { order: 0 },
        ModelSpec::adaptive(),
    ];
    let table = bench(&inputs, &models, &EncodeConfig::default())?;
    print!("{}", table.to_text());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

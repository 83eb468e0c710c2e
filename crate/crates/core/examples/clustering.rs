//! Split a figure into clusters and show their local frames.
//!
//! cargo run --example clustering

use kpcc::cluster::{cluster_points, merge_clusters};
use kpcc::synthgen::{gen, Shape};

fn main() -> kpcc::Result<()> {
    let pc = gen(&Shape::Figure, 10, 0)?;
    let set = cluster_points(&pc, 12, 0)?;
    println!(
        "{} points at depth {} -> {} clusters",
        pc.len(),
        set.source_depth,
        set.clusters.len()
    );
    for (i, c) in set.clusters.iter().enumerate() {
        println!(
            "  #{i:<2} offset {:?} local depth {:>2} points {}",
            c.offset,
            c.local_depth,
            c.len()
        );
    }
    assert_eq!(merge_clusters(&set)?.points(), pc.points());
    Ok(())
}

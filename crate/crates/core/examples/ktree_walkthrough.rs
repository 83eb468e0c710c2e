//! Print the occupancy symbols of a tiny cluster level by level, then
//! rebuild the points from them.
//!
//! cargo run --example ktree_walkthrough

use kpcc::cluster::Cluster;
use kpcc::ktree::{build_sequence, default_schedule, reconstruct_points};
use kpcc::KMode;

fn main() -> kpcc::Result<()> {
    let cluster = Cluster::from_global(vec![[0, 0, 0], [1, 0, 0], [3, 3, 3], [2, 1, 0]])?;
    for mode in [KMode::Octree8, KMode::Mixed12] {
        let schedule = default_schedule(cluster.local_depth, mode);
        let seq = build_sequence(&cluster, &schedule)?;
        println!("{mode}: levels {:?}", schedule.levels());
        let mut start = 0;
        for (level, n) in seq.level_boundaries()?.into_iter().enumerate() {
            let row: Vec<String> = seq.symbols[start..start + n]
                .iter()
                .map(|s| format!("{s:0w$b}", w = schedule.k(level) as usize))
                .collect();
            println!("  level {level} (k={:>2}): {}", schedule.k(level), row.join(" "));
            start += n;
        }
        assert_eq!(reconstruct_points(&seq)?, cluster.local_points);
    }
    Ok(())
}

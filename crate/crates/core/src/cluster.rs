//! Deterministic k-means partitioning and min-corner offset normalization.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{depth_for, Point, PointCloud};

pub const DEFAULT_CLUSTERS: usize = 12;
pub const MAX_LLOYD_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub offset: Point,
    /// Sorted, deduplicated, with a zero minimum on every axis.
    pub local_points: Vec<Point>,
    pub local_depth: u8,
}

impl Cluster {
    /// Normalizes a nonempty set of global points by its min corner.
    pub fn from_global(mut points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("empty cluster".into()));
        }
        let mut offset = [u32::MAX; 3];
        for p in &points {
            for a in 0..3 {
                offset[a] = offset[a].min(p[a]);
            }
        }
        let mut max = 0;
        for p in points.iter_mut() {
            for a in 0..3 {
                p[a] -= offset[a];
                max = max.max(p[a]);
            }
        }
        points.sort_unstable();
        points.dedup();
        Ok(Cluster {
            offset,
            local_points: points,
            local_depth: depth_for(max),
        })
    }

    pub fn len(&self) -> usize {
        self.local_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_points.is_empty()
    }

    pub fn global_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.local_points
            .iter()
            .map(move |p| [p[0] + self.offset[0], p[1] + self.offset[1], p[2] + self.offset[2]])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub source_depth: u8,
}

impl ClusterSet {
    pub fn total_points(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    /// Offset lexicographic, then larger clusters first, then by content.
    pub fn sort_canonical(&mut self) {
        self.clusters.sort_by(|a, b| {
            a.offset
                .cmp(&b.offset)
                .then(b.len().cmp(&a.len()))
                .then_with(|| a.local_points.cmp(&b.local_points))
        });
    }
}

fn dist2(a: &Point, b: &[i64; 3]) -> i64 {
    let dx = a[0] as i64 - b[0];
    let dy = a[1] as i64 - b[1];
    let dz = a[2] as i64 - b[2];
    dx * dx + dy * dy + dz * dz
}

fn nearest(p: &Point, centroids: &[[i64; 3]]) -> u32 {
    let mut best = 0u32;
    let mut best_d = i64::MAX;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i as u32;
        }
    }
    best
}

/// Farthest-point seeding from the lexicographically smallest point.
/// Ties go to the earliest point in canonical order.
fn farthest_point_seeds(points: &[Point], k: usize) -> Vec<[i64; 3]> {
    let to_i = |p: &Point| [p[0] as i64, p[1] as i64, p[2] as i64];
    let mut seeds = vec![to_i(&points[0])];
    let mut min_d: Vec<i64> = points.par_iter().map(|p| dist2(p, &seeds[0])).collect();
    while seeds.len() < k {
        let (idx, _) = min_d
            .iter()
            .enumerate()
            .fold((0usize, -1i64), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let c = to_i(&points[idx]);
        seeds.push(c);
        min_d
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(m, p)| *m = (*m).min(dist2(p, &c)));
    }
    seeds
}

/// Rounded (half up) integer mean of each cluster's members. Empty clusters
/// keep their previous centroid.
fn update_centroids(points: &[Point], assignment: &[u32], centroids: &mut [[i64; 3]]) {
    let k = centroids.len();
    let mut sums = vec![[0i64; 3]; k];
    let mut counts = vec![0i64; k];
    for (p, &a) in points.iter().zip(assignment) {
        let a = a as usize;
        counts[a] += 1;
        for ax in 0..3 {
            sums[a][ax] += p[ax] as i64;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for ax in 0..3 {
                centroids[c][ax] = (2 * sums[c][ax] + counts[c]).div_euclid(2 * counts[c]);
            }
        }
    }
}

/// Partitions the cloud with deterministic integer k-means and normalizes
/// each cluster by its min corner.
///
/// `seed` is part of the call signature for reproducibility bookkeeping; the
/// algorithm itself has no random component.
pub fn cluster_points(pc: &PointCloud, num_clusters: usize, _seed: u64) -> Result<ClusterSet> {
    let points = pc.points();
    if num_clusters < 1 || num_clusters > points.len() {
        return Err(Error::param(format!(
            "cluster count {num_clusters} outside [1, {}]",
            points.len()
        )));
    }

    let assignment = if num_clusters == 1 {
        vec![0u32; points.len()]
    } else {
        let mut centroids = farthest_point_seeds(points, num_clusters);
        let mut assignment: Vec<u32> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        for _ in 1..MAX_LLOYD_ITERATIONS {
            update_centroids(points, &assignment, &mut centroids);
            let next: Vec<u32> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
            if next == assignment {
                break;
            }
            assignment = next;
        }
        assignment
    };

    let mut members: Vec<Vec<Point>> = vec![Vec::new(); num_clusters];
    for (p, &a) in points.iter().zip(&assignment) {
        members[a as usize].push(*p);
    }
    let clusters = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(Cluster::from_global)
        .collect::<Result<Vec<_>>>()?;
    let mut set = ClusterSet {
        clusters,
        source_depth: pc.bit_depth(),
    };
    set.sort_canonical();
    Ok(set)
}

/// Rebuilds the global cloud. Overlapping clusters signal a corrupted stream.
pub fn merge_clusters(cs: &ClusterSet) -> Result<PointCloud> {
    let total = cs.total_points();
    let mut seen: HashSet<Point> = HashSet::with_capacity(total);
    let mut out = Vec::with_capacity(total);
    for cluster in &cs.clusters {
        for p in cluster.global_points() {
            if !seen.insert(p) {
                return Err(Error::integrity(format!(
                    "point {p:?} appears in more than one cluster"
                )));
            }
            out.push(p);
        }
    }
    PointCloud::with_depth(out, cs.source_depth)
}

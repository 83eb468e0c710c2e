//! Deterministic synthetic voxel clouds, plus a deliberately naive reference
//! serializer used to cross-check the K-tree.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::ktree::SplitSchedule;
use crate::pointcloud::{Point, PointCloud, MAX_BIT_DEPTH};

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Every voxel with coordinate `level` on `axis`.
    Plane { axis: usize, level: u32 },
    /// One-voxel-thick shell around the grid center: `4|v - c|^2` lies in
    /// `[max(2r - 1, 0)^2, (2r + 1)^2)`.
    Sphere { radius: u32 },
    /// Filled box, corners inclusive.
    Box { min: Point, max: Point },
    /// Union of the surfaces of `count` random boxes.
    BoxUnion { count: usize },
    /// `count` uniform random voxels (duplicates collapse).
    Noise { count: usize },
    /// Surface of a union of ellipsoids shaped roughly like a standing person.
    Figure,
}

/// Shape families, for the CLI and for picking default parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Plane,
    Sphere,
    Box,
    BoxUnion,
    Noise,
    Figure,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Plane,
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::BoxUnion,
        ShapeKind::Noise,
        ShapeKind::Figure,
    ];

    /// A representative shape of this family at depth `d`.
    pub fn default_shape(self, d: u8) -> Shape {
        let side = 1u32 << d.clamp(1, MAX_BIT_DEPTH);
        match self {
            ShapeKind::Plane => Shape::Plane {
                axis: 2,
                level: side / 2,
            },
            ShapeKind::Sphere => Shape::Sphere { radius: side / 2 - 1 },
            ShapeKind::Box => Shape::Box {
                min: [side / 4; 3],
                max: [side - 1 - side / 4; 3],
            },
            ShapeKind::BoxUnion => Shape::BoxUnion { count: 6 },
            ShapeKind::Noise => Shape::Noise {
                count: (side as usize).pow(2).min(1 << 16),
            },
            ShapeKind::Figure => Shape::Figure,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Plane => "plane",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::BoxUnion => "boxes",
            ShapeKind::Noise => "noise",
            ShapeKind::Figure => "figure",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL.into_iter().find(|k| k.to_string() == s).ok_or_else(|| {
            Error::param(format!(
                "unknown shape {s:?} (plane, sphere, box, boxes, noise, figure)"
            ))
        })
    }
}

fn check_depth(d: u8) -> Result<()> {
    if !(1..=MAX_BIT_DEPTH).contains(&d) {
        return Err(Error::param(format!("depth {d} outside [1, {MAX_BIT_DEPTH}]")));
    }
    Ok(())
}

/// Generates `shape` on a `2^d` grid. The same arguments always give the
/// same cloud.
pub fn gen(shape: &Shape, d: u8, seed: u64) -> Result<PointCloud> {
    check_depth(d)?;
    let side = 1u64 << d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = match *shape {
        Shape::Plane { axis, level } => {
            if axis > 2 || level as u64 >= side {
                return Err(Error::param(format!(
                    "plane axis {axis} level {level} invalid at depth {d}"
                )));
            }
            let mut pts = Vec::with_capacity((side * side) as usize);
            for u in 0..side as u32 {
                for v in 0..side as u32 {
                    let mut p = [u, v, v];
                    p[axis] = level;
                    p[(axis + 1) % 3] = u;
                    p[(axis + 2) % 3] = v;
                    pts.push(p);
                }
            }
            pts
        }
        Shape::Sphere { radius } => sphere_shell(radius, d)?,
        Shape::Box { min, max } => {
            if (0..3).any(|a| min[a] > max[a] || max[a] as u64 >= side) {
                return Err(Error::param(format!("box {min:?}..={max:?} invalid at depth {d}")));
            }
            filled_box(min, max)
        }
        Shape::BoxUnion { count } => {
            let mut pts = Vec::new();
            for _ in 0..count.max(1) {
                let (min, max) = random_box(&mut rng, side);
                pts.extend(box_surface(min, max));
            }
            pts
        }
        Shape::Noise { count } => (0..count.max(1))
            .map(|_| std::array::from_fn(|_| rng.gen_range(0..side) as u32))
            .collect(),
        Shape::Figure => figure(d, &mut rng),
    };
    PointCloud::with_depth(points, d)
}

fn filled_box(min: Point, max: Point) -> Vec<Point> {
    let mut pts = Vec::new();
    for x in min[0]..=max[0] {
        for y in min[1]..=max[1] {
            for z in min[2]..=max[2] {
                pts.push([x, y, z]);
            }
        }
    }
    pts
}

fn box_surface(min: Point, max: Point) -> Vec<Point> {
    let mut pts = Vec::new();
    for x in min[0]..=max[0] {
        for y in min[1]..=max[1] {
            let edge = x == min[0] || x == max[0] || y == min[1] || y == max[1];
            if edge {
                pts.extend((min[2]..=max[2]).map(|z| [x, y, z]));
            } else {
                pts.push([x, y, min[2]]);
                pts.push([x, y, max[2]]);
            }
        }
    }
    pts
}

fn random_box(rng: &mut ChaCha8Rng, side: u64) -> (Point, Point) {
    let max_extent = (side / 3).max(1);
    let mut min = [0u32; 3];
    let mut max = [0u32; 3];
    for a in 0..3 {
        let len = rng.gen_range(1..=max_extent);
        let lo = rng.gen_range(0..=side - len);
        min[a] = lo as u32;
        max[a] = (lo + len - 1) as u32;
    }
    (min, max)
}

fn sphere_shell(radius: u32, d: u8) -> Result<Vec<Point>> {
    let c = 1i64 << (d - 1);
    let r = radius as i64;
    if c - r < 0 || c + r >= 1i64 << d {
        return Err(Error::param(format!("sphere radius {radius} does not fit depth {d}")));
    }
    let inner = (2 * r - 1).max(0).pow(2);
    let outer = (2 * r + 1).pow(2);
    let mut pts = Vec::new();
    for x in c - r..=c + r {
        for y in c - r..=c + r {
            let dxy = (x - c).pow(2) + (y - c).pow(2);
            if 4 * dxy >= outer {
                continue;
            }
            for z in c - r..=c + r {
                let q = 4 * (dxy + (z - c).pow(2));
                if q >= inner && q < outer {
                    pts.push([x as u32, y as u32, z as u32]);
                }
            }
        }
    }
    Ok(pts)
}

/// Inclusive integer z-intervals, sorted and disjoint.
type Spans = Vec<(i64, i64)>;

fn union_spans(mut s: Spans) -> Spans {
    s.sort_unstable();
    let mut out: Spans = Vec::with_capacity(s.len());
    for (a, b) in s {
        match out.last_mut() {
            Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn intersect_spans(a: &[(i64, i64)], b: &[(i64, i64)]) -> Spans {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo <= hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn figure(d: u8, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = (1i64 << d) as f64 - 1.0;
    // centre (x, y, z) and radii, in unit-cube coordinates
    let parts: [([f64; 3], [f64; 3]); 8] = [
        ([0.50, 0.50, 0.56], [0.15, 0.09, 0.19]),
        ([0.50, 0.50, 0.85], [0.07, 0.07, 0.09]),
        ([0.50, 0.50, 0.75], [0.03, 0.03, 0.05]),
        ([0.44, 0.50, 0.23], [0.055, 0.055, 0.21]),
        ([0.56, 0.50, 0.23], [0.055, 0.055, 0.21]),
        ([0.31, 0.50, 0.56], [0.035, 0.035, 0.17]),
        ([0.69, 0.50, 0.56], [0.035, 0.035, 0.17]),
        ([0.50, 0.50, 0.40], [0.16, 0.11, 0.08]),
    ];
    let parts: Vec<([f64; 3], [f64; 3])> = parts
        .iter()
        .map(|(c, r)| {
            let c: [f64; 3] = std::array::from_fn(|a| (c[a] + rng.gen_range(-0.01..0.01)) * n);
            let r: [f64; 3] = std::array::from_fn(|a| r[a] * rng.gen_range(0.95..1.05) * n);
            (c, r)
        })
        .collect();

    let side = 1usize << d;
    let column = |x: i64, y: i64| -> Spans {
        if x < 0 || y < 0 || x >= side as i64 || y >= side as i64 {
            return Vec::new();
        }
        let mut spans = Vec::new();
        for (c, r) in &parts {
            let q = ((x as f64 - c[0]) / r[0]).powi(2) + ((y as f64 - c[1]) / r[1]).powi(2);
            if q <= 1.0 {
                let h = r[2] * (1.0 - q).sqrt();
                let lo = ((c[2] - h).ceil() as i64).max(0);
                let hi = ((c[2] + h).floor() as i64).min(side as i64 - 1);
                if lo <= hi {
                    spans.push((lo, hi));
                }
            }
        }
        union_spans(spans)
    };

    let mut rows: Vec<Vec<Spans>> = Vec::with_capacity(side);
    for x in 0..side as i64 {
        rows.push((0..side as i64).map(|y| column(x, y)).collect());
    }
    let at = |x: i64, y: i64| -> &[(i64, i64)] {
        if x < 0 || y < 0 || x >= side as i64 || y >= side as i64 {
            &[]
        } else {
            &rows[x as usize][y as usize]
        }
    };

    // A solid voxel is on the surface unless all six neighbours are solid.
    let mut pts = Vec::new();
    for x in 0..side as i64 {
        for y in 0..side as i64 {
            let own = at(x, y);
            if own.is_empty() {
                continue;
            }
            let shrunk: Spans = own
                .iter()
                .filter(|s| s.1 - s.0 >= 2)
                .map(|&(a, b)| (a + 1, b - 1))
                .collect();
            let mut interior = shrunk;
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                interior = intersect_spans(&interior, at(x + dx, y + dy));
            }
            let mut k = 0;
            for &(a, b) in own {
                for z in a..=b {
                    while k < interior.len() && interior[k].1 < z {
                        k += 1;
                    }
                    let inside = k < interior.len() && interior[k].0 <= z;
                    if !inside {
                        pts.push([x as u32, y as u32, z as u32]);
                    }
                }
            }
        }
    }
    pts
}

/// A random shape from any family, with parameters drawn from `seed`.
pub fn random_shape(d: u8, seed: u64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_4150_4553);
    let side = 1u32 << d.clamp(1, MAX_BIT_DEPTH);
    match rng.gen_range(0..5) {
        0 => Shape::Plane {
            axis: rng.gen_range(0..3),
            level: rng.gen_range(0..side),
        },
        1 => Shape::Sphere {
            radius: rng.gen_range(0..side / 2),
        },
        2 => {
            let (min, max) = random_box(&mut rng, side as u64);
            Shape::Box { min, max }
        }
        3 => Shape::BoxUnion {
            count: rng.gen_range(1..6),
        },
        _ => Shape::Noise {
            count: rng.gen_range(1..=(side as usize).pow(2).min(4096)),
        },
    }
}

/// Planes, large spheres and box unions at depth `d`, standing in for
/// normalized scanned objects that fill their grid.
pub fn structured_corpus(d: u8) -> Result<Vec<PointCloud>> {
    check_depth(d)?;
    let side = 1u32 << d;
    let mut out = Vec::new();
    for (i, axis) in [0usize, 1, 2].into_iter().enumerate() {
        out.push(gen(
            &Shape::Plane {
                axis,
                level: side / 2 + i as u32 * (side / 8),
            },
            d,
            0,
        )?);
    }
    let half = side / 2;
    for radius in [half / 2, half / 2 + half / 4, half - 2, half - 1] {
        out.push(gen(&Shape::Sphere { radius }, d, 0)?);
    }
    for seed in 0..5u64 {
        out.push(gen(
            &Shape::BoxUnion {
                count: 3 + seed as usize,
            },
            d,
            seed,
        )?);
    }
    Ok(out)
}

/// Reference serializer: recursive subdivision collecting `(level, symbol)`
/// in depth-first order, then a stable sort by level. Depth-first order
/// visits each level's cells in the same order as breadth-first traversal,
/// so the sort yields the breadth-first sequence.
pub fn oracle_sequence(cluster: &Cluster, schedule: &SplitSchedule) -> Vec<u16> {
    let levels = schedule.levels();
    let mut extent = [1u64; 3];
    for s in levels {
        for a in 0..3 {
            extent[a] *= s[a] as u64;
        }
    }
    let pts: Vec<[u64; 3]> = cluster
        .local_points
        .iter()
        .map(|p| [p[0] as u64, p[1] as u64, p[2] as u64])
        .collect();
    let mut visited = Vec::new();
    visit(&pts, [0; 3], extent, 0, levels, &mut visited);
    visited.sort_by_key(|&(level, _)| level);
    visited.into_iter().map(|(_, s)| s).collect()
}

fn visit(
    pts: &[[u64; 3]],
    origin: [u64; 3],
    extent: [u64; 3],
    level: usize,
    levels: &[[u32; 3]],
    out: &mut Vec<(usize, u16)>,
) {
    if level == levels.len() || pts.is_empty() {
        return;
    }
    let s = levels[level];
    let child: [u64; 3] = std::array::from_fn(|a| extent[a] / s[a] as u64);
    let mut buckets: Vec<Vec<[u64; 3]>> = vec![Vec::new(); (s[0] * s[1] * s[2]) as usize];
    for p in pts {
        let i: [u64; 3] = std::array::from_fn(|a| (p[a] - origin[a]) / child[a]);
        let c = (i[0] * s[1] as u64 + i[1]) * s[2] as u64 + i[2];
        buckets[c as usize].push(*p);
    }
    let mut symbol = 0u16;
    for (c, b) in buckets.iter().enumerate() {
        if !b.is_empty() {
            symbol |= 1 << c;
        }
    }
    out.push((level, symbol));
    for ix in 0..s[0] as u64 {
        for iy in 0..s[1] as u64 {
            for iz in 0..s[2] as u64 {
                let c = (ix * s[1] as u64 + iy) * s[2] as u64 + iz;
                let o = [
                    origin[0] + ix * child[0],
                    origin[1] + iy * child[1],
                    origin[2] + iz * child[2],
                ];
                visit(&buckets[c as usize], o, child, level + 1, levels, out);
            }
        }
    }
}

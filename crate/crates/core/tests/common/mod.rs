#![allow(dead_code)]

use kpcc::cluster::Cluster;
use kpcc::pointcloud::{Point, PointCloud};
use kpcc::synthgen::{gen, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Moderately sized cloud at depth `d`, cycling through shape families.
pub fn matrix_cloud(d: u8, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let side = 1u32 << d;
    let shape = match seed % 4 {
        0 => Shape::Sphere {
            radius: r.gen_range(0..(side / 2).min(40)),
        },
        1 => Shape::BoxUnion {
            count: r.gen_range(1..4),
        },
        2 => Shape::Noise {
            count: r.gen_range(1..=4000),
        },
        _ if d <= 7 => Shape::Plane {
            axis: r.gen_range(0..3),
            level: r.gen_range(0..side),
        },
        _ => {
            let lo: Point = std::array::from_fn(|_| r.gen_range(0..side - 40));
            let hi: Point = std::array::from_fn(|a| lo[a] + r.gen_range(0..40));
            let mut pts = gen(
                &Shape::Box {
                    min: lo,
                    max: [hi[0], hi[1], lo[2]],
                },
                d,
                0,
            )
            .unwrap()
            .into_points();
            pts.extend((0..500).map(|_| std::array::from_fn(|_| r.gen_range(0..side))));
            return PointCloud::with_depth(pts, d).unwrap();
        }
    };
    let pc = gen(&shape, d, seed).unwrap();
    if pc.len() <= 120_000 {
        pc
    } else {
        gen(&Shape::Noise { count: 20_000 }, d, seed).unwrap()
    }
}

/// Random normalized cluster inside a `side^3` grid.
pub fn random_cluster(r: &mut ChaCha8Rng, side: u32) -> Cluster {
    let n = r.gen_range(1..=(side * side * side).min(200) as usize);
    let density: f64 = r.gen_range(0.0..1.0);
    let pts: Vec<Point> = if density < 0.3 {
        (0..n).map(|_| std::array::from_fn(|_| r.gen_range(0..side))).collect()
    } else {
        // clumped: points near a few centers
        let centers: Vec<Point> = (0..r.gen_range(1..4))
            .map(|_| std::array::from_fn(|_| r.gen_range(0..side)))
            .collect();
        (0..n)
            .map(|_| {
                let c = centers[r.gen_range(0..centers.len())];
                std::array::from_fn(|a| (c[a] as i64 + r.gen_range(-2i64..=2)).clamp(0, side as i64 - 1) as u32)
            })
            .collect()
    };
    Cluster::from_global(pts).unwrap()
}

pub fn same_set(a: &PointCloud, b: &PointCloud) -> bool {
    a.points() == b.points()
}

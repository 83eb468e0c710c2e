mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::Rng;

use kpcc::pointcloud::{load_ply, parse_ply, ply_bytes, save_ply, voxelize, PointCloud};
use kpcc::Error;

use common::rng;

fn ascii_ply(verts: &[[f64; 3]]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\ncomment random\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        verts.len()
    );
    for v in verts {
        s.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    s
}

#[test]
fn minimal_cover_and_dedup() {
    let pc = parse_ply(ascii_ply(&[[0.0; 3], [1.0, 2.0, 3.0]]).as_bytes()).unwrap();
    assert_eq!(pc.len(), 2);
    assert_eq!(pc.bit_depth(), 2);
    let pc = parse_ply(ascii_ply(&[[5.0; 3], [5.0; 3]]).as_bytes()).unwrap();
    assert_eq!(pc.points(), &[[5, 5, 5]]);
}

#[test]
fn random_vertices_match_hash_set_oracle() {
    let mut r = rng(1);
    let verts: Vec<[f64; 3]> = (0..1000)
        .map(|_| std::array::from_fn(|_| (r.gen_range(0.0..1023.0f64) * 4.0).round() / 4.0))
        .collect();
    let text = ascii_ply(&verts);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.ply");
    std::fs::write(&path, &text).unwrap();
    let pc = load_ply(&path).unwrap();

    // Re-read the raw body independently and round half up.
    let body = text.split("end_header\n").nth(1).unwrap();
    let oracle: HashSet<[u32; 3]> = body
        .lines()
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            [0, 1, 2].map(|a| (v[a] + 0.5).floor() as u32)
        })
        .collect();
    assert_eq!(pc.len(), oracle.len());
    assert!(pc.points().iter().all(|p| oracle.contains(p)));
}

#[test]
fn save_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let one = PointCloud::from_points([[3, 1, 4]]).unwrap();
    save_ply(&one, dir.path().join("a.ply")).unwrap();
    assert_eq!(load_ply(dir.path().join("a.ply")).unwrap(), one);

    let mut r = rng(2);
    let big = PointCloud::with_depth((0..10_000).map(|_| std::array::from_fn(|_| r.gen_range(0..1024))), 10).unwrap();
    save_ply(&big, dir.path().join("b.ply")).unwrap();
    save_ply(&big, dir.path().join("c.ply")).unwrap();
    assert_eq!(load_ply(dir.path().join("b.ply")).unwrap(), big);
    assert_eq!(
        std::fs::read(dir.path().join("b.ply")).unwrap(),
        std::fs::read(dir.path().join("c.ply")).unwrap()
    );
}

#[test]
fn negative_coordinates_rejected() {
    let e = parse_ply(ascii_ply(&[[1.0, -0.6, 0.0]]).as_bytes()).unwrap_err();
    assert!(matches!(e, Error::Domain(_)));
    // -0.5 rounds up to zero
    assert_eq!(
        parse_ply(ascii_ply(&[[0.0, -0.5, 0.0]]).as_bytes()).unwrap().points(),
        &[[0, 0, 0]]
    );
}

#[test]
fn voxelize_examples() {
    let pc = voxelize(&[[0.0; 3], [1.0; 3]], 1).unwrap();
    assert_eq!(pc.points(), &[[0, 0, 0], [1, 1, 1]]);
    let pc = voxelize(&[[0.0; 3], [2.0, 0.0, 0.0]], 2).unwrap();
    assert_eq!(pc.points(), &[[0, 0, 0], [3, 0, 0]]);
}

#[test]
fn voxelize_sphere_matches_reimplementation() {
    let mut r = rng(3);
    let raw: Vec<[f64; 3]> = (0..10_000)
        .map(|_| {
            let v: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0f64));
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
            v.map(|x| x / n)
        })
        .collect();
    let pc = voxelize(&raw, 8).unwrap();

    let mut lo = [f64::MAX; 3];
    let mut hi = [f64::MIN; 3];
    for p in &raw {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let ext = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    let oracle: HashSet<[u32; 3]> = raw
        .iter()
        .map(|p| [0, 1, 2].map(|a| ((p[a] - lo[a]) * 255.0 / ext + 0.5).floor().min(255.0) as u32))
        .collect();
    assert_eq!(pc.len(), oracle.len());
    assert!(pc
        .points()
        .iter()
        .all(|p| oracle.contains(p) && p.iter().all(|&v| v < 256)));
    assert_eq!(pc.bit_depth(), 8);
}

proptest! {
    #[test]
    fn binary_round_trip(pts in prop::collection::vec(prop::array::uniform3(0u32..5000), 1..200), extra in 0u8..3) {
        let pc = PointCloud::from_points(pts.clone()).unwrap();
        let pc = PointCloud::with_depth(pc.into_points(), 13 + extra).unwrap();
        let back = parse_ply(&ply_bytes(&pc)).unwrap();
        prop_assert_eq!(&back, &pc);
        let distinct: HashSet<_> = pts.into_iter().collect();
        prop_assert_eq!(back.len(), distinct.len());
    }

    #[test]
    fn voxelize_stays_in_depth(raw in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..100), d in 1u8..=16) {
        let pc = voxelize(&raw, d).unwrap();
        prop_assert_eq!(pc.bit_depth(), d);
        prop_assert!(pc.points().iter().flatten().all(|&v| (v as u64) < 1 << d));
    }
}

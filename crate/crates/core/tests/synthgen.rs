mod common;

use kpcc::ktree::{build_sequence, default_schedule, KMode};
use kpcc::pipeline::{encode_cloud, EncodeConfig};
use kpcc::probmodel::ModelSpec;
use kpcc::synthgen::{gen, oracle_sequence, Shape};

use common::{random_cluster, rng};

#[test]
fn oracle_equals_build_sequence_on_random_clusters() {
    let mut r = rng(21);
    for i in 0..1000 {
        let c = random_cluster(&mut r, 16);
        let mode = if i % 2 == 0 { KMode::Octree8 } else { KMode::Mixed12 };
        let s = default_schedule(c.local_depth, mode);
        assert_eq!(
            oracle_sequence(&c, &s),
            build_sequence(&c, &s).unwrap().symbols,
            "cluster {i}"
        );
    }
}

#[test]
fn plane_is_far_below_uniform() {
    let pc = gen(&Shape::Plane { axis: 2, level: 77 }, 8, 0).unwrap();
    assert_eq!(pc.len(), 65536);
    let bpp = |model| {
        let cfg = EncodeConfig {
            model,
            num_clusters: 1,
            ..EncodeConfig::default()
        };
        encode_cloud(&pc, &cfg).unwrap().report.bpp
    };
    let (u, a) = (bpp(ModelSpec::Uniform), bpp(ModelSpec::adaptive()));
    assert!(a < 0.25 * u, "adaptive {a} vs uniform {u}");
}

mod common;

use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;

use kpcc::container::{read_container, write_container};
use kpcc::pipeline::{bench, decode_bytes, decode_file, encode_cloud, encode_file, DecodeConfig, EncodeConfig};
use kpcc::pointcloud::{load_ply, save_ply};
use kpcc::probmodel::transformer::TransformerConfig;
use kpcc::probmodel::{ModelSpec, TransformerWeights};
use kpcc::synthgen::{gen, Shape};
use kpcc::{Error, KMode};

use common::{matrix_cloud, rng};

fn kpcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpcc")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn chunk_order_on_disk_does_not_matter() {
    let mut r = rng(61);
    let pc = gen(&Shape::Sphere { radius: 30 }, 8, 0).unwrap();
    let cfg = EncodeConfig {
        max_chunk_len: 32,
        num_clusters: 4,
        threads: 2,
        ..EncodeConfig::default()
    };
    let bytes = encode_cloud(&pc, &cfg).unwrap().bytes;
    let mut file = read_container(&bytes).unwrap();
    assert!(file.clusters.iter().any(|c| c.chunks.len() > 3));
    for c in &mut file.clusters {
        for i in (1..c.chunks.len()).rev() {
            c.chunks.swap(i, r.gen_range(0..=i));
        }
    }
    let shuffled = write_container(&file).unwrap();
    assert_ne!(shuffled, bytes);
    let (back, _) = decode_bytes(&shuffled, &DecodeConfig::default()).unwrap();
    assert_eq!(back.points(), pc.points());
}

#[test]
fn output_is_independent_of_thread_count() {
    for seed in 0..4 {
        let pc = matrix_cloud(9, seed);
        let enc = |threads| {
            let cfg = EncodeConfig {
                threads,
                max_chunk_len: 128,
                ..EncodeConfig::default()
            };
            encode_cloud(&pc, &cfg).unwrap().bytes
        };
        let one = enc(1);
        for t in [2, 3, 8] {
            assert_eq!(enc(t), one, "seed {seed}, {t} threads");
        }
        for t in [1, 4] {
            let (back, _) = decode_bytes(
                &one,
                &DecodeConfig {
                    threads: t,
                    ..DecodeConfig::default()
                },
            )
            .unwrap();
            assert_eq!(back.points(), pc.points());
        }
    }
}

#[test]
fn file_round_trip_with_verify() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.ply");
    let kpc = dir.path().join("out.kpc");
    let rec = dir.path().join("rec.ply");
    let pc = gen(&Shape::Figure, 9, 3).unwrap();
    save_ply(&pc, &src).unwrap();
    for k_mode in [KMode::Octree8, KMode::Mixed12] {
        let cfg = EncodeConfig {
            k_mode,
            verify: true,
            ..EncodeConfig::default()
        };
        let report = encode_file(&src, &kpc, &cfg).unwrap();
        assert_eq!(report.bytes as u64, std::fs::metadata(&kpc).unwrap().len());
        assert_eq!(report.points, pc.len());
        decode_file(&kpc, &rec, &DecodeConfig::default()).unwrap();
        assert_eq!(load_ply(&rec).unwrap().points(), pc.points());
    }
}

#[test]
fn failed_encode_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.kpc");
    let e = encode_file(&dir.path().join("missing.ply"), &out, &EncodeConfig::default()).unwrap_err();
    assert!(!matches!(e, Error::Usage(_)));
    assert!(!out.exists());
}

#[test]
fn transformer_files_need_their_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.kptw");
    let cfg = TransformerConfig {
        vocab_size: 258,
        dim: 16,
        layers: 1,
        heads: 2,
        max_ctx: 80,
        adapter_rank: 2,
        adapter_alpha: 4.0,
    };
    TransformerWeights::random(cfg, 5).save(&weights).unwrap();
    let spec = ModelSpec::Transformer {
        weights: weights.clone(),
    };
    let pc = gen(&Shape::Sphere { radius: 6 }, 5, 0).unwrap();
    let enc = EncodeConfig {
        model: spec.clone(),
        max_chunk_len: 64,
        ..EncodeConfig::default()
    };
    let bytes = encode_cloud(&pc, &enc).unwrap().bytes;
    let e = decode_bytes(&bytes, &DecodeConfig::default()).unwrap_err();
    assert!(matches!(e.root(), Error::Usage(_)), "{e}");
    let other = dir.path().join("other.kptw");
    TransformerWeights::random(cfg, 6).save(&other).unwrap();
    let e = decode_bytes(
        &bytes,
        &DecodeConfig {
            model: Some(ModelSpec::Transformer { weights: other }),
            ..DecodeConfig::default()
        },
    )
    .unwrap_err();
    assert!(matches!(e.root(), Error::Load(_)), "{e}");
    let (back, _) = decode_bytes(
        &bytes,
        &DecodeConfig {
            model: Some(spec),
            ..DecodeConfig::default()
        },
    )
    .unwrap();
    assert_eq!(back.points(), pc.points());
}

#[test]
fn bench_table_columns_and_gains() {
    let dir = tempfile::tempdir().unwrap();
    let inputs: Vec<_> = [Shape::Sphere { radius: 20 }, Shape::Plane { axis: 1, level: 9 }]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.path().join(format!("{i}.ply"));
            save_ply(&gen(s, 7, 0).unwrap(), &path).unwrap();
            path
        })
        .collect();
    let models = [ModelSpec::Uniform, ModelSpec::adaptive()];
    let t = bench(&inputs, &models, &EncodeConfig::default()).unwrap();
    assert_eq!(t.bpp.len(), 2);
    for (row, g) in t.bpp.iter().zip(t.gains()) {
        assert_eq!(g[0], 0.0);
        assert!(row[1] < row[0] && g[1] < 0.0);
    }
    let csv = t.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("input,uniform_bpp,uniform_gain_pct,adaptive"));
    assert!(csv.lines().last().unwrap().starts_with("average,"));
}

#[test]
fn cli_gen_encode_info_decode() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("s.ply");
    let kpc = dir.path().join("s.kpc");
    let rec = dir.path().join("rec.ply");
    ok(&kpcc(&[
        "gen",
        "--shape",
        "sphere",
        "--depth",
        "8",
        "--seed",
        "1",
        "-o",
        p(&ply),
    ]));
    let said = ok(&kpcc(&[
        "encode",
        "-i",
        p(&ply),
        "-o",
        p(&kpc),
        "--clusters",
        "12",
        "--k-mode",
        "octree8",
        "--model",
        "adaptive",
        "--chunk",
        "512",
        "--seed",
        "7",
        "--threads",
        "2",
        "--verify",
    ]));
    assert!(said.contains("bpp"), "{said}");
    let info = ok(&kpcc(&["info", p(&kpc)]));
    assert!(info.contains("adaptive") && info.contains("octree8"), "{info}");
    ok(&kpcc(&["decode", "-i", p(&kpc), "-o", p(&rec)]));
    assert_eq!(load_ply(&rec).unwrap().points(), load_ply(&ply).unwrap().points());
}

#[test]
fn cli_bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ply");
    let b = dir.path().join("b.ply");
    let csv = dir.path().join("t.csv");
    ok(&kpcc(&[
        "gen",
        "--shape",
        "boxes",
        "--depth",
        "7",
        "--seed",
        "2",
        "-o",
        p(&a),
    ]));
    ok(&kpcc(&["gen", "--shape", "plane", "--depth", "7", "-o", p(&b)]));
    ok(&kpcc(&[
        "bench",
        "--inputs",
        p(&a),
        p(&b),
        "--models",
        "uniform",
        "adaptive",
        "--csv",
        p(&csv),
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
}

#[test]
fn cli_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = kpcc(&[
        "gen",
        "--shape",
        "sphere",
        "--depth",
        "0",
        "-o",
        p(&dir.path().join("x.ply")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = kpcc(&["encode", "-i", "nope.ply", "-o", p(&dir.path().join("y.kpc"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("y.kpc").exists());
}

#[test]
fn cli_bridge_model_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("s.ply");
    let kpc = dir.path().join("s.kpc");
    let rec = dir.path().join("rec.ply");
    ok(&kpcc(&["gen", "--shape", "sphere", "--depth", "6", "-o", p(&ply)]));
    let bridge = format!("{} mock-bridge", env!("CARGO_BIN_EXE_kpcc"));
    let run = |args: &[&str], cmd: &str| {
        Command::new(env!("CARGO_BIN_EXE_kpcc"))
            .args(args)
            .env("KPCC_BRIDGE_CMD", cmd)
            .output()
            .unwrap()
    };
    ok(&run(
        &[
            "encode",
            "-i",
            p(&ply),
            "-o",
            p(&kpc),
            "--model",
            "bridge",
            "--clusters",
            "2",
        ],
        &bridge,
    ));
    ok(&run(&["decode", "-i", p(&kpc), "-o", p(&rec)], &bridge));
    assert_eq!(load_ply(&rec).unwrap().points(), load_ply(&ply).unwrap().points());

    let dead = dir.path().join("dead.kpc");
    let out = run(
        &["encode", "-i", p(&ply), "-o", p(&dead), "--model", "bridge"],
        &format!("{bridge} --die-after 5"),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!dead.exists());
}

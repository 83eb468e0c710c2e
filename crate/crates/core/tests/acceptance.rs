//! Release gate: one PASS/FAIL line per acceptance criterion.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use kpcc::ktree::{build_sequence, default_schedule, reconstruct_points, KMode, OccupancySequence};
use kpcc::pipeline::{decode_bytes, encode_cloud, encode_file, gain_percent, BenchTable, DecodeConfig, EncodeConfig};
use kpcc::pointcloud::save_ply;
use kpcc::probmodel::{BridgeSession, ModelSession, ModelSpec, QuantizedCdf, StaticSession};
use kpcc::rangecoder::{decode_tokens, encode_tokens};
use kpcc::synthgen::{gen, oracle_sequence, structured_corpus, Shape};

use common::{matrix_cloud, random_cluster, rng};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lossless_matrix() -> Outcome {
    let depths = [4u8, 6, 8, 10];
    let clusters = [1usize, 2, 12];
    let modes = [KMode::Octree8, KMode::Mixed12];
    let models = [ModelSpec::Uniform, ModelSpec::adaptive()];
    let mut points = 0;
    for i in 0..100usize {
        let d = depths[i % 4];
        let cfg = EncodeConfig {
            num_clusters: clusters[(i / 4) % 3],
            k_mode: modes[(i / 12) % 2],
            model: models[(i / 24) % 2].clone(),
            ..EncodeConfig::default()
        };
        let pc = matrix_cloud(d, i as u64);
        points += pc.len();
        let enc = encode_cloud(&pc, &cfg).map_err(|e| format!("cloud {i}: {e}"))?;
        let (back, _) = decode_bytes(&enc.bytes, &DecodeConfig::default()).map_err(|e| format!("cloud {i}: {e}"))?;
        check(
            back.points() == pc.points(),
            format!("cloud {i} (d={d}, {cfg:?}) not recovered"),
        )?;
    }
    Ok(format!("100 clouds, {points} points, 48 configurations"))
}

fn entropy_bound() -> Outcome {
    const N: usize = 100_000;
    // p_i = c_i / N over 255 symbols, skewed, every c_i >= 1
    let w: Vec<f64> = (0..255).map(|i| (-(i as f64) / 9.0).exp()).collect();
    let scale = (N - 255) as f64 / w.iter().sum::<f64>();
    let mut c: Vec<u64> = w.iter().map(|x| 1 + (x * scale) as u64).collect();
    let total: u64 = c.iter().sum();
    c[0] += N as u64 - total;
    let p: Vec<f64> = c.iter().map(|&x| x as f64 / N as f64).collect();
    let h: f64 = -p.iter().map(|&q| q * q.log2()).sum::<f64>();

    // The sample holds each symbol exactly c_i times in random order, so its
    // empirical distribution is p itself.
    let mut sample: Vec<u32> = c
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| std::iter::repeat_n(s as u32, n as usize))
        .collect();
    sample.shuffle(&mut rng(7));

    let mut enc = StaticSession::new(QuantizedCdf::from_probs(&p));
    let payload = encode_tokens(&sample, &mut enc).map_err(|e| e.to_string())?;
    let bits = payload.bytes.len() as f64 * 8.0;
    let lo = h * N as f64;
    let hi = 1.01 * h * N as f64 + 64.0;
    let back = decode_tokens(&payload, &mut enc).map_err(|e| e.to_string())?;
    check(back == sample, "decoded stream differs")?;
    check(
        (lo..=hi).contains(&bits),
        format!("{bits} bits outside [{lo:.1}, {hi:.1}] (H = {h:.5})"),
    )?;
    Ok(format!(
        "H = {h:.5} bits, payload {bits} bits, window [{lo:.1}, {hi:.1}]"
    ))
}

fn ktree_oracle() -> Outcome {
    let mut r = rng(11);
    for i in 0..1000 {
        let c = random_cluster(&mut r, 16);
        let mode = if i % 2 == 0 { KMode::Octree8 } else { KMode::Mixed12 };
        let sched = default_schedule(c.local_depth, mode);
        let seq = build_sequence(&c, &sched).map_err(|e| e.to_string())?;
        check(
            seq.symbols == oracle_sequence(&c, &sched),
            format!("cluster {i}: sequence differs from the oracle"),
        )?;
        let pts = reconstruct_points(&seq).map_err(|e| e.to_string())?;
        check(pts == c.local_points, format!("cluster {i}: reconstruction differs"))?;
    }
    Ok("1000 clusters, both k-modes".into())
}

/// Independent cascade check: level l must hold exactly as many symbols as
/// level l-1 has set bits, with every symbol in [1, 2^K).
fn cascade_valid(symbols: &[u16], ks: &[u32]) -> bool {
    let mut pos = 0usize;
    let mut want = 1usize;
    for &k in ks {
        if pos + want > symbols.len() {
            return false;
        }
        let level = &symbols[pos..pos + want];
        if level.iter().any(|&s| s == 0 || (s as u32) >= 1 << k) {
            return false;
        }
        pos += want;
        want = level.iter().map(|s| s.count_ones() as usize).sum();
    }
    pos == symbols.len()
}

/// Occupied cell count per level, straight from coordinates.
fn level_counts(points: &[[u32; 3]], levels: &[[u32; 3]]) -> Vec<usize> {
    let mut sizes = vec![[1u64; 3]; levels.len() + 1];
    for l in (0..levels.len()).rev() {
        for a in 0..3 {
            sizes[l][a] = sizes[l + 1][a] * levels[l][a] as u64;
        }
    }
    (0..=levels.len())
        .map(|l| {
            let mut cells: Vec<[u64; 3]> = points
                .iter()
                .map(|p| std::array::from_fn(|a| p[a] as u64 / sizes[l][a]))
                .collect();
            cells.sort_unstable();
            cells.dedup();
            cells.len()
        })
        .collect()
}

fn decodability_fuzz() -> Outcome {
    let mut r = rng(23);
    let mut valid = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let c = random_cluster(&mut r, 16);
        let mode = if i % 3 == 0 { KMode::Mixed12 } else { KMode::Octree8 };
        let sched = default_schedule(c.local_depth, mode);
        let seq = build_sequence(&c, &sched).map_err(|e| e.to_string())?;
        let counts = level_counts(&c.local_points, sched.levels());
        let mut pos = 0;
        for l in 0..sched.depth() {
            let level = &seq.symbols[pos..pos + counts[l]];
            let pop: usize = level.iter().map(|s| s.count_ones() as usize).sum();
            check(
                pop == counts[l + 1],
                format!("sequence {i} level {l}: popcount {pop} != {}", counts[l + 1]),
            )?;
            pos += counts[l];
        }
        check(pos == seq.symbols.len(), format!("sequence {i}: length mismatch"))?;
        valid.push(seq);
    }

    let mut rejected = 0;
    let mut still_valid = 0;
    while rejected < 10_000 {
        let base = &valid[r.gen_range(0..valid.len())];
        let ks: Vec<u32> = (0..base.schedule.depth()).map(|l| base.schedule.k(l)).collect();
        let mut s = base.symbols.clone();
        let at = r.gen_range(0..s.len());
        match r.gen_range(0..6) {
            0 => s[at] ^= 1 << r.gen_range(0..16),
            1 => s[at] = r.gen(),
            2 => {
                s.remove(at);
            }
            3 => s.insert(at, r.gen_range(1..256)),
            4 => s.truncate(at),
            _ => s.push(r.gen_range(0..4096)),
        }
        if cascade_valid(&s, &ks) {
            still_valid += 1;
            continue;
        }
        let mutated = OccupancySequence {
            symbols: s,
            schedule: base.schedule.clone(),
        };
        match reconstruct_points(&mutated) {
            Err(e) if e.is_integrity() => rejected += 1,
            Err(e) => return Err(format!("mutation rejected with a non-integrity error: {e}")),
            Ok(_) => return Err("invalid mutation decoded to a point set".into()),
        }
        check(
            mutated.level_boundaries().is_err(),
            "cascade walk accepted an invalid sequence",
        )?;
    }
    Ok(format!(
        "10000 valid sequences hold the cascade; 10000 invalid mutations rejected ({still_valid} valid mutations skipped)"
    ))
}

fn context_benefit() -> Outcome {
    let corpus = structured_corpus(8).map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for pc in &corpus {
        let bpp = |model: ModelSpec| {
            encode_cloud(
                pc,
                &EncodeConfig {
                    model,
                    ..EncodeConfig::default()
                },
            )
            .map(|e| e.report.bpp)
        };
        let u = bpp(ModelSpec::Uniform).map_err(|e| e.to_string())?;
        let a = bpp(ModelSpec::adaptive()).map_err(|e| e.to_string())?;
        ratios.push(a / u);
    }
    let strong = ratios.iter().filter(|&&x| x <= 0.9).count();
    let ordered = ratios.iter().all(|&x| x <= 1.0);
    let listed = ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    check(ordered, format!("adaptive worse than uniform somewhere: {listed}"))?;
    check(
        strong * 10 >= ratios.len() * 9,
        format!("{strong}/{} inputs at ratio <= 0.9: {listed}", ratios.len()),
    )?;
    Ok(format!(
        "{strong}/{} inputs at ratio <= 0.9; ratios {listed}",
        ratios.len()
    ))
}

fn determinism() -> Outcome {
    for i in 0..20u64 {
        let d = [6u8, 8][i as usize % 2];
        let pc = matrix_cloud(d, 1000 + i);
        let cfg = |threads| EncodeConfig {
            threads,
            k_mode: if i % 4 < 2 { KMode::Octree8 } else { KMode::Mixed12 },
            max_chunk_len: 64,
            ..EncodeConfig::default()
        };
        let a = encode_cloud(&pc, &cfg(1)).map_err(|e| e.to_string())?.bytes;
        let b = encode_cloud(&pc, &cfg(8)).map_err(|e| e.to_string())?.bytes;
        check(a == b, format!("input {i}: 1-thread and 8-thread files differ"))?;
    }
    Ok("20 inputs byte-identical at 1 and 8 threads".into())
}

fn mock_command(extra: &str) -> String {
    format!("{} mock-bridge --vocab 258 {extra}", env!("CARGO_BIN_EXE_kpcc"))
}

fn bridge_conformance() -> Outcome {
    let timeout = Duration::from_secs(30);
    let mut r = rng(5);
    let mut enc = BridgeSession::spawn(&mock_command(""), 258, timeout).map_err(|e| e.to_string())?;
    let mut dec = BridgeSession::spawn(&mock_command(""), 258, timeout).map_err(|e| e.to_string())?;
    for round in 0..3 {
        let mut tokens: Vec<u32> = (0..999).map(|_| r.gen_range(3..258)).collect();
        tokens.push(1);
        enc.reset().and_then(|_| enc.push_token(0)).map_err(|e| e.to_string())?;
        let payload = encode_tokens(&tokens, &mut enc).map_err(|e| e.to_string())?;
        dec.reset().and_then(|_| dec.push_token(0)).map_err(|e| e.to_string())?;
        let back = decode_tokens(&payload, &mut dec).map_err(|e| e.to_string())?;
        check(back == tokens, format!("round {round}: 1000-token chunk not recovered"))?;
    }

    let pc = gen(&Shape::Sphere { radius: 14 }, 5, 0).map_err(|e| e.to_string())?;
    let cfg = EncodeConfig {
        model: ModelSpec::Bridge {
            command: mock_command(""),
            timeout,
        },
        num_clusters: 2,
        max_chunk_len: 998,
        threads: 2,
        ..EncodeConfig::default()
    };
    let bytes = encode_cloud(&pc, &cfg).map_err(|e| e.to_string())?.bytes;
    let d = DecodeConfig {
        model: Some(cfg.model.clone()),
        ..DecodeConfig::default()
    };
    let (back, _) = decode_bytes(&bytes, &d).map_err(|e| e.to_string())?;
    check(back == pc, "bridge-coded cloud not recovered")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("in.ply");
    let output = dir.path().join("out.kpc");
    save_ply(&pc, &input).map_err(|e| e.to_string())?;
    let dying = EncodeConfig {
        model: ModelSpec::Bridge {
            command: mock_command("--die-after 400"),
            timeout,
        },
        ..cfg
    };
    match encode_file(&input, &output, &dying) {
        Err(e) if e.is_transport() => {}
        Err(e) => return Err(format!("killed peer gave a non-transport error: {e}")),
        Ok(_) => return Err("encode succeeded although the peer died".into()),
    }
    check(!Path::new(&output).exists(), "a file was written after the peer died")?;
    Ok("3 x 1000-token chunks and a full cloud round trip; killed peer -> transport error, no file".into())
}

fn gain_arithmetic() -> Outcome {
    // name, G-PCC bpp, our bpp, printed gain
    let rows = [
        ("Longdress_vox10_1300", 1.015, 0.631, -37.882),
        ("Redandblack_vox10_1550", 1.100, 0.703, -36.100),
        ("Soldier_vox10_0690", 1.013, 0.634, -38.456),
        ("Loot_vox10_1200", 0.970, 0.597, -38.454),
        ("Basketball_player_vox11_0200", 0.898, 0.490, -45.479),
        ("Dancer_vox11_0001", 0.880, 0.485, -44.909),
    ];
    let table = BenchTable::new(
        vec!["gpcc".into(), "ours".into()],
        rows.iter().map(|r| r.0.to_string()).collect(),
        rows.iter().map(|r| vec![r.1, r.2]).collect(),
    )
    .map_err(|e| e.to_string())?;
    let gains = table.gains();
    let mut misses = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let g = gains[i][1];
        debug_assert_eq!(g, gain_percent(r.2, r.1));
        if (g - r.3).abs() > 0.1 {
            misses.push(format!("{} computes {g:.3}% vs printed {:.3}%", r.0, r.3));
        }
    }
    let avg = table.average_gains()[1];
    if (avg - -40.213).abs() > 0.1 {
        misses.push(format!("per-row average {avg:.3}% vs printed -40.213%"));
    }
    if misses.is_empty() {
        Ok(format!("all rows within 0.1 pp; average {avg:.3}%"))
    } else {
        Err(misses.join("; "))
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("losslessness matrix", lossless_matrix),
        ("range-coder entropy bound", entropy_bound),
        ("k-tree oracle equivalence", ktree_oracle),
        ("decodability invariant fuzz", decodability_fuzz),
        ("context-model benefit", context_benefit),
        ("determinism under parallelism", determinism),
        ("bridge conformance", bridge_conformance),
        ("gain arithmetic reproduction", gain_arithmetic),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

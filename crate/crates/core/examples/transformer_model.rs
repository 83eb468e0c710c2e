//! Save a randomly initialized transformer, then compress and restore a cloud
//! with it. Trained weights use the same file format.
//!
//! cargo run --release --example transformer_model

use kpcc::pipeline::{decode_bytes, encode_cloud, DecodeConfig, EncodeConfig};
use kpcc::probmodel::transformer::TransformerConfig;
use kpcc::probmodel::{ModelSpec, TransformerWeights};
use kpcc::synthgen::{gen, Shape};

fn main() -> kpcc::Result<()> {
    let config = TransformerConfig {
        vocab_size: 258,
        dim: 32,
        layers: 2,
        heads: 4,
        max_ctx: 130,
        adapter_rank: 4,
        adapter_alpha: 8.0,
    };
    let path = std::env::temp_dir().join(format!("kpcc-demo-{}.kptw", std::process::id()));
    TransformerWeights::random(config, 0).save(&path)?;

    let model = ModelSpec::Transformer { weights: path.clone() };
    let pc = gen(&Shape::Sphere { radius: 10 }, 6, 0)?;
    let cfg = EncodeConfig {
        model: model.clone(),
        max_chunk_len: 128,
        ..EncodeConfig::default()
    };
    let enc = encode_cloud(&pc, &cfg)?;
    println!("untrained transformer: {} points, {:.3} bpp", pc.len(), enc.report.bpp);

    let (back, _) = decode_bytes(
        &enc.bytes,
        &DecodeConfig {
            model: Some(model),
            ..DecodeConfig::default()
        },
    )?;
    assert_eq!(back.points(), pc.points());
    std::fs::remove_file(path)?;
    Ok(())
}

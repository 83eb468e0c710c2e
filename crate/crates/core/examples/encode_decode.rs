//! Compress a synthetic cloud to bytes and back.
//!
//! cargo run --example encode_decode

use kpcc::pipeline::{decode_bytes, encode_cloud, DecodeConfig, EncodeConfig};
use kpcc::synthgen::{gen, Shape};

fn main() -> kpcc::Result<()> {
    let pc = gen(&Shape::Sphere { radius: 100 }, 10, 0)?;
    let enc = encode_cloud(&pc, &EncodeConfig::default())?;
    let r = &enc.report;
    println!(
        "{} points in {} clusters, {} chunks: {} bytes, {:.3} bpp",
        r.points, r.clusters, r.chunks, r.bytes, r.bpp
    );

    let (back, report) = decode_bytes(&enc.bytes, &DecodeConfig::default())?;
    assert_eq!(back.points(), pc.points());
    println!("decoded {} points in {:.2?}, lossless", report.points, report.wall_time);
    Ok(())
}

//! Code a token stream with the adaptive context model and compare the
//! payload with the ideal code length.
//!
//! cargo run --example range_coding

use kpcc::probmodel::{AdaptiveSession, UniformSession};
use kpcc::rangecoder::{decode_tokens, encode_tokens, ideal_bits};

fn main() -> kpcc::Result<()> {
    // A repetitive stream, as occupancy symbols of smooth surfaces tend to be.
    let tokens: Vec<u32> = (0..5000u32)
        .map(|i| [3, 17, 17, 200, 3, 3][(i * i % 7 % 6) as usize])
        .collect();

    let payload = encode_tokens(&tokens, &mut AdaptiveSession::new(258, 2)?)?;
    let ideal = ideal_bits(&tokens, &mut AdaptiveSession::new(258, 2)?)?;
    let flat = encode_tokens(&tokens, &mut UniformSession::new(258)?)?;
    println!(
        "{} tokens: adaptive {} bytes (ideal {:.1}), uniform {} bytes",
        tokens.len(),
        payload.bytes.len(),
        ideal / 8.0,
        flat.bytes.len()
    );

    let back = decode_tokens(&payload, &mut AdaptiveSession::new(258, 2)?)?;
    assert_eq!(back, tokens);
    Ok(())
}

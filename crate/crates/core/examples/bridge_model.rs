//! Serve the adaptive model over the bridge protocol and check that coding
//! through the bridge gives the same bytes as coding in-process.
//!
//! cargo run --example bridge_model

use std::io::{BufReader, BufWriter};
use std::time::Duration;

use kpcc::probmodel::bridge::{serve, ServeOptions};
use kpcc::probmodel::{AdaptiveSession, BridgeSession, ModelSession};
use kpcc::rangecoder::encode_tokens;

fn main() -> kpcc::Result<()> {
    let (from_client, to_server) = std::io::pipe()?;
    let (from_server, to_client) = std::io::pipe()?;
    let server = std::thread::spawn(move || {
        let mut model = AdaptiveSession::new(258, 2).unwrap();
        serve(
            &mut model,
            &mut BufReader::new(from_client),
            &mut BufWriter::new(to_client),
            ServeOptions::default(),
        )
    });

    let tokens: Vec<u32> = (0..400u32).map(|i| (i % 5) * 40 + 3).collect();
    let mut remote = BridgeSession::over(from_server, to_server, 258, Duration::from_secs(5))?;
    remote.reset()?;
    let via_bridge = encode_tokens(&tokens, &mut remote)?;
    drop(remote);
    server.join().unwrap()?;

    let local = encode_tokens(&tokens, &mut AdaptiveSession::new(258, 2)?)?;
    assert_eq!(via_bridge, local);
    println!(
        "{} tokens -> {} bytes through the bridge, identical to in-process",
        tokens.len(),
        local.bytes.len()
    );
    Ok(())
}

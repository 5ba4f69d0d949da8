//! The two messages a client sends: the item request and the gradient
//! upload. Both are versioned little-endian binary and carry no labels,
//! losses or user embeddings.
//!
//!     cargo run --example wire_messages

use fedrkg::client::ClientState;
use fedrkg::privacy::DpConfig;
use fedrkg::wire::{GradientUpload, RequestMessage};

pub fn run_example() -> anyhow::Result<()> {
    let client = ClientState {
        user_id: 7,
        user_embedding: vec![0.25; 4],
        interactions: [2, 5, 11].into(),
        seed: 99,
    };
    let (plan, msg) = client.build_request(20, &DpConfig::default(), 0)?;
    let bytes = msg.encode();
    println!("request for {} items, {} bytes: {:02x?}", msg.items.len(), bytes.len(), &bytes[..12]);
    let back = RequestMessage::decode(&bytes)?;
    anyhow::ensure!(back == msg);
    println!("client keeps {} labels locally: {:?}", plan.local_labels.len(), plan.local_labels);

    let truncated = &bytes[..bytes.len() - 1];
    match RequestMessage::decode(truncated) {
        Ok(_) => anyhow::bail!("truncated request decoded"),
        Err(e) => println!("truncated request rejected: {e}"),
    }
    match GradientUpload::decode(&bytes) {
        Ok(_) => anyhow::bail!("request decoded as an upload"),
        Err(e) => println!("request bytes read as an upload rejected: {e}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}

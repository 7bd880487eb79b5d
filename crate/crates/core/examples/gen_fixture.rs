//! Regenerates the synthetic fixture corpora under `fixtures/`.
//!
//! ```text
//! cargo run -p fsmt-core --example gen_fixture [OUT_DIR]
//! ```

use std::path::PathBuf;

use fsmt_core::corpus::{write_contrastive, write_parallel};
use fsmt_core::synth::{fixture_contrastive, fixture_parallel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    std::fs::create_dir_all(&dir)?;
    write_contrastive(dir.join("contrastive.tsv"), &fixture_contrastive())?;
    write_parallel(dir.join("parallel.tsv"), &fixture_parallel())?;
    println!("wrote {}", dir.display());
    Ok(())
}

//! Scores with a narrow model and checks that its quintiles still separate
//! harm when a wider LoRA model and a full fine-tune train on them.

use driftrisk::eval::render_table;
use driftrisk::harness::{transfer_run, TransferConfig};

fn main() -> driftrisk::Result<()> {
    let out = transfer_run(&TransferConfig::seeded(7))?;
    println!(
        "scorer alpha {:.2}, {} samples",
        out.scorer_alpha,
        out.corpus.len()
    );
    print!("{}", render_table(&out.reports));
    Ok(())
}

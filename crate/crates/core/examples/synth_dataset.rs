//! Writes a procedurally generated digit dataset in the layout `train` expects.
//!
//! cargo run --example synth_dataset -- OUT_DIR [PER_CLASS] [SEED]

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(root) = args.first().map(PathBuf::from) else {
        eprintln!("usage: synth_dataset OUT_DIR [PER_CLASS=30] [SEED=1]");
        return ExitCode::from(2);
    };
    let per_class = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    match tgocr::data::synth::write_dataset(&root, per_class, seed) {
        Ok(()) => {
            println!("wrote {} images to {}", per_class * 10, root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

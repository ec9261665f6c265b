//! Run every stage from a config file, the same as `gaborcomp pipeline`.
//! Defaults to the small smoke config; pass `configs/synth.json` for the
//! full 800-segment run.
//!
//! ```bash
//! cargo run --release -p gaborcomp --example pipeline -- configs/smoke.json
//! ```

use std::path::PathBuf;

use gaborcomp::cli::{pipeline, RunConfig};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json"));
    let cfg = match RunConfig::load(&path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            std::process::exit(3);
        }
    };
    match pipeline(&cfg) {
        Ok(out) => {
            let cv = &out.eval.cv;
            println!("artifacts under {}", cfg.out_dir.display());
            for p in [&out.dict, &out.codes, &out.feats, &out.model, &out.report, &out.preds] {
                println!("  {}", p.display());
            }
            println!(
                "{}-fold macro accuracy {:.3} +- {:.3}, F1 {:.3}",
                cv.k, cv.mean.macro_accuracy, cv.std.macro_accuracy, cv.mean.macro_f1
            );
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}

//! Decompose one synthetic murmur onto the M=512 dictionary and report how
//! the residual falls as atoms are added.
//!
//! ```bash
//! cargo run --release -p gaborcomp --example sparse_decomposition
//! ```

use std::time::Instant;

use gaborcomp::dictionary::Dictionary;
use gaborcomp::pursuit::{comp_single, reconstruct, PursuitConfig};
use gaborcomp::signal_io::{synth_murmur, MurmurClass, SynthSpec};

fn main() -> gaborcomp::Result<()> {
    let dict = Dictionary::build(512)?;
    let seg = synth_murmur(&SynthSpec::new(MurmurClass::Diamond, 7, 1).with_snr(10.0), 0)?;

    let start = Instant::now();
    let code = comp_single(&seg.samples, &dict, &PursuitConfig::default())?;
    let elapsed = start.elapsed();

    let x_norm = seg.samples.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("selected {} atoms in {:.2?}", code.support.len(), elapsed);
    for c in [1, 8, 32, 128, 256, 511] {
        if let Some(r) = code.residual_norms.get(c - 1) {
            println!("  after {c:>3} atoms: relative residual {:.3e}", r / x_norm);
        }
    }

    let mut per_level = vec![0usize; dict.levels() as usize];
    for &col in &code.support {
        per_level[dict.params_of(col)?.j as usize - 1] += 1;
    }
    println!("atoms per resolution j=1..{}: {per_level:?}", dict.levels());

    let xr = reconstruct(&dict, &code)?;
    let err = xr.iter().zip(&seg.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / x_norm;
    println!("reconstruction relative error {err:.3e}");
    Ok(())
}

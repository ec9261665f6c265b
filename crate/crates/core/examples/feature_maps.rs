//! Turn a sparse code into its stack of time-frequency matrices and dump
//! one of them as CSV for plotting.
//!
//! ```bash
//! cargo run --release -p gaborcomp --example feature_maps [out.csv]
//! ```

use gaborcomp::dictionary::Dictionary;
use gaborcomp::features::{featurize, Mode};
use gaborcomp::pursuit::{comp_single, PursuitConfig};
use gaborcomp::signal_io::{synth_murmur, MurmurClass, SynthSpec};

fn main() -> gaborcomp::Result<()> {
    let dict = Dictionary::build(512)?;
    let seg = synth_murmur(&SynthSpec::new(MurmurClass::Diamond, 7, 1).with_snr(20.0), 0)?;
    let code = comp_single(&seg.samples, &dict, &PursuitConfig::with_zeta(128))?.with_ref("diamond-0", Some(seg.label));

    let stack = featurize(&code, Mode::SquaredMagnitude)?;
    let coeff_energy: f64 = code.coefficients.iter().map(|a| a.norm_sqr()).sum();
    println!("stack energy {:.6}, coefficient energy {coeff_energy:.6}", stack.total_energy());
    for (j, a) in (1..).zip(&stack.matrices) {
        let nonzero = a.iter().filter(|&&v| v > 0.0).count();
        let share = a.sum() / stack.total_energy();
        println!("  j={j}: {:>3} x {:<3} {nonzero:>3} nonzero, {:>5.1}% of energy", a.nrows(), a.ncols(), 100.0 * share);
    }

    let mag = featurize(&code, Mode::Magnitude)?;
    let out = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir().join("gaborcomp_j4.csv").display().to_string()
    });
    std::fs::write(&out, mag.matrix_csv(4)?)?;
    println!("|a_4| written to {out} ({} rows of frequency)", mag.matrices[3].nrows());
    Ok(())
}

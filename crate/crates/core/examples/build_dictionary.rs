//! Build the M=512 multiresolution Gabor dictionary, walk its index map and
//! show how duration and bandwidth trade off across resolutions.
//!
//! ```bash
//! cargo run --release -p gaborcomp --example build_dictionary
//! ```

use std::time::Instant;

use gaborcomp::dictionary::{frequency_spread, gabor_atom, time_spread, AtomParams, Dictionary};

fn main() -> gaborcomp::Result<()> {
    let start = Instant::now();
    let dict = Dictionary::build(512)?;
    println!(
        "M={} J={} -> {} x {} atoms in {:.2?}",
        dict.m(),
        dict.levels(),
        dict.m(),
        dict.n_atoms(),
        start.elapsed()
    );

    let worst = (0..dict.n_atoms())
        .map(|i| {
            let n: f64 = dict.column(i).iter().map(|z| z.norm_sqr()).sum();
            (n.sqrt() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    println!("largest | ||d_i|| - 1 | = {worst:.1e}");

    for col in [0, 1, 515, 4095] {
        let p = dict.params_of(col)?;
        println!(
            "column {col:>4} -> j={} t={} f={} (center {}, omega {:.4}), partner column {}",
            p.j,
            p.t,
            p.f,
            p.center(),
            p.omega(),
            dict.conjugate_column(col)
        );
    }

    println!("\n j  alpha  time spread  bandwidth (bins)");
    for j in 1..=dict.levels() {
        let t = (512 >> j) / 2;
        let atom = gabor_atom(AtomParams::new(j, t, 0), 512)?;
        let dur = time_spread(&atom);
        println!("{j:>2} {:>6} {dur:>12.3} {:>11.3}", 1 << j, frequency_spread(&atom));
    }

    let path = std::env::temp_dir().join("gaborcomp_example.mrgd");
    dict.save(&path)?;
    let back = Dictionary::load(&path)?;
    println!(
        "\nsaved {} bytes to {}; reload identical: {}",
        std::fs::metadata(&path)?.len(),
        path.display(),
        back == dict
    );
    Ok(())
}

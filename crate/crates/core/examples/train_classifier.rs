//! Train the patch-embedding transformer on a small synthetic set and watch
//! the loss fall. Uses M=128 so it finishes in seconds.
//!
//! ```bash
//! cargo run --release -p gaborcomp --example train_classifier
//! ```

use gaborcomp::classifier::{predict, train, TrainConfig};
use gaborcomp::dictionary::Dictionary;
use gaborcomp::features::{featurize, FeatureStack, Mode};
use gaborcomp::pursuit::{comp_single, PursuitConfig};
use gaborcomp::signal_io::{make_synth_dataset, MurmurClass, SynthSpec};
use rayon::prelude::*;

const M: usize = 128;

fn stacks(seed: u64, per_class: usize) -> gaborcomp::Result<Vec<FeatureStack>> {
    let specs: Vec<SynthSpec> = MurmurClass::ALL
        .iter()
        .zip(seed..)
        .map(|(&c, s)| SynthSpec {
            length: M,
            ..SynthSpec::new(c, s, per_class).with_snr(20.0)
        })
        .collect();
    let set = make_synth_dataset(&specs)?;
    let dict = Dictionary::build(M)?;
    set.segments()
        .par_iter()
        .map(|s| {
            let code = comp_single(&s.samples, &dict, &PursuitConfig::with_zeta(M - 1))?;
            featurize(&code.with_ref(s.recording_id.clone(), Some(s.label)), Mode::SquaredMagnitude)
        })
        .collect()
}

fn main() -> gaborcomp::Result<()> {
    let train_set = stacks(1, 40)?;
    let test_set = stacks(100, 10)?;
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 25,
        warmup_epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(&train_set, Some(&test_set), &cfg, 2, 16)?;
    for e in out.log.iter().filter(|e| e.epoch % 5 == 0 || e.epoch == 1) {
        println!(
            "epoch {:>2}: train loss {:.3} acc {:.2} | held-out loss {:.3} acc {:.2}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            e.val_loss.unwrap_or(f64::NAN),
            e.val_acc.unwrap_or(f64::NAN)
        );
    }
    let counts = out.model.count_params();
    println!("{} trainable parameters ({} in the embedders)", counts.total, counts.embedding);

    let (class, probs) = predict(&test_set[0], &out.model)?;
    println!("{} predicted as {class}: {probs:.3?}", test_set[0].segment_ref);
    Ok(())
}

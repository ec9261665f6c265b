//! Stratified k-fold evaluation with a custom learner. A nearest-centroid
//! classifier on envelope features stands in for the transformer, since the
//! fold machinery only sees the `Learner` trait.
//!
//! ```bash
//! cargo run --release -p gaborcomp --example cross_validation
//! ```

use gaborcomp::evaluation::{cross_validate, stratified_kfold, Learner};
use gaborcomp::signal_io::{make_synth_dataset, MurmurClass, Segment, SynthSpec};

/// Mean absolute amplitude over eight equal windows.
fn envelope(seg: &Segment) -> Vec<f64> {
    let w = seg.samples.len() / 8;
    seg.samples.chunks(w).map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / w as f64).collect()
}

struct NearestCentroid;

impl Learner<Segment> for NearestCentroid {
    fn fit_predict(&mut self, _fold: usize, train: &[&Segment], test: &[&Segment]) -> gaborcomp::Result<Vec<MurmurClass>> {
        let mut centroids = vec![vec![0.0; 8]; 4];
        let mut counts = [0usize; 4];
        for s in train {
            let c = s.label.index();
            counts[c] += 1;
            centroids[c].iter_mut().zip(envelope(s)).for_each(|(a, b)| *a += b);
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        Ok(test
            .iter()
            .map(|s| {
                let e = envelope(s);
                let dist = |c: &Vec<f64>| c.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..4).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])));
                MurmurClass::from_index(best.unwrap_or(0)).expect("class index below 4")
            })
            .collect())
    }
}

fn main() -> gaborcomp::Result<()> {
    let specs: Vec<SynthSpec> = MurmurClass::ALL
        .iter()
        .zip(7..)
        .map(|(&c, seed)| SynthSpec::new(c, seed, 50).with_snr(-8.0))
        .collect();
    let set = make_synth_dataset(&specs)?;
    let labels: Vec<MurmurClass> = set.segments().iter().map(|s| s.label).collect();
    let plan = stratified_kfold(&labels, 5, 7)?;

    let report = cross_validate(set.segments(), &labels, &plan, &mut NearestCentroid)?;
    for (i, f) in report.folds.iter().enumerate() {
        println!(
            "fold {}: macro specificity {:.3}  F1 {:.3}  accuracy {:.3}",
            i, f.macro_specificity, f.macro_f1, f.macro_accuracy
        );
    }
    println!(
        "mean accuracy {:.3} +- {:.3}, pooled confusion {:?}",
        report.mean.macro_accuracy, report.std.macro_accuracy, report.pooled_confusion.counts
    );
    Ok(())
}

//! Synthetic four-class systolic murmurs.
//!
//! A segment is `envelope(shape) * carrier + noise`, peak-normalized. The
//! carrier is a constant-amplitude random FM tone whose instantaneous
//! frequency wanders smoothly through `carrier_band`, so all amplitude
//! structure comes from the envelope:
//!
//! * Diamond: triangle peaking at the segment midpoint
//! * Plateau: flat, with raised-cosine ramps over the first and last 5%
//! * Decrescendo: linear fall from 1 to 0.05
//! * Crescendo: linear rise from 0.05 to 1

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{normalize, Location, MurmurClass, Segment, SegmentSet, DEFAULT_SAMPLE_RATE, DEFAULT_SEGMENT_LEN};
use crate::error::{Error, Result};

/// Recipe for `count` synthetic segments of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: MurmurClass,
    /// `(low, high)` in Hz.
    pub carrier_band: (f64, f64),
    /// Signal-to-noise ratio of the added white noise. `+inf` (written as
    /// `null` in JSON) means noiseless.
    #[serde(serialize_with = "snr_to_json", deserialize_with = "snr_from_json", default = "infinite")]
    pub noise_snr_db: f64,
    pub seed: u64,
    pub count: usize,
    #[serde(default = "default_len")]
    pub length: usize,
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}
fn default_len() -> usize {
    DEFAULT_SEGMENT_LEN
}
fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

fn snr_to_json<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn snr_from_json<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl SynthSpec {
    pub fn new(shape: MurmurClass, seed: u64, count: usize) -> Self {
        Self {
            shape,
            carrier_band: (25.0, 400.0),
            noise_snr_db: f64::INFINITY,
            seed,
            count,
            length: DEFAULT_SEGMENT_LEN,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.noise_snr_db = snr_db;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.carrier_band;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidSpec(format!("carrier band ({lo}, {hi}) must satisfy 0 <= low < high")));
        }
        if !(self.sample_rate > 0.0) || hi > self.sample_rate / 2.0 {
            return Err(Error::InvalidSpec(format!(
                "carrier band high {hi} Hz exceeds Nyquist for {} Hz",
                self.sample_rate
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidSpec("count must be at least 1".into()));
        }
        if self.length < 2 {
            return Err(Error::InvalidSpec("length must be at least 2".into()));
        }
        if self.noise_snr_db.is_nan() {
            return Err(Error::InvalidSpec("noise_snr_db is NaN".into()));
        }
        Ok(())
    }
}

/// Envelope of a murmur shape sampled at `m` points.
pub fn envelope(shape: MurmurClass, m: usize) -> Vec<f64> {
    let last = (m - 1) as f64;
    match shape {
        MurmurClass::Diamond => {
            let mid = m as f64 / 2.0;
            (0..m).map(|i| (1.0 - (i as f64 - mid).abs() / mid).max(0.0)).collect()
        }
        MurmurClass::Plateau => {
            let edge = ((0.05 * m as f64).round() as usize).max(1);
            (0..m)
                .map(|i| {
                    let from_edge = i.min(m - 1 - i);
                    if from_edge < edge {
                        0.5 * (1.0 - (PI * from_edge as f64 / edge as f64).cos())
                    } else {
                        1.0
                    }
                })
                .collect()
        }
        MurmurClass::Decrescendo => (0..m).map(|i| 1.0 - 0.95 * i as f64 / last).collect(),
        MurmurClass::Crescendo => (0..m).map(|i| 0.05 + 0.95 * i as f64 / last).collect(),
    }
}

/// Generates segment `index` of `spec`. Bit-identical for identical
/// `(spec, index)`.
pub fn synth_murmur(spec: &SynthSpec, index: usize) -> Result<Segment> {
    spec.validate()?;
    let m = spec.length;
    let fs = spec.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let (lo, hi) = spec.carrier_band;
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    // three slow sinusoidal frequency excursions averaged into [-1, 1]
    let wander: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(2.0..12.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let mut phase = rng.gen_range(0.0..2.0 * PI);

    let env = envelope(spec.shape, m);
    let mut signal = Vec::with_capacity(m);
    for (i, e) in env.iter().enumerate() {
        let t = i as f64 / fs;
        let s = wander.iter().map(|(rate, th)| (2.0 * PI * rate * t + th).sin()).sum::<f64>() / 3.0;
        let freq = center + half * s;
        signal.push(e * phase.cos());
        phase += 2.0 * PI * freq / fs;
    }

    if spec.noise_snr_db.is_finite() {
        let power = signal.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let sigma = (power / 10f64.powf(spec.noise_snr_db / 10.0)).sqrt();
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            for v in &mut signal {
                *v += noise.sample(&mut rng);
            }
        }
    }

    Ok(Segment {
        samples: normalize(&signal)?,
        label: spec.shape,
        recording_id: format!("synth-{}-s{}-{index:04}", spec.shape.name().to_lowercase(), spec.seed),
        location: Location::Unknown,
        sample_rate: fs,
    })
}

/// Concatenates `synth_murmur(spec, 0..spec.count)` over all specs.
pub fn make_synth_dataset(specs: &[SynthSpec]) -> Result<SegmentSet> {
    if specs.is_empty() {
        return Err(Error::EmptyInput("no synthesis specs".into()));
    }
    if let Some(s) = specs.iter().find(|s| s.length != specs[0].length) {
        return Err(Error::InvalidSpec(format!(
            "mixed segment lengths {} and {}",
            specs[0].length, s.length
        )));
    }
    let mut segments = Vec::with_capacity(specs.iter().map(|s| s.count).sum());
    for spec in specs {
        for index in 0..spec.count {
            segments.push(synth_murmur(spec, index)?);
        }
    }
    SegmentSet::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moving_rms(x: &[f64], win: usize) -> Vec<f64> {
        x.windows(win)
            .map(|w| (w.iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt())
            .collect()
    }

    #[test]
    fn plateau_envelope_is_flat_in_the_middle() {
        for seed in [1, 7, 42] {
            let seg = synth_murmur(&SynthSpec::new(MurmurClass::Plateau, seed, 1), 0).unwrap();
            let m = seg.len();
            let lo = m / 20;
            let mid = &seg.samples[lo..m - lo];
            let rms = moving_rms(mid, 64);
            let mean = rms.iter().sum::<f64>() / rms.len() as f64;
            let var = rms.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rms.len() as f64;
            let cv = var.sqrt() / mean;
            assert!(cv < 0.1, "seed {seed}: cv {cv}");
        }
    }

    #[test]
    fn diamond_peaks_in_middle_third() {
        for seed in [1, 7, 42] {
            let seg = synth_murmur(&SynthSpec::new(MurmurClass::Diamond, seed, 1), 3).unwrap();
            let win = 64;
            let rms = moving_rms(&seg.samples, win);
            let (arg, _) = rms
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            let center = arg + win / 2;
            let m = seg.len();
            assert!(center >= m / 3 && center < 2 * m / 3, "seed {seed}: peak at {center}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let spec = SynthSpec::new(MurmurClass::Crescendo, 9, 2).with_snr(10.0);
        let a = synth_murmur(&spec, 1).unwrap();
        let b = synth_murmur(&spec, 1).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = synth_murmur(&spec, 0).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn dataset_counts() {
        let specs: Vec<_> = MurmurClass::ALL.iter().map(|&c| SynthSpec::new(c, 3, 50)).collect();
        let set = make_synth_dataset(&specs).unwrap();
        assert_eq!(set.len(), 200);
        assert_eq!(set.class_counts(), [50; 4]);
        set.validate().unwrap();

        let one = make_synth_dataset(&[SynthSpec::new(MurmurClass::Plateau, 3, 1)]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(make_synth_dataset(&[]).is_err());
    }

    #[test]
    fn same_seed_different_shapes_differ() {
        let a = synth_murmur(&SynthSpec::new(MurmurClass::Crescendo, 5, 1), 0).unwrap();
        let b = synth_murmur(&SynthSpec::new(MurmurClass::Decrescendo, 5, 1), 0).unwrap();
        let diff = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 0.1);
    }

    #[test]
    fn invalid_band_rejected() {
        let mut spec = SynthSpec::new(MurmurClass::Plateau, 1, 1);
        spec.carrier_band = (400.0, 25.0);
        assert!(matches!(synth_murmur(&spec, 0), Err(Error::InvalidSpec(_))));
        spec.carrier_band = (25.0, 3000.0);
        assert!(matches!(synth_murmur(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_maps_infinite_snr_to_null() {
        let spec = SynthSpec::new(MurmurClass::Diamond, 1, 2);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"noise_snr_db\":null"), "{json}");
        let back: SynthSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let noisy: SynthSpec = serde_json::from_str(
            r#"{"shape":"Plateau","carrier_band":[30,300],"noise_snr_db":12.5,"seed":4,"count":3}"#,
        )
        .unwrap();
        assert_eq!(noisy.noise_snr_db, 12.5);
        assert_eq!(noisy.length, 512);
    }
}

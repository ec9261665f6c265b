//! The pipeline stages behind each subcommand, usable without going through
//! argument parsing. Every stage reads and validates its input files,
//! writes its outputs and leaves its inputs untouched.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{GroupKey, RunConfig};
use crate::classifier::{predict, train, Model, TrainConfig, TrainOutput};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::evaluation::{
    cross_validate, stratified_group_kfold, stratified_kfold, stratified_split, CvReport, FoldPlan,
    TransformerLearner,
};
use crate::features::{featurize, load_bundle, save_bundle, FeatureStack, Mode};
use crate::pursuit::{comp_joint, comp_single, PursuitConfig, SparseCode};
use crate::signal_io::{
    load_segments, make_synth_dataset, write_manifest, write_samples_csv, LengthFit, LoadOptions, ManifestRow,
    Segment, SynthSpec,
};

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub(crate) fn at(stage: &'static str) -> impl Fn(Error) -> StageError {
    move |error| StageError { stage, error }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Files in `dir` with extension `ext`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn build_dict(m: usize, out: &Path) -> Result<Dictionary> {
    let dict = Dictionary::build(m)?;
    write_file(out, &dict.to_bytes())?;
    Ok(dict)
}

/// Writes every synthetic segment as a one-column CSV plus a
/// `manifest.csv` referencing them. Returns the manifest path.
pub fn synth(specs: &[SynthSpec], out_dir: &Path) -> Result<PathBuf> {
    let set = make_synth_dataset(specs)?;
    create_dir(out_dir)?;
    let mut rows = Vec::with_capacity(set.len());
    for (i, seg) in set.segments().iter().enumerate() {
        let name = format!("{i:05}.csv");
        write_samples_csv(&out_dir.join(&name), &seg.samples)?;
        rows.push(ManifestRow {
            recording_id: seg.recording_id.clone(),
            path: name,
            label: seg.label.name().to_string(),
            location: seg.location.name().to_string(),
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeOptions {
    /// Segment length the manifest entries are fitted to; must match the
    /// dictionary.
    pub m: usize,
    pub fit: LengthFit,
    pub pursuit: PursuitConfig,
    pub joint_by: Option<GroupKey>,
}

fn group_key(seg: &Segment, key: GroupKey) -> String {
    match key {
        GroupKey::RecordingId => seg.recording_id.clone(),
        GroupKey::Location => seg.location.name().to_string(),
    }
}

/// `"{recording_id}#{k}"` where `k` counts earlier segments of the same
/// recording.
fn segment_refs(segments: &[Segment]) -> Vec<String> {
    let mut seen: Vec<(&str, usize)> = Vec::new();
    segments
        .iter()
        .map(|s| {
            let k = match seen.iter_mut().find(|(id, _)| *id == s.recording_id) {
                Some((_, n)) => {
                    *n += 1;
                    *n - 1
                }
                None => {
                    seen.push((&s.recording_id, 1));
                    0
                }
            };
            format!("{}#{k}", s.recording_id)
        })
        .collect()
}

/// Recording id encoded in a segment reference.
pub fn recording_of(segment_ref: &str) -> &str {
    segment_ref.rsplit_once('#').map_or(segment_ref, |(rec, _)| rec)
}

/// Decomposes every manifest entry and writes `{row:05}.mrgc` files to
/// `out_dir`, replacing any `.mrgc` files already there. Returns the number
/// of codes written.
pub fn decompose(dict_path: &Path, manifest: &Path, opts: &DecomposeOptions, out_dir: &Path) -> Result<usize> {
    let dict = Dictionary::load(dict_path)?;
    if dict.m() != opts.m {
        return Err(Error::Header(format!(
            "dictionary {} has M={} but segments are fitted to M={}",
            dict_path.display(),
            dict.m(),
            opts.m
        )));
    }
    opts.pursuit.validate(opts.m)?;
    let set = load_segments(
        manifest,
        &LoadOptions {
            length: opts.m,
            fit: opts.fit,
        },
    )?;
    let segments = set.segments();
    let refs = segment_refs(segments);

    // member rows of each decomposition, groups in order of first appearance
    let mut groups: Vec<(Option<String>, Vec<usize>)> = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        match opts.joint_by {
            None => groups.push((None, vec![i])),
            Some(key) => {
                let k = group_key(seg, key);
                match groups.iter_mut().find(|(g, _)| g.as_deref() == Some(k.as_str())) {
                    Some((_, rows)) => rows.push(i),
                    None => groups.push((Some(k), vec![i])),
                }
            }
        }
    }

    let started = Instant::now();
    let coded: Vec<Vec<(usize, SparseCode)>> = groups
        .par_iter()
        .map(|(_, rows)| {
            let codes = if rows.len() == 1 {
                vec![comp_single(&segments[rows[0]].samples, &dict, &opts.pursuit)?]
            } else {
                let xs: Vec<Vec<f64>> = rows.iter().map(|&i| segments[i].samples.clone()).collect();
                comp_joint(&xs, &dict, &opts.pursuit)?.codes
            };
            Ok(rows
                .iter()
                .zip(codes)
                .map(|(&i, code)| (i, code.with_ref(refs[i].clone(), Some(segments[i].label))))
                .collect())
        })
        .collect::<Result<_>>()?;
    log::info!(
        "decomposed {} segments in {} groups in {:.1?}",
        segments.len(),
        groups.len(),
        started.elapsed()
    );

    create_dir(out_dir)?;
    for stale in files_with_ext(out_dir, "mrgc")? {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    for ((group, _), codes) in groups.iter().zip(&coded) {
        for (row, code) in codes {
            let header = code.header(opts.pursuit.zeta, group.clone());
            code.save(&out_dir.join(format!("{row:05}.mrgc")), &header)?;
        }
    }
    Ok(segments.len())
}

/// Turns every `.mrgc` file of `codes_dir` (in file-name order) into a
/// feature stack and writes them as one bundle. With `dump_csv`, each
/// matrix is also written as `{segment}_j{j}.csv` there.
pub fn featurize_codes(
    codes_dir: &Path,
    mode: Mode,
    max_normalize: bool,
    out: &Path,
    dump_csv: Option<&Path>,
) -> Result<Vec<FeatureStack>> {
    let files = files_with_ext(codes_dir, "mrgc")?;
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no .mrgc files in {}", codes_dir.display())));
    }
    let mut stacks = Vec::with_capacity(files.len());
    let mut shape = None;
    for path in &files {
        let (code, _) = SparseCode::load(path)?;
        match shape {
            None => shape = Some((code.m, code.levels)),
            Some(s) if s != (code.m, code.levels) => {
                return Err(Error::Header(format!(
                    "{} has M={} J={}, earlier codes have M={} J={}",
                    path.display(),
                    code.m,
                    code.levels,
                    s.0,
                    s.1
                )))
            }
            Some(_) => {}
        }
        let mut stack = featurize(&code, mode)?;
        if max_normalize {
            stack.max_normalize();
        }
        stacks.push(stack);
    }
    if let Some(dir) = dump_csv {
        create_dir(dir)?;
        for (stack, path) in stacks.iter().zip(&files) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            for j in 1..=stack.levels() {
                let csv = dir.join(format!("{stem}_j{j}.csv"));
                write_file(&csv, stack.matrix_csv(j)?.as_bytes())?;
            }
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_bundle(out, &stacks)?;
    Ok(stacks)
}

fn labels_of(stacks: &[FeatureStack]) -> Result<Vec<crate::signal_io::MurmurClass>> {
    stacks
        .iter()
        .map(|s| {
            s.label.ok_or_else(|| Error::InvalidLabel {
                label: format!("missing label on {:?}", s.segment_ref),
                row: None,
            })
        })
        .collect()
}

fn write_curves(path: &Path, out: &TrainOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for entry in &out.log {
        w.serialize(entry).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_file(path, &bytes)
}

/// Trains on a bundle, optionally holding out a stratified `val_split`
/// fraction for the validation columns of the log.
pub fn train_model(
    feats: &Path,
    cfg: &TrainConfig,
    heads: usize,
    d_head: usize,
    val_split: Option<f64>,
    out: &Path,
    curves: Option<&Path>,
) -> Result<TrainOutput> {
    let stacks = load_bundle(feats)?;
    let (fit, val): (Vec<FeatureStack>, Vec<FeatureStack>) = match val_split.filter(|&f| f > 0.0) {
        None => (stacks, Vec::new()),
        Some(frac) => {
            let (tr, te) = stratified_split(&labels_of(&stacks)?, frac, cfg.seed)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| stacks[i].clone()).collect();
            (pick(&tr), pick(&te))
        }
    };
    let output = train(&fit, (!val.is_empty()).then_some(&val[..]), cfg, heads, d_head)?;
    write_file(out, &output.model.to_bytes())?;
    if let Some(path) = curves {
        write_curves(path, &output)?;
    }
    Ok(output)
}

/// Writes `segment_ref,predicted,prob0..prob3` for every stack.
pub fn predict_file(model_path: &Path, feats: &Path, out: &Path) -> Result<()> {
    let model = Model::load(model_path)?;
    let stacks = load_bundle(feats)?;
    if let Some(s) = stacks.first() {
        if s.m() != model.arch.m || s.levels() != model.arch.levels {
            return Err(Error::Header(format!(
                "model expects M={} J={}, features have M={} J={}",
                model.arch.m,
                model.arch.levels,
                s.m(),
                s.levels()
            )));
        }
    }
    let preds: Vec<_> = stacks.par_iter().map(|s| predict(s, &model)).collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(["segment_ref", "predicted", "prob0", "prob1", "prob2", "prob3"])
        .map_err(csv_err)?;
    for (s, (class, p)) in stacks.iter().zip(&preds) {
        let mut rec = vec![s.segment_ref.clone(), class.name().to_string()];
        rec.extend(p.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_file(out, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOptions {
    pub k: usize,
    pub seed: u64,
    pub group_by: Option<GroupKey>,
    /// Single stratified hold-out of this fraction instead of k folds.
    pub holdout: Option<f64>,
    pub heads: usize,
    pub d_head: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    #[serde(flatten)]
    pub cv: CvReport,
}

fn fold_plan(stacks: &[FeatureStack], opts: &EvalOptions) -> Result<FoldPlan> {
    let labels = labels_of(stacks)?;
    if let Some(frac) = opts.holdout {
        if !(frac > 0.0) {
            return Err(Error::Config(format!("holdout fraction {frac} must be positive")));
        }
        let (_, test) = stratified_split(&labels, frac, opts.seed)?;
        let mut assignments = vec![1; labels.len()];
        test.iter().for_each(|&i| assignments[i] = 0);
        return Ok(FoldPlan {
            k: 1,
            seed: opts.seed,
            assignments,
        });
    }
    match opts.group_by {
        None => stratified_kfold(&labels, opts.k, opts.seed),
        Some(GroupKey::RecordingId) => {
            let groups: Vec<&str> = stacks.iter().map(|s| recording_of(&s.segment_ref)).collect();
            stratified_group_kfold(&labels, &groups, opts.k, opts.seed)
        }
        Some(GroupKey::Location) => Err(Error::Config(
            "feature bundles carry no location; group folds by recording_id instead".into(),
        )),
    }
}

/// Cross-validates the transformer on a bundle and writes the report as
/// JSON.
pub fn evaluate_file(feats: &Path, opts: &EvalOptions, out: &Path) -> Result<EvalReport> {
    let stacks = load_bundle(feats)?;
    let labels = labels_of(&stacks)?;
    let plan = fold_plan(&stacks, opts)?;
    let mut learner = TransformerLearner::new(opts.train.clone(), opts.heads, opts.d_head);
    let cv = cross_validate(&stacks, &labels, &plan, &mut learner)?;
    log::info!(
        "macro accuracy {:.4} +- {:.4} over {} folds",
        cv.mean.macro_accuracy,
        cv.std.macro_accuracy,
        cv.folds.len()
    );
    let report = EvalReport {
        options: opts.clone(),
        cv,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    write_file(out, &json)?;
    Ok(report)
}

/// Where `pipeline` put everything, relative to `RunConfig::out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub manifest: PathBuf,
    pub dict: PathBuf,
    pub codes: PathBuf,
    pub feats: PathBuf,
    pub report: PathBuf,
    pub model: PathBuf,
    pub curves: PathBuf,
    pub preds: PathBuf,
    pub eval: EvalReport,
}

/// Every stage in order: data, dictionary, codes, features, k-fold
/// evaluation, a final model trained on all segments, and its predictions.
pub fn pipeline(cfg: &RunConfig) -> std::result::Result<PipelineOutput, StageError> {
    cfg.validate().map_err(at("pipeline"))?;
    let dir = &cfg.out_dir;
    create_dir(dir).map_err(at("pipeline"))?;
    let stage_timer = |name: &str, t: Instant| log::info!("stage {name} done in {:.1?}", t.elapsed());

    let t = Instant::now();
    let manifest = match &cfg.manifest {
        Some(m) => m.clone(),
        None => synth(&cfg.synth.specs(cfg.seed, cfg.m), &dir.join("data")).map_err(at("synth"))?,
    };
    stage_timer("synth", t);

    let t = Instant::now();
    let dict = dir.join("dict.mrgd");
    build_dict(cfg.m, &dict).map_err(at("build-dict"))?;
    stage_timer("build-dict", t);

    let t = Instant::now();
    let codes = dir.join("codes");
    let opts = DecomposeOptions {
        m: cfg.m,
        fit: cfg.fit,
        pursuit: cfg.pursuit_config(),
        joint_by: cfg.joint_by,
    };
    decompose(&dict, &manifest, &opts, &codes).map_err(at("decompose"))?;
    stage_timer("decompose", t);

    let t = Instant::now();
    let feats = dir.join("feats.mrgf");
    featurize_codes(&codes, cfg.mode, cfg.max_normalize, &feats, None).map_err(at("featurize"))?;
    stage_timer("featurize", t);

    let t = Instant::now();
    let report = dir.join("report.json");
    let eval_opts = EvalOptions {
        k: cfg.k,
        seed: cfg.seed,
        group_by: cfg.group_by,
        holdout: None,
        heads: cfg.heads,
        d_head: cfg.d_head,
        train: cfg.train_config(),
    };
    let eval = evaluate_file(&feats, &eval_opts, &report).map_err(at("eval"))?;
    stage_timer("eval", t);

    let t = Instant::now();
    let model = dir.join("model.mrgm");
    let curves = dir.join("curves.csv");
    train_model(&feats, &cfg.train_config(), cfg.heads, cfg.d_head, None, &model, Some(&curves))
        .map_err(at("train"))?;
    stage_timer("train", t);

    let t = Instant::now();
    let preds = dir.join("preds.csv");
    predict_file(&model, &feats, &preds).map_err(at("predict"))?;
    stage_timer("predict", t);

    Ok(PipelineOutput {
        manifest,
        dict,
        codes,
        feats,
        report,
        model,
        curves,
        preds,
        eval,
    })
}

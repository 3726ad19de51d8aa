//! End-to-end runs: train, embed the test split into a gallery, retrieve with
//! every labelled test video as a query, and score the ranked lists.
//!
//! Queries and whole-video gallery items are embedded over their activity
//! interval. Clip and proposal items average the per-frame embeddings of their
//! window, so every temporal granularity shares one frame-level forward pass.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_novel_train, split_classes, Manifest, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::evaluation::{MetricsReport, QueryRecord, RetrievalRun};
use crate::features::{FeatureSequence, FeatureStore};
use crate::numerics::rng::indexed_rng;
use crate::retrieval::{
    build_index, generate_proposals, multi_query, ranked_lists_csv, search, segment_clips, tiou, ClipRule,
    GalleryIndex, GalleryItem, GalleryKind, RankedList, TemporalProposal,
};
use crate::semantic::{align_semantic_bank, SemanticBank};
use crate::training::{activity_frames, train, Checkpoint, Model, Objective, TrainConfig, TrainOutcome, TrainingSet};
use crate::visual::scatteredness;

/// How the test split is turned into a gallery and queried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: GalleryKind,
    /// Clip length in seconds (clip and moment modes).
    pub clip_len_s: f64,
    /// Longest proposal, in clips.
    pub max_moment: usize,
    pub clip_rule: ClipRule,
    /// A proposal is relevant when its tIoU with the activity exceeds this.
    pub tiou_threshold: f64,
    /// Same-class test videos averaged into one query.
    pub queries_per_retrieval: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: GalleryKind::Video,
            clip_len_s: 4.0,
            max_moment: 26,
            clip_rule: ClipRule::Contained,
            tiou_threshold: 0.5,
            queries_per_retrieval: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_len_s > 0.0 && self.clip_len_s.is_finite()) {
            return Err(Error::Config(format!(
                "clip length must be positive, got {}",
                self.clip_len_s
            )));
        }
        if self.max_moment == 0 {
            return Err(Error::Config("max_moment must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.tiou_threshold) {
            return Err(Error::Config(format!(
                "tIoU threshold must be in [0, 1), got {}",
                self.tiou_threshold
            )));
        }
        if self.queries_per_retrieval == 0 {
            return Err(Error::Config("queries_per_retrieval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a run needs: training schedule, evaluation protocol and few-shot budget.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Training videos per novel class; `None` uses the whole training split.
    pub shots: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        if self.shots == Some(0) {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        Ok(())
    }
}

/// Manifest, features and (optionally) the aligned semantic bank.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub manifest: Manifest,
    pub store: FeatureStore,
    pub semantic: Option<SemanticBank>,
}

impl DataBundle {
    /// Loads a manifest, its feature files and an optional semantic-bank file.
    pub fn load(manifest: &Path, features: Option<&Path>, semantic: Option<&Path>, normalize: bool) -> Result<Self> {
        let m = crate::dataset::load_manifest(manifest)?;
        let root: PathBuf = match features {
            Some(p) => p.to_path_buf(),
            None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        let store = FeatureStore::load(&m, root)?;
        let semantic = match semantic {
            Some(p) => Some(crate::semantic::load_semantic_bank(p, &m, normalize)?),
            None => None,
        };
        Ok(Self {
            manifest: m,
            store,
            semantic,
        })
    }

    /// Bundle of an in-memory synthetic dataset.
    pub fn from_synthetic(ds: crate::dataset::SyntheticDataset, normalize: bool) -> Result<Self> {
        let semantic = match &ds.semantic {
            Some(f) => Some(align_semantic_bank(f, &ds.manifest, normalize)?),
            None => None,
        };
        Ok(Self {
            manifest: ds.manifest,
            store: ds.features,
            semantic,
        })
    }

    /// Copy with tiers reassigned so exactly `base` are base classes.
    pub fn with_base_classes(&self, base: &[usize]) -> Result<Self> {
        Ok(Self {
            manifest: self.manifest.with_base_classes(base)?,
            store: self.store.clone(),
            semantic: self.semantic.clone(),
        })
    }
}

/// `T × C` per-frame embeddings `f(x_t)`.
fn frame_embeddings(model: &Model, seq: &FeatureSequence) -> Result<Vec<f32>> {
    if seq.dim() != model.head.input_dim() {
        return Err(Error::dim(format!(
            "video {} has D={} but the model expects {}",
            seq.video_id,
            seq.dim(),
            model.head.input_dim()
        )));
    }
    model.head.mlp.forward(seq.frames.data(), seq.num_frames())
}

/// Mean of the per-frame embeddings whose timestamps fall in `[start, end)`;
/// a window holding no timestamp uses the frame nearest its midpoint.
fn window_mean(seq: &FeatureSequence, f: &[f32], c: usize, start: f64, end: f64) -> Result<Vec<f32>> {
    let range = match seq.interval_range(start, end) {
        Ok(r) => r,
        Err(Error::Degenerate(_)) if end > start => {
            let mid = 0.5 * (start + end);
            let i = (((mid - seq.t0 as f64) * seq.fps as f64).round().max(0.0) as usize).min(seq.num_frames() - 1);
            i..i + 1
        }
        Err(e) => return Err(e),
    };
    let mut z = vec![0.0f32; c];
    for t in range.clone() {
        for (a, &v) in z.iter_mut().zip(&f[t * c..(t + 1) * c]) {
            *a += v;
        }
    }
    let inv = 1.0 / range.len() as f32;
    z.iter_mut().for_each(|v| *v *= inv);
    Ok(z)
}

/// Embedding of a video over its activity interval.
pub fn embed_activity(model: &Model, record: &VideoRecord, seq: &FeatureSequence) -> Result<Vec<f32>> {
    model.embed(&activity_frames(record, seq, None)?)
}

type Entries = Vec<(GalleryItem, Vec<f32>)>;

fn video_entries(model: &Model, rec: &VideoRecord, seq: &FeatureSequence, cfg: &EvalConfig) -> Result<Entries> {
    let label = rec.class.class();
    match cfg.mode {
        GalleryKind::Video => Ok(vec![(
            GalleryItem::video(&rec.id, label, rec.activity),
            embed_activity(model, rec, seq)?,
        )]),
        GalleryKind::Clip | GalleryKind::Moment => {
            let c = model.embed_dim();
            let f = frame_embeddings(model, seq)?;
            let clips = segment_clips(rec, cfg.clip_len_s, cfg.clip_rule)?;
            let zs = clips
                .iter()
                .map(|cl| window_mean(seq, &f, c, cl.start_s, cl.end_s))
                .collect::<Result<Vec<_>>>()?;
            if cfg.mode == GalleryKind::Clip {
                return Ok(clips
                    .iter()
                    .zip(zs)
                    .map(|(cl, z)| {
                        let item = GalleryItem {
                            id: format!("{}#c{:03}", rec.id, cl.index),
                            video_id: rec.id.clone(),
                            label: label.filter(|_| cl.positive),
                            start_s: cl.start_s,
                            end_s: cl.end_s,
                        };
                        (item, z)
                    })
                    .collect());
            }
            let mut out = Vec::new();
            for (s, e) in generate_proposals(clips.len(), cfg.max_moment) {
                let p = TemporalProposal::from_range(&rec.id, (s, e), cfg.clip_len_s);
                // Proposals weight their clips equally.
                let mut z = vec![0.0f32; c];
                for cz in &zs[s..=e] {
                    for (a, &v) in z.iter_mut().zip(cz) {
                        *a += v;
                    }
                }
                let inv = 1.0 / (e - s + 1) as f32;
                z.iter_mut().for_each(|v| *v *= inv);
                let hit = label.is_some() && tiou(p.interval(), rec.activity)? > cfg.tiou_threshold;
                let item = GalleryItem {
                    id: format!("{}#m{:03}-{:03}", rec.id, s, e),
                    video_id: rec.id.clone(),
                    label: label.filter(|_| hit),
                    start_s: p.start_s,
                    end_s: p.end_s,
                };
                out.push((item, z));
            }
            Ok(out)
        }
    }
}

/// Gallery of the whole test split (distractors included) at the configured granularity.
pub fn build_gallery(model: &Model, data: &DataBundle, cfg: &EvalConfig) -> Result<GalleryIndex> {
    cfg.validate()?;
    let test = data.manifest.split_indices(Split::Test);
    let per_video: Vec<Entries> = test
        .par_iter()
        .map(|&i| {
            let rec = &data.manifest.videos[i];
            video_entries(model, rec, data.store.get(&rec.id)?, cfg)
        })
        .collect::<Result<_>>()?;
    let (items, embs): (Vec<GalleryItem>, Vec<Vec<f32>>) = per_video.into_iter().flatten().unzip();
    if items.is_empty() {
        return Err(Error::Validation(format!(
            "the test split yields no {} gallery items",
            cfg.mode
        )));
    }
    build_index(items, &embs, cfg.mode)
}

/// Indices of the labelled test videos, in manifest order.
pub fn query_indices(manifest: &Manifest) -> Vec<usize> {
    manifest
        .split_indices(Split::Test)
        .into_iter()
        .filter(|&i| !manifest.videos[i].class.is_distractor())
        .collect()
}

/// Ranked lists for every labelled test video, with their query records.
///
/// With `q` queries per retrieval, each query is averaged with `q − 1` other test
/// videos of its class drawn by `seed` (fewer when the class is smaller). The
/// draws for `q` are a prefix of the draws for `q + 1`.
pub fn retrieve_all(
    model: &Model,
    data: &DataBundle,
    index: &GalleryIndex,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(Vec<RankedList>, Vec<QueryRecord>)> {
    cfg.validate()?;
    let m = &data.manifest;
    let queries = query_indices(m);
    if queries.is_empty() {
        return Err(Error::Validation(
            "the test split has no labelled videos to query with".into(),
        ));
    }
    let zs: Vec<Vec<f32>> = queries
        .par_iter()
        .map(|&i| {
            let rec = &m.videos[i];
            embed_activity(model, rec, data.store.get(&rec.id)?)
        })
        .collect::<Result<_>>()?;
    let records = queries
        .iter()
        .map(|&i| QueryRecord::from_video(m, &m.videos[i]))
        .collect::<Result<Vec<_>>>()?;
    let q = cfg.queries_per_retrieval;
    let lists = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let id = records[qi].id.as_str();
            if q == 1 {
                return search(index, id, &zs[qi], None);
            }
            let mut mates: Vec<usize> = (0..queries.len())
                .filter(|&o| o != qi && records[o].class == records[qi].class)
                .collect();
            mates.shuffle(&mut indexed_rng(seed, "eval/multi-query", qi as u64));
            mates.truncate(q - 1);
            let mut ids = vec![id];
            let mut group = vec![zs[qi].clone()];
            for &o in &mates {
                ids.push(records[o].id.as_str());
                group.push(zs[o].clone());
            }
            multi_query(index, &ids, &group, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((lists, records))
}

/// Gallery, ranked lists and report of one trained model.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub index: GalleryIndex,
    pub lists: Vec<RankedList>,
    pub run: RetrievalRun,
    pub report: MetricsReport,
}

impl Evaluation {
    /// CSV of every ranked list with class relevance marked.
    pub fn ranked_csv(&self) -> String {
        let classes: std::collections::HashMap<&str, usize> =
            self.run.queries.iter().map(|q| (q.id.as_str(), q.class)).collect();
        ranked_lists_csv(&self.index, &self.lists, |list, item| {
            item.label.is_some() && item.label == classes.get(list.query_id.as_str()).copied()
        })
    }
}

pub fn evaluate_model(
    model: &Model,
    data: &DataBundle,
    cfg: &EvalConfig,
    seed: u64,
    config_echo: serde_json::Value,
) -> Result<Evaluation> {
    let index = build_gallery(model, data, cfg)?;
    let (lists, records) = retrieve_all(model, data, &index, cfg, seed)?;
    let run = RetrievalRun::from_lists(&index, &lists, records)?;
    let report = MetricsReport::evaluate(&run, &data.manifest, config_echo)?;
    Ok(Evaluation {
        index,
        lists,
        run,
        report,
    })
}

/// Trains on the configured training subset.
pub fn train_model(data: &DataBundle, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let indices = match cfg.shots {
        Some(s) => sample_novel_train(&data.manifest, s, cfg.train.seed)?,
        None => data.manifest.split_indices(Split::Train),
    };
    let set = TrainingSet::build(&data.manifest, &data.store, &indices, cfg.train.max_frames)?;
    // Only hand the bank over when the objective uses it.
    let semantic = if cfg.train.effective_lambdas().1 > 0.0 {
        Some(
            data.semantic
                .as_ref()
                .ok_or_else(|| Error::Config("the objective needs a semantic bank (lambda_s > 0)".into()))?,
        )
    } else {
        None
    };
    train(&set, semantic, &cfg.train)
}

/// Output of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub outcome: TrainOutcome,
    pub checkpoint: Checkpoint,
    pub evaluation: Evaluation,
}

impl PipelineOutput {
    /// Mean pairwise distance between the visual prototypes of every class.
    pub fn scatteredness(&self) -> Result<f64> {
        let ids: Vec<usize> = (0..self.outcome.bank.num_classes()).collect();
        scatteredness(&self.outcome.bank, &ids)
    }

    /// Writes the checkpoint, loss curve, gallery, ranked lists and report.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: &str| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        self.checkpoint.save(dir.join(ARTIFACT_CHECKPOINT))?;
        self.evaluation.index.save(dir.join(ARTIFACT_GALLERY))?;
        put(ARTIFACT_LOSS, &crate::training::loss_curve_csv(&self.outcome.curve))?;
        put(ARTIFACT_RANKED, &self.evaluation.ranked_csv())?;
        put(ARTIFACT_REPORT, &self.evaluation.report.to_json())?;
        put("per_query.csv", &self.evaluation.report.per_query_csv())?;
        put("per_class.csv", &self.evaluation.report.per_class_csv())
    }
}

pub const ARTIFACT_CHECKPOINT: &str = "checkpoint.vsck";
pub const ARTIFACT_GALLERY: &str = "gallery.vsgi";
pub const ARTIFACT_LOSS: &str = "loss.csv";
pub const ARTIFACT_RANKED: &str = "ranked.csv";
pub const ARTIFACT_REPORT: &str = "report.json";

/// Train, index, retrieve and evaluate.
pub fn run_pipeline(data: &DataBundle, cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let outcome = train_model(data, cfg)?;
    let checkpoint = Checkpoint::from_outcome(&outcome);
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let evaluation = evaluate_model(&outcome.model, data, &cfg.eval, cfg.train.seed, echo)?;
    Ok(PipelineOutput {
        outcome,
        checkpoint,
        evaluation,
    })
}

/// Training objective variants compared on the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classifier + visual + semantic alignment.
    Full,
    /// Classifier + visual alignment.
    BaselineVisual,
    /// Classifier + semantic alignment.
    BaselineSemantic,
    /// Classifier only.
    Baseline,
    Triplet,
    Margin,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::BaselineVisual,
        Variant::BaselineSemantic,
        Variant::Baseline,
        Variant::Triplet,
        Variant::Margin,
    ];

    /// `base` with the objective and lambdas of this variant (non-zero lambdas
    /// keep their configured values, defaulting to 1).
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let keep = |l: f64| if l > 0.0 { l } else { 1.0 };
        let (objective, lv, ls) = match self {
            Variant::Full => (Objective::Full, keep(base.lambda_v), keep(base.lambda_s)),
            Variant::BaselineVisual => (Objective::Full, keep(base.lambda_v), 0.0),
            Variant::BaselineSemantic => (Objective::Full, 0.0, keep(base.lambda_s)),
            Variant::Baseline => (Objective::Baseline, 0.0, 0.0),
            Variant::Triplet => (Objective::Triplet, 0.0, 0.0),
            Variant::Margin => (Objective::Margin, 0.0, 0.0),
        };
        TrainConfig {
            objective,
            lambda_v: lv,
            lambda_s: ls,
            ..base.clone()
        }
    }
}

/// Reports for novel-shot budgets, training once per budget.
pub fn shot_sweep(data: &DataBundle, cfg: &ExperimentConfig, shots: &[usize]) -> Result<Vec<(usize, MetricsReport)>> {
    shots
        .iter()
        .map(|&s| {
            let c = ExperimentConfig {
                shots: Some(s),
                ..cfg.clone()
            };
            Ok((s, run_pipeline(data, &c)?.evaluation.report))
        })
        .collect()
}

/// Reports for several queries-per-retrieval values from one trained model.
pub fn query_sweep(data: &DataBundle, cfg: &ExperimentConfig, counts: &[usize]) -> Result<Vec<(usize, MetricsReport)>> {
    let outcome = train_model(data, cfg)?;
    counts
        .iter()
        .map(|&q| {
            let mut c = cfg.clone();
            c.eval.queries_per_retrieval = q;
            let echo = serde_json::to_value(&c).expect("config serializes");
            Ok((
                q,
                evaluate_model(&outcome.model, data, &c.eval, c.train.seed, echo)?.report,
            ))
        })
        .collect()
}

/// Reports for alternative base/novel partitions, each drawn from the training seed.
///
/// Novel classes are trained with `cfg.shots` videos (5 when unset).
pub fn split_sweep(
    data: &DataBundle,
    cfg: &ExperimentConfig,
    base_counts: &[usize],
) -> Result<Vec<(usize, MetricsReport)>> {
    let k = data.manifest.num_classes();
    base_counts
        .iter()
        .map(|&nb| {
            let (base, _) = split_classes(k, nb, cfg.train.seed)?;
            let d = data.with_base_classes(&base)?;
            let c = ExperimentConfig {
                shots: Some(cfg.shots.unwrap_or(5)),
                ..cfg.clone()
            };
            Ok((nb, run_pipeline(&d, &c)?.evaluation.report))
        })
        .collect()
}

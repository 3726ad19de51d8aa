use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use super::loss::{margin_batch_loss, triplet_batch_loss};
use super::{total_loss, LossBreakdown, LossWeights, Model, ModelConfig, Objective, TrainConfig};
use crate::dataset::{Manifest, VideoRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FeatureStore};
use crate::numerics::rng::{stream_rng, EngineRng};
use crate::numerics::{adam_step, AdamConfig, AdamState, HasParameters};
use crate::semantic::SemanticBank;
use crate::visual::VisualBank;

/// Frames of `range`, evenly subsampled to at most `max_frames`.
pub fn select_frames(seq: &FeatureSequence, range: Range<usize>, max_frames: Option<usize>) -> Vec<f32> {
    let t = range.len();
    match max_frames {
        Some(cap) if t > cap => {
            let mut out = Vec::with_capacity(cap * seq.dim());
            for i in 0..cap {
                // Centre of the i-th of `cap` equal chunks.
                let f = range.start + (2 * i + 1) * t / (2 * cap);
                out.extend_from_slice(seq.rows(f..f + 1));
            }
            out
        }
        _ => seq.rows(range).to_vec(),
    }
}

/// Frames inside the record's activity interval.
///
/// An interval too short to contain a frame timestamp falls back to the frame
/// nearest its midpoint.
pub fn activity_frames(record: &VideoRecord, seq: &FeatureSequence, max_frames: Option<usize>) -> Result<Vec<f32>> {
    let [start, end] = record.activity;
    let range = match seq.interval_range(start, end) {
        Ok(r) => r,
        Err(Error::Degenerate(_)) if end > start => {
            let mid = 0.5 * (start + end);
            let i = (((mid - seq.t0 as f64) * seq.fps as f64).round().max(0.0) as usize).min(seq.num_frames() - 1);
            i..i + 1
        }
        Err(e) => return Err(e),
    };
    Ok(select_frames(seq, range, max_frames))
}

#[derive(Clone, Debug)]
struct TrainItem {
    label: usize,
    frames: Vec<f32>,
}

/// Activity frames of the training videos, held in memory.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    items: Vec<TrainItem>,
    by_class: Vec<Vec<usize>>,
    dim: usize,
    num_classes: usize,
}

impl TrainingSet {
    /// `indices` point into `manifest.videos`; distractors are rejected.
    pub fn build(
        manifest: &Manifest,
        store: &FeatureStore,
        indices: &[usize],
        max_frames: Option<usize>,
    ) -> Result<Self> {
        let k = manifest.num_classes();
        let mut items = Vec::with_capacity(indices.len());
        let mut by_class = vec![Vec::new(); k];
        for &i in indices {
            let rec = manifest
                .videos
                .get(i)
                .ok_or_else(|| Error::Sampling(format!("video index {i} out of range")))?;
            let label = rec
                .class
                .class()
                .ok_or_else(|| Error::Sampling(format!("distractor {} cannot be a training video", rec.id)))?;
            let seq = store.get(&rec.id)?;
            by_class[label].push(items.len());
            items.push(TrainItem {
                label,
                frames: activity_frames(rec, seq, max_frames)?,
            });
        }
        if items.is_empty() {
            return Err(Error::Sampling("empty training set".into()));
        }
        Ok(Self {
            items,
            by_class,
            dim: store.dim(),
            num_classes: k,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|i| i.label)
    }

    pub fn frames(&self, i: usize) -> &[f32] {
        &self.items[i].frames
    }

    fn pick_in_class(&self, rng: &mut EngineRng, class: usize, avoid: Option<usize>) -> usize {
        let members = &self.by_class[class];
        if members.len() < 2 || avoid.is_none() {
            return members[rng.random_range(0..members.len())];
        }
        let avoid = avoid.unwrap();
        loop {
            let c = members[rng.random_range(0..members.len())];
            if c != avoid {
                return c;
            }
        }
    }
}

/// Final parameters, bank and per-iteration losses of a run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub bank: VisualBank,
    pub curve: Vec<LossBreakdown>,
    pub model_config: ModelConfig,
    pub config: TrainConfig,
}

enum Batch {
    Plain(Vec<usize>),
    Triplets(Vec<[usize; 3]>),
}

impl Batch {
    fn members(&self) -> Vec<usize> {
        match self {
            Batch::Plain(v) => v.clone(),
            Batch::Triplets(t) => t.iter().flatten().copied().collect(),
        }
    }
}

fn sample_batch(set: &TrainingSet, cfg: &TrainConfig, rng: &mut EngineRng) -> Result<Batch> {
    let n = set.len();
    match cfg.objective {
        Objective::Full | Objective::Baseline => Ok(Batch::Plain(
            (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect(),
        )),
        Objective::Triplet => {
            let classes: Vec<usize> = (0..set.num_classes).filter(|&c| !set.by_class[c].is_empty()).collect();
            if classes.len() < 2 {
                return Err(Error::Sampling("triplets need two classes with training videos".into()));
            }
            // One triplet costs three videos; keep the per-iteration video count.
            let count = (cfg.batch_size / 3).max(1);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let a = classes[rng.random_range(0..classes.len())];
                let b = loop {
                    let b = classes[rng.random_range(0..classes.len())];
                    if b != a {
                        break b;
                    }
                };
                let anchor = set.pick_in_class(rng, a, None);
                let positive = set.pick_in_class(rng, a, Some(anchor));
                let negative = set.pick_in_class(rng, b, None);
                out.push([anchor, positive, negative]);
            }
            Ok(Batch::Triplets(out))
        }
        Objective::Margin => {
            let anchors = (cfg.batch_size / 2).max(1);
            let mut out = Vec::with_capacity(2 * anchors);
            for _ in 0..anchors {
                let a = rng.random_range(0..n);
                out.push(a);
                out.push(set.pick_in_class(rng, set.items[a].label, Some(a)));
            }
            Ok(Batch::Plain(out))
        }
    }
}

/// Runs the optimization loop.
///
/// Per iteration: sample a batch, accumulate gradients of the objective, take one
/// Adam step, then fold each batch item's post-step embedding into the visual bank.
pub fn train(set: &TrainingSet, semantic: Option<&SemanticBank>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (lambda_v, lambda_s) = cfg.effective_lambdas();
    if lambda_s > 0.0 && semantic.is_none() {
        return Err(Error::Config(
            "lambda_s > 0 needs a semantic bank (pass one or set lambda_s = 0)".into(),
        ));
    }
    if let Some(s) = semantic {
        if s.num_classes() != set.num_classes() {
            return Err(Error::dim(format!(
                "semantic bank has {} rows for {} classes",
                s.num_classes(),
                set.num_classes()
            )));
        }
    }
    let model_config = cfg.model_config(set.dim(), set.num_classes(), semantic.map(|s| s.dim()));
    let mut model = Model::<f32>::new(&model_config, cfg.seed, cfg.margin_beta)?;
    let mut bank = VisualBank::<f32>::new(set.num_classes(), cfg.embed_dim, cfg.alpha)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let weights = LossWeights {
        lambda_v,
        lambda_s,
        tau: cfg.tau,
    };
    let mut rng = stream_rng(cfg.seed, "train/batches");
    let mut curve = Vec::with_capacity(cfg.iterations as usize);
    for it in 0..cfg.iterations {
        let batch = sample_batch(set, cfg, &mut rng)?;
        model.zero_grad();
        let loss = match &batch {
            Batch::Plain(idx) if cfg.objective == Objective::Margin => {
                let items: Vec<(&[f32], usize)> = idx.iter().map(|&i| (set.frames(i), set.items[i].label)).collect();
                margin_batch_loss(&mut model, &items, cfg.margin, it)?
            }
            Batch::Plain(idx) => {
                let items: Vec<(&[f32], usize)> = idx.iter().map(|&i| (set.frames(i), set.items[i].label)).collect();
                total_loss(&mut model, &items, &bank, semantic, weights, it)?
            }
            Batch::Triplets(ts) => {
                let items: Vec<[&[f32]; 3]> = ts
                    .iter()
                    .map(|t| [set.frames(t[0]), set.frames(t[1]), set.frames(t[2])])
                    .collect();
                triplet_batch_loss(&mut model, &items, cfg.triplet_margin, it)?
            }
        };
        adam.set_lr(cfg.lr_at(it));
        adam_step(&mut model.parameters_mut(), &mut adam).map_err(|e| Error::Training {
            iteration: it,
            message: e.to_string(),
        })?;

        let members = batch.members();
        for &i in &members {
            let z = model.embed(set.frames(i))?;
            bank.update(set.items[i].label, &z).map_err(|e| Error::Training {
                iteration: it,
                message: e.to_string(),
            })?;
        }
        curve.push(loss);
    }
    model.zero_grad();
    Ok(TrainOutcome {
        model,
        bank,
        curve,
        model_config,
        config: cfg.clone(),
    })
}

/// CSV with header `iter,total,cls,visual,semantic`.
pub fn loss_curve_csv(curve: &[LossBreakdown]) -> String {
    let mut s = String::from("iter,total,cls,visual,semantic\n");
    for (i, b) in curve.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{}", b.total, b.cls, b.visual, b.semantic);
    }
    s
}

pub fn write_loss_curve(curve: &[LossBreakdown], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_curve_csv(curve)).map_err(|e| Error::io(path, e))
}

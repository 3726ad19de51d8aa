//! Desk-scale imbalanced benchmark.
//!
//! Each class is an isotropic Gaussian cluster around a unit-norm center drawn
//! uniformly on the sphere (pairs closer than `min_angle_deg` are rejected). A
//! video's activity frames are `center + spread·(u + jitter·ε_t)` with a per-video
//! offset `u` and per-frame noise `ε_t`, both of unit expected norm. Frames outside
//! the activity interval, and every frame of a distractor, come from a broad
//! background distribution that has no class structure.
//!
//! The semantic bank stands in for word embeddings: each class vector is a fixed
//! random linear projection of its center plus noise, so nearby classes get nearby
//! vectors the same way related activity names do.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassInfo, ClassRef, Manifest, Split, Tier, VideoRecord, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::features::{write_features, write_semantic_file, FeatureSequence, FeatureStore, SemanticFile};
use crate::numerics::rng::{indexed_rng, stream_rng, EngineRng};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_base: usize,
    pub n_novel: usize,
    /// Frame-feature width D.
    pub dim: usize,
    pub train_per_base: usize,
    /// Training pool per novel class; the few-shot sampler draws from it.
    pub train_per_novel: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub distractors: usize,
    /// Norm of the per-video offset from the class center.
    pub spread: f64,
    /// Per-frame noise relative to `spread`.
    pub frame_jitter: f64,
    pub min_angle_deg: f64,
    pub fps: f32,
    pub duration_s: [f64; 2],
    /// Activity length as a fraction of the video duration.
    pub activity_fraction: [f64; 2],
    /// Norm of background frames.
    pub background_scale: f64,
    /// Semantic-bank width W; 0 skips the bank.
    pub semantic_dim: usize,
    pub semantic_noise: f64,
    /// Level-2 taxonomy size; 0 disables taxonomy fields.
    pub n_parents: usize,
    /// Level-1 taxonomy size.
    pub n_grandparents: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_base: 20,
            n_novel: 20,
            dim: 64,
            train_per_base: 60,
            train_per_novel: 5,
            val_per_class: 0,
            test_per_class: 12,
            distractors: 40,
            spread: 1.5,
            frame_jitter: 1.0,
            min_angle_deg: 60.0,
            fps: 3.0,
            duration_s: [6.0, 14.0],
            activity_fraction: [0.5, 0.9],
            background_scale: 1.0,
            semantic_dim: 32,
            semantic_noise: 0.2,
            n_parents: 8,
            n_grandparents: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Parameter(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.n_base + self.n_novel < 1 || self.n_base < 1 {
            return Err(Error::Parameter("need at least one base class".into()));
        }
        if self.train_per_base < 1 || (self.n_novel > 0 && self.train_per_novel < 1) {
            return Err(Error::Parameter("per-class training counts must be >= 1".into()));
        }
        if self.test_per_class < 1 {
            return Err(Error::Parameter("test_per_class must be >= 1".into()));
        }
        if !(self.spread >= 0.0) || !(self.frame_jitter >= 0.0) || !(self.background_scale > 0.0) {
            return Err(Error::Parameter("noise scales must be non-negative".into()));
        }
        let [dlo, dhi] = self.duration_s;
        let [flo, fhi] = self.activity_fraction;
        if !(dlo > 0.0 && dhi >= dlo) || !(flo > 0.0 && fhi >= flo && fhi <= 1.0) {
            return Err(Error::Parameter("bad duration or activity fraction range".into()));
        }
        if !(self.fps > 0.0) || (dlo * flo * self.fps as f64) < 1.0 {
            return Err(Error::Parameter(
                "shortest possible activity must span at least one frame".into(),
            ));
        }
        if self.n_parents > 0 && self.n_grandparents == 0 {
            return Err(Error::Parameter("taxonomy needs n_grandparents >= 1".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.n_base + self.n_novel
    }
}

/// Generated manifest with its features and semantic bank, held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub features: FeatureStore,
    pub semantic: Option<SemanticFile>,
    /// Unit-norm class centers, `K × D`.
    pub centers: Tensor<f32>,
}

fn gaussian(rng: &mut EngineRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn class_centers(cfg: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream_rng(cfg.seed, "synth/centers");
    let max_cos = cfg.min_angle_deg.to_radians().cos();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes());
    for c in 0..cfg.num_classes() {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Parameter(format!(
                    "cannot place class {c} at least {}° from the others in D={}",
                    cfg.min_angle_deg, cfg.dim
                )));
            }
            let cand = unit(gaussian(&mut rng, cfg.dim, 1.0));
            let ok = centers.iter().all(|o| {
                let cos: f64 = o.iter().zip(&cand).map(|(a, b)| a * b).sum();
                cos <= max_cos
            });
            if ok {
                centers.push(cand);
                break;
            }
        }
    }
    Ok(centers)
}

struct VideoPlan {
    id: String,
    class: ClassRef,
    split: Split,
}

fn plan(cfg: &SynthConfig) -> Vec<VideoPlan> {
    let mut out = Vec::new();
    for c in 0..cfg.num_classes() {
        let train = if c < cfg.n_base {
            cfg.train_per_base
        } else {
            cfg.train_per_novel
        };
        for (split, n, tag) in [
            (Split::Train, train, "train"),
            (Split::Validation, cfg.val_per_class, "val"),
            (Split::Test, cfg.test_per_class, "test"),
        ] {
            for k in 0..n {
                out.push(VideoPlan {
                    id: format!("c{c:03}_{tag}_{k:03}"),
                    class: ClassRef::Class(c),
                    split,
                });
            }
        }
    }
    for k in 0..cfg.distractors {
        out.push(VideoPlan {
            id: format!("distractor_{k:03}"),
            class: ClassRef::Distractor,
            split: Split::Test,
        });
    }
    out
}

fn render_video(
    cfg: &SynthConfig,
    centers: &[Vec<f64>],
    plan: &VideoPlan,
    index: usize,
) -> Result<(VideoRecord, FeatureSequence)> {
    let mut rng = indexed_rng(cfg.seed, "synth/video", index as u64);
    let d = cfg.dim;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    // Millisecond times keep the manifest readable.
    let ms = |x: f64| (x * 1000.0).round() / 1000.0;
    let duration = ms(rng.random_range(cfg.duration_s[0]..=cfg.duration_s[1]));
    let frac = rng.random_range(cfg.activity_fraction[0]..=cfg.activity_fraction[1]);
    let act_len = duration * frac;
    let start = ms(rng.random_range(0.0..=(duration - act_len)));
    let end = ms(start + act_len).min(duration);
    let t = ((duration * cfg.fps as f64).floor() as usize).max(1);

    let offset = gaussian(&mut rng, d, cfg.spread * inv_sqrt_d);
    let bg_mean = gaussian(&mut rng, d, cfg.background_scale * inv_sqrt_d);
    let mut data = Vec::with_capacity(t * d);
    for i in 0..t {
        let ts = i as f64 / cfg.fps as f64;
        let active = matches!(plan.class, ClassRef::Class(_)) && ts >= start && ts < end;
        let noise = gaussian(&mut rng, d, inv_sqrt_d);
        match plan.class {
            ClassRef::Class(c) if active => {
                for j in 0..d {
                    let v = centers[c][j] + offset[j] + cfg.spread * cfg.frame_jitter * noise[j];
                    data.push(v as f32);
                }
            }
            _ => {
                for j in 0..d {
                    let v = bg_mean[j] + cfg.background_scale * noise[j];
                    data.push(v as f32);
                }
            }
        }
    }
    let activity = match plan.class {
        ClassRef::Class(_) => [start, end],
        ClassRef::Distractor => [0.0, duration],
    };
    let record = VideoRecord {
        id: plan.id.clone(),
        class: plan.class,
        split: plan.split,
        duration_s: duration,
        activity,
        feature_file: format!("features/{}.vsf", plan.id),
    };
    let seq = FeatureSequence::new(&plan.id, Tensor::matrix(t, d, data)?, cfg.fps, 0.0)?;
    Ok((record, seq))
}

fn semantic_bank(cfg: &SynthConfig, centers: &[Vec<f64>], names: &[String]) -> Option<SemanticFile> {
    if cfg.semantic_dim == 0 {
        return None;
    }
    let w = cfg.semantic_dim;
    let mut rng = stream_rng(cfg.seed, "synth/semantic");
    let proj = gaussian(&mut rng, w * cfg.dim, 1.0 / (w as f64).sqrt());
    let mut data = Vec::with_capacity(centers.len() * w);
    for c in centers {
        let noise = gaussian(&mut rng, w, cfg.semantic_noise / (w as f64).sqrt());
        for r in 0..w {
            let v: f64 = (0..cfg.dim).map(|j| proj[r * cfg.dim + j] * c[j]).sum::<f64>() + noise[r];
            data.push(v as f32);
        }
    }
    Some(SemanticFile {
        names: names.to_vec(),
        vectors: Tensor::from_parts(vec![centers.len(), w], data),
    })
}

/// Generates the dataset in memory.
pub fn synthesize(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let centers = class_centers(cfg)?;
    let names: Vec<String> = (0..cfg.num_classes()).map(|c| format!("class_{c:03}")).collect();
    let classes = (0..cfg.num_classes())
        .map(|c| ClassInfo {
            id: c,
            name: names[c].clone(),
            tier: if c < cfg.n_base { Tier::Base } else { Tier::Novel },
            parent: (cfg.n_parents > 0).then(|| c % cfg.n_parents),
            grandparent: (cfg.n_parents > 0).then(|| (c % cfg.n_parents) % cfg.n_grandparents),
        })
        .collect();
    let plans = plan(cfg);
    let mut videos = Vec::with_capacity(plans.len());
    let mut seqs = Vec::with_capacity(plans.len());
    for (i, p) in plans.iter().enumerate() {
        let (r, s) = render_video(cfg, &centers, p, i)?;
        videos.push(r);
        seqs.push(s);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        classes,
        videos,
    };
    manifest.validate()?;
    let semantic = semantic_bank(cfg, &centers, &names);
    let flat: Vec<f32> = centers.iter().flatten().map(|&v| v as f32).collect();
    Ok(SyntheticDataset {
        manifest,
        features: FeatureStore::from_sequences(seqs)?,
        semantic,
        centers: Tensor::from_parts(vec![cfg.num_classes(), cfg.dim], flat),
    })
}

/// Paths written by [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticPaths {
    pub manifest: PathBuf,
    pub features_root: PathBuf,
    pub semantic: Option<PathBuf>,
}

/// Generates the dataset and writes `manifest.json`, `features/*.vsf` and
/// `semantic.vsb` under `out_dir`.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<(SyntheticDataset, SyntheticPaths)> {
    let out = out_dir.as_ref();
    let ds = synthesize(cfg)?;
    std::fs::create_dir_all(out.join("features")).map_err(|e| Error::io(out, e))?;
    for v in &ds.manifest.videos {
        write_features(ds.features.get(&v.id)?, out.join(&v.feature_file))?;
    }
    let manifest_path = out.join("manifest.json");
    ds.manifest.save(&manifest_path)?;
    let semantic = match &ds.semantic {
        Some(s) => {
            let p = out.join("semantic.vsb");
            write_semantic_file(s, &p)?;
            Some(p)
        }
        None => None,
    };
    let paths = SyntheticPaths {
        manifest: manifest_path,
        features_root: out.to_path_buf(),
        semantic,
    };
    Ok((ds, paths))
}

//! Model parameters, the training objectives and the optimization loop.
//!
//! The main objective is the batch mean of
//! `−log p_A(y) − λ_V·log p_V(y) − λ_S·log p_S(y)`; the triplet and margin
//! objectives are the metric-learning baselines it is compared against.

mod checkpoint;
mod config;
mod loss;
mod run;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Objective, TrainConfig};
pub use loss::{margin_loss, total_loss, triplet_loss, LossBreakdown, LossWeights};
pub use run::{activity_frames, loss_curve_csv, select_frames, train, write_loss_curve, TrainOutcome, TrainingSet};

use crate::embedding::{Classifier, EmbeddingHead};
use crate::error::{Error, Result};
use crate::numerics::rng::stream_rng;
use crate::numerics::{HasParameters, Parameter, Real, Tensor};
use crate::semantic::SemanticMlp;
use crate::visual::GaParams;

/// Every trainable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f32> {
    pub head: EmbeddingHead<T>,
    pub classifier: Classifier<T>,
    pub ga: GaParams<T>,
    pub semantic: Option<SemanticMlp<T>>,
    /// Learnable boundary of the margin objective.
    pub beta: Parameter<T>,
}

impl<T: Real> Model<T> {
    /// Fresh initialization; each part draws from its own seeded stream.
    pub fn new(cfg: &ModelConfig, seed: u64, beta_init: f64) -> Result<Self> {
        cfg.validate()?;
        let head = EmbeddingHead::new(
            cfg.input_dim,
            &cfg.head_hidden,
            cfg.embed_dim,
            &mut stream_rng(seed, "model/embedding"),
        )?;
        let classifier = Classifier::new(
            cfg.num_classes,
            cfg.embed_dim,
            &mut stream_rng(seed, "model/classifier"),
        );
        let ga = GaParams::new(cfg.embed_dim, cfg.ga_dim, &mut stream_rng(seed, "model/ga"))?;
        let semantic = match cfg.semantic_dim {
            Some(w) => Some(SemanticMlp::new(
                cfg.embed_dim,
                &cfg.semantic_hidden,
                w,
                &mut stream_rng(seed, "model/semantic"),
            )?),
            None => None,
        };
        Ok(Self {
            head,
            classifier,
            ga,
            semantic,
            beta: Parameter::new("margin/beta", Tensor::vector(vec![T::lit(beta_init)])),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Video embedding `z` of a `T × D` frame block.
    pub fn embed(&self, frames: &[T]) -> Result<Vec<T>> {
        self.head.embed_frames(frames)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            head: self.head.cast(),
            classifier: self.classifier.cast(),
            ga: self.ga.cast(),
            semantic: self.semantic.as_ref().map(SemanticMlp::cast),
            beta: self.beta.cast(),
        }
    }

    /// Rebuilds a model from named tensors (the checkpoint layout).
    pub(crate) fn assign(&mut self, sections: &[(String, Tensor<T>)]) -> Result<()> {
        for p in self.parameters_mut() {
            let (_, t) = sections
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks section {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::dim(format!(
                    "section {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
            p.zero_grad();
        }
        Ok(())
    }
}

impl<T: Real> HasParameters<T> for Model<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out = self.head.mlp.parameters();
        out.push(&self.classifier.weight);
        out.extend(self.ga.parameters());
        if let Some(s) = &self.semantic {
            out.extend(s.parameters());
        }
        out.push(&self.beta);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = self.head.mlp.parameters_mut();
        out.push(&mut self.classifier.weight);
        out.extend(self.ga.parameters_mut());
        if let Some(s) = &mut self.semantic {
            out.extend(s.parameters_mut());
        }
        out.push(&mut self.beta);
        out
    }
}

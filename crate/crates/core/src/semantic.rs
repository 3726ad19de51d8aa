//! Frozen semantic bank of class-name embeddings and the MLP `g` that maps video
//! embeddings into that space.

use std::collections::HashMap;
use std::path::Path;

use crate::dataset::Manifest;
use crate::embedding::Mlp;
use crate::error::{Error, Result};
use crate::features::{read_semantic_file, SemanticFile};
use crate::numerics::ops::{distance_softmax, l2_normalize};
use crate::numerics::rng::EngineRng;
use crate::numerics::{Parameter, Real, Tensor};
use crate::visual::bank_distances;

/// Hidden widths of `g` at full scale.
pub const SEMANTIC_HIDDEN: [usize; 4] = [512, 640, 768, 896];

/// `K × W` matrix whose row `c` belongs to manifest class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticBank<T: Real = f32> {
    pub names: Vec<String>,
    pub rows: Tensor<T>,
}

impl<T: Real> SemanticBank<T> {
    pub fn num_classes(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn cast<U: Real>(&self) -> SemanticBank<U> {
        SemanticBank {
            names: self.names.clone(),
            rows: self.rows.cast(),
        }
    }
}

/// Reorders the rows of `file` into manifest class-id order.
///
/// With `normalize`, every row is scaled to unit norm.
pub fn align_semantic_bank(file: &SemanticFile, manifest: &Manifest, normalize: bool) -> Result<SemanticBank> {
    let by_name: HashMap<&str, usize> = file.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    if by_name.len() != file.names.len() {
        return Err(Error::Alignment("semantic bank repeats a class name".into()));
    }
    let wanted = manifest.class_names();
    let missing: Vec<&str> = wanted.iter().copied().filter(|n| !by_name.contains_key(n)).collect();
    if !missing.is_empty() {
        return Err(Error::Alignment(format!("missing class names: {}", missing.join(", "))));
    }
    let extra: Vec<&str> = file
        .names
        .iter()
        .map(String::as_str)
        .filter(|n| !wanted.contains(n))
        .collect();
    if !extra.is_empty() {
        return Err(Error::Alignment(format!(
            "names not in the manifest: {}",
            extra.join(", ")
        )));
    }
    let w = file.vectors.cols();
    let mut data = Vec::with_capacity(wanted.len() * w);
    for name in &wanted {
        let row = file.vectors.row(by_name[name]);
        if normalize {
            data.extend(
                l2_normalize(row)
                    .map_err(|e| Error::Alignment(format!("row for '{name}' cannot be normalized: {e}")))?,
            );
        } else {
            data.extend_from_slice(row);
        }
    }
    Ok(SemanticBank {
        names: wanted.iter().map(|s| s.to_string()).collect(),
        rows: Tensor::from_parts(vec![wanted.len(), w], data),
    })
}

/// Reads a VSB1 file and aligns it with the manifest.
pub fn load_semantic_bank(path: impl AsRef<Path>, manifest: &Manifest, normalize: bool) -> Result<SemanticBank> {
    align_semantic_bank(&read_semantic_file(path)?, manifest, normalize)
}

/// `g: ℝ^C → ℝ^W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMlp<T: Real = f32> {
    pub mlp: Mlp<T>,
}

impl<T: Real> SemanticMlp<T> {
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut EngineRng) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Ok(Self {
            mlp: Mlp::new("semantic_mlp", &widths, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.mlp.parameters()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.mlp.parameters_mut()
    }

    pub fn cast<U: Real>(&self) -> SemanticMlp<U> {
        SemanticMlp { mlp: self.mlp.cast() }
    }
}

/// `g(z)`.
pub fn semantic_map<T: Real>(z: &[T], g: &SemanticMlp<T>) -> Result<Vec<T>> {
    g.mlp.forward(z, 1)
}

/// `p_S(c) ∝ exp(−‖g(z) − S_c‖/τ)`, normalized over all classes.
pub fn semantic_probs<T: Real>(gz: &[T], bank: &SemanticBank<T>, tau: T) -> Result<Vec<T>> {
    distance_softmax(&bank_distances(gz, &bank.rows)?, tau)
}

//! Embedding head `f`, the video embedding `z = mean_t f(x_t)` and the linear
//! classifier over `z`.
//!
//! Layers work on row-major batches: an `n × in` input block times an `in × out`
//! weight plus a bias row. Caches hold exactly what the backward pass needs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{average_pool, FeatureSequence};
use crate::numerics::ops::{gemm_acc, gemm_nt_acc, gemm_tn_acc, relu_backward_in_place, relu_in_place, softmax};
use crate::numerics::rng::EngineRng;
use crate::numerics::{Parameter, Real, Tensor};

/// He-uniform sample `U(−√(6/fan_in), √(6/fan_in))`.
pub(crate) fn fan_in_uniform<T: Real>(rng: &mut EngineRng, fan_in: usize, n: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
}

/// Affine map `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real = f32> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut EngineRng) -> Self {
        let w = fan_in_uniform(rng, input, input * output);
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::from_parts(vec![input, output], w)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let out_dim = self.output_dim();
        let mut y = Vec::with_capacity(n * out_dim);
        for _ in 0..n {
            y.extend_from_slice(self.bias.value.data());
        }
        gemm_acc(x, self.weight.value.data(), &mut y, n, self.input_dim(), out_dim);
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &[T], n: usize, grad_y: &[T], want_input_grad: bool) -> Option<Vec<T>> {
        let (i, o) = (self.input_dim(), self.output_dim());
        gemm_tn_acc(x, grad_y, self.weight.grad.data_mut(), n, i, o);
        let gb = self.bias.grad.data_mut();
        for row in grad_y.chunks_exact(o) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g = *g + v;
            }
        }
        want_input_grad.then(|| {
            let mut gx = vec![T::zero(); n * i];
            gemm_nt_acc(grad_y, self.weight.value.data(), &mut gx, n, o, i);
            gx
        })
    }

    fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Stack of linear layers with a rectifier between consecutive layers (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Real = f32> {
    pub layers: Vec<Linear<T>>,
}

/// Per-layer inputs saved by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    inputs: Vec<Vec<T>>,
    n: usize,
}

impl<T: Real> Mlp<T> {
    /// `widths = [in, h1, …, out]`; layer `i` is named `{prefix}/{i}`.
    pub fn new(prefix: &str, widths: &[usize], rng: &mut EngineRng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Parameter(format!("bad layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}/{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.output_dim()));
        w
    }

    fn check_input(&self, x: &[T], n: usize) -> Result<()> {
        if x.len() != n * self.input_dim() {
            return Err(Error::dim(format!(
                "expected {n} rows of width {}, got {} values",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        self.check_input(x, n)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h, n);
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: Vec<T>, n: usize) -> Result<(Vec<T>, MlpCache<T>)> {
        self.check_input(&x, n)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h, n);
            if i < last {
                relu_in_place(&mut y);
            }
            inputs.push(h);
            h = y;
        }
        Ok((h, MlpCache { inputs, n }))
    }

    /// Backpropagates `grad_out`; returns the gradient on the input if requested.
    pub fn backward(&mut self, cache: &MlpCache<T>, grad_out: Vec<T>, want_input_grad: bool) -> Option<Vec<T>> {
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let need = i > 0 || want_input_grad;
            let gx = self.layers[i].backward(&cache.inputs[i], cache.n, &g, need);
            match gx {
                Some(mut gx) if i > 0 => {
                    relu_backward_in_place(&cache.inputs[i], &mut gx);
                    g = gx;
                }
                other => return other,
            }
        }
        None
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(Linear::cast).collect(),
        }
    }
}

/// Frame-level embedding function `f: ℝ^D → ℝ^C`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingHead<T: Real = f32> {
    pub mlp: Mlp<T>,
}

impl<T: Real> EmbeddingHead<T> {
    /// `hidden` lists the widths between input `D` and output `C`.
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut EngineRng) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Ok(Self {
            mlp: Mlp::new("embedding", &widths, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// `z = (1/T) Σ_t f(x_t)` over a `T × D` block.
    pub fn embed_frames(&self, frames: &[T]) -> Result<Vec<T>> {
        let d = self.input_dim();
        if frames.is_empty() || !frames.len().is_multiple_of(d) {
            return Err(Error::dim(format!(
                "{} values do not form frames of width {d}",
                frames.len()
            )));
        }
        let fx = self.mlp.forward(frames, frames.len() / d)?;
        average_pool(&fx, self.output_dim())
    }

    /// Embeds every item of a batch of frame blocks; rows of the result are the `z`s.
    pub fn embed_batch(&self, items: &[&[T]]) -> Result<(Vec<T>, HeadCache<T>)> {
        let d = self.input_dim();
        let mut lengths = Vec::with_capacity(items.len());
        let mut x = Vec::with_capacity(items.iter().map(|f| f.len()).sum());
        for (i, f) in items.iter().enumerate() {
            if f.is_empty() || f.len() % d != 0 {
                return Err(Error::dim(format!(
                    "batch item {i}: {} values do not form frames of width {d}",
                    f.len()
                )));
            }
            lengths.push(f.len() / d);
            x.extend_from_slice(f);
        }
        let total: usize = lengths.iter().sum();
        let (fx, mlp) = self.mlp.forward_cached(x, total)?;
        let c = self.output_dim();
        let mut z = Vec::with_capacity(items.len() * c);
        let mut offset = 0;
        for &t in &lengths {
            z.extend(average_pool(&fx[offset * c..(offset + t) * c], c)?);
            offset += t;
        }
        Ok((z, HeadCache { lengths, mlp }))
    }

    /// Accumulates head gradients from the gradient on the batch of `z`s.
    pub fn backward_batch(&mut self, cache: &HeadCache<T>, grad_z: &[T]) {
        let c = self.output_dim();
        let total: usize = cache.lengths.iter().sum();
        let mut g = Vec::with_capacity(total * c);
        for (row, &t) in grad_z.chunks_exact(c).zip(&cache.lengths) {
            let inv = T::one() / T::lit(t as f64);
            let scaled: Vec<T> = row.iter().map(|&v| v * inv).collect();
            for _ in 0..t {
                g.extend_from_slice(&scaled);
            }
        }
        self.mlp.backward(&cache.mlp, g, false);
    }

    pub fn cast<U: Real>(&self) -> EmbeddingHead<U> {
        EmbeddingHead { mlp: self.mlp.cast() }
    }
}

/// Saved activations of [`EmbeddingHead::embed_batch`].
#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    lengths: Vec<usize>,
    mlp: MlpCache<T>,
}

/// Embedding of a whole feature sequence.
pub fn embed_video(seq: &FeatureSequence, head: &EmbeddingHead<f32>) -> Result<Vec<f32>> {
    if seq.dim() != head.input_dim() {
        return Err(Error::dim(format!(
            "video {} has D={} but the head expects {}",
            seq.video_id,
            seq.dim(),
            head.input_dim()
        )));
    }
    head.embed_frames(seq.frames.data())
}

/// Bias-free linear classifier, logits `s_c = W_c·z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Real = f32> {
    /// `K × C`.
    pub weight: Parameter<T>,
}

impl<T: Real> Classifier<T> {
    pub fn new(classes: usize, dim: usize, rng: &mut EngineRng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let w = (0..classes * dim)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self {
            weight: Parameter::new("classifier/weight", Tensor::from_parts(vec![classes, dim], w)),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// Logits for `n` stacked embeddings.
    pub fn logits(&self, z: &[T], n: usize) -> Vec<T> {
        let (k, c) = (self.num_classes(), self.dim());
        let mut out = vec![T::zero(); n * k];
        gemm_nt_acc(z, self.weight.value.data(), &mut out, n, c, k);
        out
    }

    /// Accumulates the weight gradient and returns the gradient on `z`.
    pub fn backward(&mut self, z: &[T], n: usize, grad_logits: &[T]) -> Vec<T> {
        let (k, c) = (self.num_classes(), self.dim());
        gemm_tn_acc(grad_logits, z, self.weight.grad.data_mut(), n, k, c);
        let mut gz = vec![T::zero(); n * c];
        gemm_acc(grad_logits, self.weight.value.data(), &mut gz, n, k, c);
        gz
    }

    pub fn cast<U: Real>(&self) -> Classifier<U> {
        Classifier {
            weight: self.weight.cast(),
        }
    }
}

/// Class posterior `p_A = softmax(W·z)`.
pub fn classify<T: Real>(z: &[T], classifier: &Classifier<T>) -> Result<Vec<T>> {
    if z.len() != classifier.dim() {
        return Err(Error::dim(format!(
            "embedding of width {} against a classifier of width {}",
            z.len(),
            classifier.dim()
        )));
    }
    Ok(softmax(&classifier.logits(z, 1)))
}

//! Visual bank of per-class prototypes, the global alignment operator and the
//! visual alignment probability.
//!
//! The bank is a moving average of normalized embeddings, not a learned parameter:
//! no gradient ever reaches it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::{
    distance_softmax, euclidean_unchecked, gemm_acc, gemm_nt_acc, gemm_tn_acc, norm, softmax_backward, softmax_in_place,
};
use crate::numerics::rng::EngineRng;
use crate::numerics::{Parameter, Real, Tensor, NORM_EPS};

/// `K × C` prototype matrix, zero until a class is first seen.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualBank<T: Real = f32> {
    pub rows: Tensor<T>,
    pub alpha: f64,
}

impl<T: Real> VisualBank<T> {
    pub fn new(classes: usize, dim: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if classes == 0 || dim == 0 {
            return Err(Error::Parameter("bank needs at least one class and one column".into()));
        }
        Ok(Self {
            rows: Tensor::zeros(&[classes, dim]),
            alpha,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, c: usize) -> &[T] {
        self.rows.row(c)
    }

    pub fn is_updated(&self, c: usize) -> bool {
        self.rows.row(c).iter().any(|&v| v != T::zero())
    }

    /// True while some class has never been updated.
    pub fn in_warmup(&self) -> bool {
        (0..self.num_classes()).any(|c| !self.is_updated(c))
    }

    /// `V_y ← α·z/‖z‖ + (1−α)·V_y`, then `V_y ← V_y/‖V_y‖`.
    pub fn update(&mut self, y: usize, z: &[T]) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::Parameter(format!(
                "class {y} out of range for a bank of {}",
                self.num_classes()
            )));
        }
        if z.len() != self.dim() {
            return Err(Error::dim(format!(
                "bank width {} vs embedding width {}",
                self.dim(),
                z.len()
            )));
        }
        let zn = norm(z);
        if !(zn.as_f64() > NORM_EPS) {
            return Err(Error::Degenerate(format!(
                "bank update for class {y} with an embedding of norm {}",
                zn.as_f64()
            )));
        }
        let a = T::lit(self.alpha);
        let keep = T::one() - a;
        let row = self.rows.row_mut(y);
        for (v, &zi) in row.iter_mut().zip(z) {
            *v = a * (zi / zn) + keep * *v;
        }
        let rn = norm(row);
        if !(rn.as_f64() > NORM_EPS) {
            return Err(Error::Degenerate(format!(
                "bank row {y} cancelled to zero; the embedding opposed the prototype exactly"
            )));
        }
        row.iter_mut().for_each(|v| *v = *v / rn);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> VisualBank<U> {
        VisualBank {
            rows: self.rows.cast(),
            alpha: self.alpha,
        }
    }
}

/// Free-function form of [`VisualBank::update`].
pub fn bank_update<T: Real>(bank: &mut VisualBank<T>, y: usize, z: &[T]) -> Result<()> {
    bank.update(y, z)
}

/// Attention projections of the global alignment operator.
#[derive(Clone, Debug, PartialEq)]
pub struct GaParams<T: Real = f32> {
    /// `C × C′` each.
    pub w_q: Parameter<T>,
    pub w_k: Parameter<T>,
    pub w_v: Parameter<T>,
    /// `C′ × C`, zero at initialization so the operator starts as the identity.
    pub w_o: Parameter<T>,
}

impl<T: Real> GaParams<T> {
    pub fn new(dim: usize, inner: usize, rng: &mut EngineRng) -> Result<Self> {
        if dim == 0 || inner == 0 {
            return Err(Error::Parameter("attention widths must be positive".into()));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut proj = |name: &str| {
            let w = (0..dim * inner)
                .map(|_| T::lit(rng.random_range(-bound..bound)))
                .collect();
            Parameter::new(format!("ga_params/{name}"), Tensor::from_parts(vec![dim, inner], w))
        };
        let w_q = proj("w_q");
        let w_k = proj("w_k");
        let w_v = proj("w_v");
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o: Parameter::new("ga_params/w_o", Tensor::zeros(&[inner, dim])),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.value.shape()[0]
    }

    pub fn inner(&self) -> usize {
        self.w_q.value.shape()[1]
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }

    pub fn cast<U: Real>(&self) -> GaParams<U> {
        GaParams {
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_v: self.w_v.cast(),
            w_o: self.w_o.cast(),
        }
    }
}

/// Activations kept for [`global_align_backward`].
#[derive(Clone, Debug)]
pub struct GaCache<T> {
    n: usize,
    z: Vec<T>,
    q: Vec<T>,
    keys: Vec<T>,
    values: Vec<T>,
    attn: Vec<T>,
    mixed: Vec<T>,
    bank: Vec<T>,
}

/// `z* = z + softmax((z W_q)(V W_k)ᵀ/√C′) (V W_v) W_o` for `n` stacked embeddings.
pub fn global_align_batch<T: Real>(
    z: &[T],
    n: usize,
    bank: &VisualBank<T>,
    ga: &GaParams<T>,
) -> Result<(Vec<T>, GaCache<T>)> {
    let (c, ci, k) = (ga.dim(), ga.inner(), bank.num_classes());
    if bank.dim() != c || z.len() != n * c {
        return Err(Error::dim(format!(
            "alignment of {n}×{c} embeddings against a {k}×{} bank",
            bank.dim()
        )));
    }
    let v = bank.rows.data();
    let mut q = vec![T::zero(); n * ci];
    gemm_acc(z, ga.w_q.value.data(), &mut q, n, c, ci);
    let mut keys = vec![T::zero(); k * ci];
    gemm_acc(v, ga.w_k.value.data(), &mut keys, k, c, ci);
    let mut values = vec![T::zero(); k * ci];
    gemm_acc(v, ga.w_v.value.data(), &mut values, k, c, ci);

    let mut attn = vec![T::zero(); n * k];
    gemm_nt_acc(&q, &keys, &mut attn, n, ci, k);
    let scale = T::one() / T::lit(ci as f64).sqrt();
    for row in attn.chunks_exact_mut(k) {
        row.iter_mut().for_each(|s| *s = *s * scale);
        softmax_in_place(row);
    }
    let mut mixed = vec![T::zero(); n * ci];
    gemm_acc(&attn, &values, &mut mixed, n, k, ci);
    let mut out = z.to_vec();
    gemm_acc(&mixed, ga.w_o.value.data(), &mut out, n, ci, c);
    Ok((
        out,
        GaCache {
            n,
            z: z.to_vec(),
            q,
            keys,
            values,
            attn,
            mixed,
            bank: v.to_vec(),
        },
    ))
}

/// Single-embedding form of [`global_align_batch`].
pub fn global_align<T: Real>(z: &[T], bank: &VisualBank<T>, ga: &GaParams<T>) -> Result<Vec<T>> {
    Ok(global_align_batch(z, 1, bank, ga)?.0)
}

/// Accumulates projection gradients and returns the gradient on `z`.
pub fn global_align_backward<T: Real>(ga: &mut GaParams<T>, cache: &GaCache<T>, grad_out: &[T]) -> Vec<T> {
    let (c, ci) = (ga.dim(), ga.inner());
    let n = cache.n;
    let k = cache.keys.len() / ci;
    // Residual branch.
    let mut gz = grad_out.to_vec();

    gemm_tn_acc(&cache.mixed, grad_out, ga.w_o.grad.data_mut(), n, ci, c);
    let mut g_mixed = vec![T::zero(); n * ci];
    gemm_nt_acc(grad_out, ga.w_o.value.data(), &mut g_mixed, n, c, ci);

    let mut g_attn = vec![T::zero(); n * k];
    gemm_nt_acc(&g_mixed, &cache.values, &mut g_attn, n, ci, k);
    let mut g_values = vec![T::zero(); k * ci];
    gemm_tn_acc(&cache.attn, &g_mixed, &mut g_values, n, k, ci);
    gemm_tn_acc(&cache.bank, &g_values, ga.w_v.grad.data_mut(), k, c, ci);

    let scale = T::one() / T::lit(ci as f64).sqrt();
    let mut g_scores = Vec::with_capacity(n * k);
    for (p, g) in cache.attn.chunks_exact(k).zip(g_attn.chunks_exact(k)) {
        g_scores.extend(softmax_backward(p, g).into_iter().map(|v| v * scale));
    }
    let mut g_q = vec![T::zero(); n * ci];
    gemm_acc(&g_scores, &cache.keys, &mut g_q, n, k, ci);
    let mut g_keys = vec![T::zero(); k * ci];
    gemm_tn_acc(&g_scores, &cache.q, &mut g_keys, n, k, ci);
    gemm_tn_acc(&cache.bank, &g_keys, ga.w_k.grad.data_mut(), k, c, ci);

    gemm_tn_acc(&cache.z, &g_q, ga.w_q.grad.data_mut(), n, c, ci);
    gemm_nt_acc(&g_q, ga.w_q.value.data(), &mut gz, n, ci, c);
    gz
}

/// Euclidean distances from `z` to every bank row.
pub fn bank_distances<T: Real>(z: &[T], rows: &Tensor<T>) -> Result<Vec<T>> {
    if z.len() != rows.cols() {
        return Err(Error::dim(format!(
            "embedding width {} vs bank width {}",
            z.len(),
            rows.cols()
        )));
    }
    Ok((0..rows.rows()).map(|r| euclidean_unchecked(z, rows.row(r))).collect())
}

/// `p_V(c) ∝ exp(−‖z* − V_c‖/τ)`.
pub fn visual_probs<T: Real>(z_star: &[T], bank: &VisualBank<T>, tau: T) -> Result<Vec<T>> {
    distance_softmax(&bank_distances(z_star, &bank.rows)?, tau)
}

/// Mean pairwise Euclidean distance between the prototypes of `class_ids`.
pub fn scatteredness<T: Real>(bank: &VisualBank<T>, class_ids: &[usize]) -> Result<f64> {
    if class_ids.len() < 2 {
        return Err(Error::Diagnostic("scatteredness needs at least two classes".into()));
    }
    for &c in class_ids {
        if c >= bank.num_classes() {
            return Err(Error::Diagnostic(format!("class {c} is not in the bank")));
        }
        if !bank.is_updated(c) {
            return Err(Error::Diagnostic(format!("bank row {c} was never updated")));
        }
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in class_ids.iter().enumerate() {
        for &b in &class_ids[i + 1..] {
            total += euclidean_unchecked(bank.row(a), bank.row(b)).as_f64();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn first_update_normalizes_embedding() {
        let mut b = VisualBank::<f32>::new(3, 2, 0.9).unwrap();
        b.update(1, &[3.0, 4.0]).unwrap();
        assert_eq!(b.row(1), &[0.6, 0.8]);
        assert_eq!(b.row(0), &[0.0, 0.0]);
        assert!(b.in_warmup());
    }

    #[test]
    fn fixed_point_and_alpha_one() {
        let mut b = VisualBank::<f64>::new(1, 2, 0.5).unwrap();
        b.update(0, &[0.6, 0.8]).unwrap();
        b.update(0, &[1.2, 1.6]).unwrap();
        assert!((b.row(0)[0] - 0.6).abs() < 1e-15 && (b.row(0)[1] - 0.8).abs() < 1e-15);

        let mut b = VisualBank::<f64>::new(1, 2, 1.0).unwrap();
        b.update(0, &[1.0, 0.0]).unwrap();
        b.update(0, &[0.0, -2.0]).unwrap();
        assert_eq!(b.row(0), &[0.0, -1.0]);
    }

    #[test]
    fn degenerate_updates_fail() {
        let mut b = VisualBank::<f32>::new(2, 2, 0.9).unwrap();
        assert!(matches!(b.update(0, &[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(b.update(2, &[1.0, 0.0]).is_err());
        assert!(VisualBank::<f32>::new(2, 2, 0.0).is_err());
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let mut rng = stream_rng(1, "t");
        let ga = GaParams::<f32>::new(4, 2, &mut rng).unwrap();
        let mut bank = VisualBank::<f32>::new(3, 4, 0.9).unwrap();
        bank.update(0, &[1.0, 2.0, 0.0, 1.0]).unwrap();
        let z = [0.3, -1.0, 2.5, 0.0];
        assert_eq!(global_align(&z, &bank, &ga).unwrap(), z.to_vec());
    }

    #[test]
    fn single_row_bank_gets_full_attention() {
        let mut rng = stream_rng(2, "t");
        let ga = GaParams::<f64>::new(3, 2, &mut rng).unwrap();
        let mut bank = VisualBank::<f64>::new(1, 3, 0.9).unwrap();
        bank.update(0, &[1.0, 0.0, 1.0]).unwrap();
        let (_, cache) = global_align_batch(&[0.2, 0.1, -0.4], 1, &bank, &ga).unwrap();
        assert_eq!(cache.attn, vec![1.0]);
    }

    #[test]
    fn visual_probs_examples() {
        let mut bank = VisualBank::<f64>::new(3, 3, 1.0).unwrap();
        bank.update(0, &[1.0, 0.0, 0.0]).unwrap();
        bank.update(1, &[0.0, 1.0, 0.0]).unwrap();
        bank.update(2, &[0.0, 0.0, 1.0]).unwrap();
        let p = visual_probs(&[0.0, 1.0, 0.0], &bank, 0.1).unwrap();
        assert_eq!(p.iter().cloned().fold(0.0, f64::max), p[1]);

        let mut same = VisualBank::<f64>::new(4, 2, 1.0).unwrap();
        for c in 0..4 {
            same.update(c, &[1.0, 1.0]).unwrap();
        }
        let p = visual_probs(&[0.3, -2.0], &same, 1.0).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12));

        // Distances 0, 1, 2 along one axis.
        let mut line = VisualBank::<f64>::new(3, 1, 1.0).unwrap();
        line.rows = Tensor::from_parts(vec![3, 1], vec![0.0, 1.0, 2.0]);
        let p = visual_probs(&[0.0], &line, 1.0).unwrap();
        for (a, b) in p.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((a - b).abs() < 5e-6);
        }
        assert!(visual_probs(&[0.0], &line, 0.0).is_err());
    }

    #[test]
    fn scatteredness_examples() {
        let mut b = VisualBank::<f32>::new(3, 2, 1.0).unwrap();
        b.update(0, &[1.0, 0.0]).unwrap();
        b.update(1, &[0.0, 1.0]).unwrap();
        assert!((scatteredness(&b, &[0, 1]).unwrap() - 2f64.sqrt()).abs() < 1e-6);
        assert!(matches!(scatteredness(&b, &[0, 2]), Err(Error::Diagnostic(_))));
        b.update(2, &[2.0, 0.0]).unwrap();
        assert_eq!(scatteredness(&b, &[0, 2]).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn updates_touch_one_row_and_keep_unit_norm(
            ops in prop::collection::vec((0usize..5, prop::collection::vec(-3.0f32..3.0, 4)), 1..60),
            alpha in 0.05f64..=1.0,
        ) {
            let mut bank = VisualBank::<f32>::new(5, 4, alpha).unwrap();
            for (y, z) in ops {
                if norm(&z) < 1e-3 {
                    continue;
                }
                let before = bank.clone();
                if bank.update(y, &z).is_err() {
                    continue;
                }
                for c in 0..5 {
                    if c != y {
                        prop_assert_eq!(bank.row(c), before.row(c));
                    }
                }
                prop_assert!((norm(bank.row(y)) - 1.0).abs() < 1e-5);
            }
        }

        #[test]
        fn scatteredness_of_unit_rows_is_bounded(rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 2..8)) {
            let mut bank = VisualBank::<f32>::new(rows.len(), 3, 1.0).unwrap();
            let mut ids = Vec::new();
            for (c, r) in rows.iter().enumerate() {
                if bank.update(c, r).is_ok() {
                    ids.push(c);
                }
            }
            if ids.len() >= 2 {
                let s = scatteredness(&bank, &ids).unwrap();
                prop_assert!((0.0..=2.0 + 1e-6).contains(&s));
            }
        }
    }
}

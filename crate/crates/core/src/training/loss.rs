use serde::Serialize;

use super::Model;
use crate::error::{Error, Result};
use crate::numerics::ops::{
    distance_softmax, euclidean_backward, l2_normalize, l2_normalize_backward, nll_from_probs, softmax,
};
use crate::numerics::{Real, P_FLOOR};
use crate::semantic::SemanticBank;
use crate::visual::{bank_distances, global_align_backward, global_align_batch, VisualBank};

/// Per-iteration loss values, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub visual: f64,
    pub semantic: f64,
}

/// Weights and temperature of the main objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub tau: f64,
}

/// NLL of `label` under `probs` and its gradient on the logits that produced them.
///
/// Inside the clamp region the loss is constant, so the gradient is zero there.
fn nll_and_logit_grad<T: Real>(probs: &[T], label: usize, scale: T) -> Result<(T, Vec<T>)> {
    let loss = nll_from_probs(probs, label)?;
    let mut g = vec![T::zero(); probs.len()];
    if probs[label] > T::lit(P_FLOOR) {
        for (gi, &p) in g.iter_mut().zip(probs) {
            *gi = p * scale;
        }
        g[label] = g[label] - scale;
    }
    Ok((loss, g))
}

/// Loss of one distance-softmax head for every row of `x` (`n × w`), and `∂loss/∂x`.
fn distance_head<T: Real>(
    x: &[T],
    rows: &crate::numerics::Tensor<T>,
    labels: &[usize],
    tau: T,
    weight: T,
) -> Result<(f64, Vec<T>)> {
    let n = labels.len();
    let w = rows.cols();
    let scale = weight / T::lit(n as f64);
    let mut total = 0.0;
    let mut grad = vec![T::zero(); x.len()];
    for (i, &y) in labels.iter().enumerate() {
        let xi = &x[i * w..(i + 1) * w];
        let d = bank_distances(xi, rows)?;
        let p = distance_softmax(&d, tau)?;
        let (loss, g_logit) = nll_and_logit_grad(&p, y, scale)?;
        total += loss.as_f64();
        let gi = &mut grad[i * w..(i + 1) * w];
        for (c, &gl) in g_logit.iter().enumerate() {
            if gl == T::zero() {
                continue;
            }
            // logit_c = −d_c/τ
            let gd = -gl / tau;
            for (a, b) in gi.iter_mut().zip(euclidean_backward(xi, rows.row(c), d[c], gd)) {
                *a = *a + b;
            }
        }
    }
    Ok((total / n as f64, grad))
}

fn check_finite(b: &LossBreakdown, iteration: u64) -> Result<()> {
    if [b.total, b.cls, b.visual, b.semantic].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training {
            iteration,
            message: format!("non-finite loss {b:?}"),
        })
    }
}

/// Batch mean of `−log p_A − λ_V log p_V − λ_S log p_S`, accumulating gradients
/// into `model`.
///
/// The visual term is skipped (and reported as 0) while any bank row is still zero.
/// A zero lambda skips its head entirely.
pub fn total_loss<T: Real>(
    model: &mut Model<T>,
    batch: &[(&[T], usize)],
    bank: &VisualBank<T>,
    semantic: Option<&SemanticBank<T>>,
    weights: LossWeights,
    iteration: u64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Training {
            iteration,
            message: "empty batch".into(),
        });
    }
    let n = batch.len();
    let k = model.classifier.num_classes();
    let c = model.embed_dim();
    let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Training {
            iteration,
            message: format!("label {y} out of range for {k} classes"),
        });
    }
    let frames: Vec<&[T]> = batch.iter().map(|b| b.0).collect();
    let (z, head_cache) = model.head.embed_batch(&frames)?;

    let mut out = LossBreakdown::default();
    let logits = model.classifier.logits(&z, n);
    let inv_n = T::one() / T::lit(n as f64);
    let mut g_logits = Vec::with_capacity(n * k);
    let mut cls = 0.0;
    for (row, &y) in logits.chunks_exact(k).zip(&labels) {
        let (loss, g) = nll_and_logit_grad(&softmax(row), y, inv_n)?;
        cls += loss.as_f64();
        g_logits.extend(g);
    }
    out.cls = cls / n as f64;
    let mut gz = model.classifier.backward(&z, n, &g_logits);

    let tau = T::lit(weights.tau);
    if weights.lambda_v > 0.0 && !bank.in_warmup() {
        let (z_star, ga_cache) = global_align_batch(&z, n, bank, &model.ga)?;
        let (loss, g_star) = distance_head(&z_star, &bank.rows, &labels, tau, T::lit(weights.lambda_v))?;
        out.visual = loss;
        let g = global_align_backward(&mut model.ga, &ga_cache, &g_star);
        gz.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
    }

    if weights.lambda_s > 0.0 {
        let (bank_s, mlp) = match (semantic, model.semantic.as_mut()) {
            (Some(b), Some(m)) => (b, m),
            _ => {
                return Err(Error::Config(
                    "semantic alignment needs both a semantic bank and a semantic MLP".into(),
                ))
            }
        };
        if bank_s.num_classes() != k || bank_s.dim() != mlp.output_dim() {
            return Err(Error::dim(format!(
                "semantic bank {}×{} vs {k} classes and MLP width {}",
                bank_s.num_classes(),
                bank_s.dim(),
                mlp.output_dim()
            )));
        }
        let (gzs, cache) = mlp.mlp.forward_cached(z.clone(), n)?;
        let (loss, g_out) = distance_head(&gzs, &bank_s.rows, &labels, tau, T::lit(weights.lambda_s))?;
        out.semantic = loss;
        let g = mlp.mlp.backward(&cache, g_out, true).expect("input gradient requested");
        gz.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
    }
    debug_assert_eq!(gz.len(), n * c);
    model.head.backward_batch(&head_cache, &gz);

    out.total = out.cls + weights.lambda_v * out.visual + weights.lambda_s * out.semantic;
    check_finite(&out, iteration)?;
    Ok(out)
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)`.
pub fn triplet_loss<T: Real>(anchor: &[T], positive: &[T], negative: &[T], margin: T) -> Result<T> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::dim("triplet members differ in width"));
    }
    let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
    Ok((sq(anchor, positive) - sq(anchor, negative) + margin).max(T::zero()))
}

/// Mean of `max(0, margin + y·(d − β))` over pairs, `y = +1` for same-class pairs.
pub fn margin_loss<T: Real>(dists: &[T], same_class: &[bool], margin: T, beta: T) -> Result<T> {
    if dists.len() != same_class.len() || dists.is_empty() {
        return Err(Error::dim("margin loss needs one label per distance"));
    }
    let total: T = dists
        .iter()
        .zip(same_class)
        .map(|(&d, &s)| {
            let y = if s { T::one() } else { -T::one() };
            (margin + y * (d - beta)).max(T::zero())
        })
        .sum();
    Ok(total / T::lit(dists.len() as f64))
}

fn normalized_rows<T: Real>(z: &[T], c: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks_exact(c) {
        out.extend(l2_normalize(row)?);
    }
    Ok(out)
}

fn normalize_backward_rows<T: Real>(z: &[T], g: &[T], c: usize) -> Vec<T> {
    z.chunks_exact(c)
        .zip(g.chunks_exact(c))
        .flat_map(|(zi, gi)| l2_normalize_backward(zi, gi))
        .collect()
}

/// Triplet objective on normalized embeddings; each entry is `[anchor, positive, negative]`.
pub(crate) fn triplet_batch_loss<T: Real>(
    model: &mut Model<T>,
    triplets: &[[&[T]; 3]],
    margin: f64,
    iteration: u64,
) -> Result<LossBreakdown> {
    let frames: Vec<&[T]> = triplets.iter().flatten().copied().collect();
    let c = model.embed_dim();
    let (z, cache) = model.head.embed_batch(&frames)?;
    let u = normalized_rows(&z, c)?;
    let m = T::lit(margin);
    let scale = T::one() / T::lit(triplets.len() as f64);
    let mut gu = vec![T::zero(); u.len()];
    let mut total = 0.0;
    for t in 0..triplets.len() {
        let row = |j: usize| &u[(3 * t + j) * c..(3 * t + j + 1) * c];
        let (a, p, n) = (row(0), row(1), row(2));
        let loss = triplet_loss(a, p, n, m)?;
        total += loss.as_f64();
        if loss > T::zero() {
            let two = T::lit(2.0) * scale;
            for j in 0..c {
                let ga = two * ((a[j] - p[j]) - (a[j] - n[j]));
                let gp = -two * (a[j] - p[j]);
                let gn = two * (a[j] - n[j]);
                gu[3 * t * c + j] = gu[3 * t * c + j] + ga;
                gu[(3 * t + 1) * c + j] = gu[(3 * t + 1) * c + j] + gp;
                gu[(3 * t + 2) * c + j] = gu[(3 * t + 2) * c + j] + gn;
            }
        }
    }
    let gz = normalize_backward_rows(&z, &gu, c);
    model.head.backward_batch(&cache, &gz);
    let mean = total / triplets.len() as f64;
    let out = LossBreakdown {
        total: mean,
        cls: mean,
        ..LossBreakdown::default()
    };
    check_finite(&out, iteration)?;
    Ok(out)
}

/// Margin objective over every pair of the batch, on normalized embeddings.
pub(crate) fn margin_batch_loss<T: Real>(
    model: &mut Model<T>,
    items: &[(&[T], usize)],
    margin: f64,
    iteration: u64,
) -> Result<LossBreakdown> {
    let n = items.len();
    if n < 2 {
        return Err(Error::Training {
            iteration,
            message: "margin objective needs at least two videos per batch".into(),
        });
    }
    let frames: Vec<&[T]> = items.iter().map(|i| i.0).collect();
    let c = model.embed_dim();
    let (z, cache) = model.head.embed_batch(&frames)?;
    let u = normalized_rows(&z, c)?;
    let beta = model.beta.value.data()[0];
    let m = T::lit(margin);
    let pairs = n * (n - 1) / 2;
    let scale = T::one() / T::lit(pairs as f64);
    let mut gu = vec![T::zero(); u.len()];
    let mut g_beta = T::zero();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (ui, uj) = (&u[i * c..(i + 1) * c], &u[j * c..(j + 1) * c]);
            let d = crate::numerics::ops::euclidean_unchecked(ui, uj);
            let y = if items[i].1 == items[j].1 { T::one() } else { -T::one() };
            let loss = (m + y * (d - beta)).max(T::zero());
            total += loss.as_f64();
            if loss > T::zero() {
                g_beta = g_beta - y * scale;
                let g = euclidean_backward(ui, uj, d, y * scale);
                for k in 0..c {
                    gu[i * c + k] = gu[i * c + k] + g[k];
                    gu[j * c + k] = gu[j * c + k] - g[k];
                }
            }
        }
    }
    let gz = normalize_backward_rows(&z, &gu, c);
    model.head.backward_batch(&cache, &gz);
    let gb = model.beta.grad.data_mut();
    gb[0] = gb[0] + g_beta;
    let mean = total / pairs as f64;
    let out = LossBreakdown {
        total: mean,
        cls: mean,
        ..LossBreakdown::default()
    };
    check_finite(&out, iteration)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, HasParameters, Tensor};
    use crate::training::ModelConfig;
    use crate::visual::VisualBank;

    fn tiny_model(semantic: Option<usize>) -> Model<f64> {
        let cfg = ModelConfig {
            input_dim: 3,
            embed_dim: 4,
            head_hidden: vec![5],
            ga_dim: 2,
            semantic_hidden: vec![4, 5],
            semantic_dim: semantic,
            num_classes: 2,
        };
        let mut m = Model::<f64>::new(&cfg, 3, 1.2).unwrap();
        for p in m.parameters_mut() {
            if p.name.ends_with("bias") {
                p.value.data_mut().iter_mut().for_each(|b| *b = 0.25);
            }
            if p.name == "ga_params/w_o" {
                let n = p.value.len();
                for (i, v) in p.value.data_mut().iter_mut().enumerate() {
                    *v = ((i * 37 % n) as f64 / n as f64 - 0.5) * 0.8;
                }
            }
        }
        m
    }

    fn frames() -> Vec<Vec<f64>> {
        (0..3)
            .map(|v| (0..3 * (v + 1)).map(|i| ((i + 5 * v) as f64 * 0.61).sin()).collect())
            .collect()
    }

    fn full_bank(k: usize, c: usize) -> VisualBank<f64> {
        let mut b = VisualBank::new(k, c, 0.9).unwrap();
        for r in 0..k {
            let z: Vec<f64> = (0..c).map(|j| ((r * c + j) as f64 * 1.3).cos()).collect();
            b.update(r, &z).unwrap();
        }
        b
    }

    #[test]
    fn zero_lambdas_reduce_to_classification() {
        let mut m = tiny_model(None);
        let f = frames();
        let batch: Vec<(&[f64], usize)> = vec![(&f[0], 0), (&f[1], 1), (&f[2], 1)];
        let bank = full_bank(2, 4);
        let w = LossWeights {
            lambda_v: 0.0,
            lambda_s: 0.0,
            tau: 0.1,
        };
        let out = total_loss(&mut m, &batch, &bank, None, w, 0).unwrap();
        assert_eq!(out.total, out.cls);
        let mut expect = 0.0;
        for (x, y) in &batch {
            let z = m.embed(x).unwrap();
            expect += nll_from_probs(&crate::embedding::classify(&z, &m.classifier).unwrap(), *y).unwrap();
        }
        assert!((out.cls - expect / 3.0).abs() < 1e-12);
        // Untouched heads receive no gradient.
        assert!(m.ga.w_q.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_heads_give_three_ln_k() {
        let k = 10;
        let cfg = ModelConfig {
            input_dim: 2,
            embed_dim: 3,
            head_hidden: vec![],
            ga_dim: 2,
            semantic_hidden: vec![3],
            semantic_dim: Some(2),
            num_classes: k,
        };
        let mut m = Model::<f64>::new(&cfg, 0, 1.2).unwrap();
        m.classifier.weight.value.fill_zero();
        // One shared prototype and one shared semantic row make both alignments uniform.
        let mut bank = VisualBank::new(k, 3, 1.0).unwrap();
        for c in 0..k {
            bank.update(c, &[1.0, 0.0, 0.0]).unwrap();
        }
        let sem = SemanticBank {
            names: (0..k).map(|c| c.to_string()).collect(),
            rows: Tensor::from_parts(vec![k, 2], [0.6, 0.8].repeat(k)),
        };
        let x = [0.5, -0.5];
        let w = LossWeights {
            lambda_v: 1.0,
            lambda_s: 1.0,
            tau: 0.1,
        };
        let out = total_loss(&mut m, &[(&x, 3)], &bank, Some(&sem), w, 0).unwrap();
        assert!((out.total - 3.0 * (10f64).ln()).abs() < 1e-9, "{out:?}");
    }

    #[test]
    fn warmup_skips_visual_term() {
        let mut m = tiny_model(None);
        let f = frames();
        let mut bank = VisualBank::new(2, 4, 0.9).unwrap();
        bank.update(0, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let w = LossWeights {
            lambda_v: 1.0,
            lambda_s: 0.0,
            tau: 0.1,
        };
        let out = total_loss(&mut m, &[(&f[0], 0)], &bank, None, w, 0).unwrap();
        assert_eq!(out.visual, 0.0);
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let mut m = tiny_model(Some(3));
        let f = frames();
        let bank = full_bank(2, 4);
        let sem = SemanticBank {
            names: vec!["a".into(), "b".into()],
            rows: Tensor::from_parts(vec![2, 3], vec![0.6, 0.8, 0.0, 0.0, 0.6, -0.8]),
        };
        let w = LossWeights {
            lambda_v: 0.7,
            lambda_s: 1.3,
            tau: 0.5,
        };
        let report = grad_check(&mut m, 1e-6, |m: &mut Model<f64>| {
            let batch: Vec<(&[f64], usize)> = vec![(&f[0], 0), (&f[1], 1), (&f[2], 0)];
            let b = total_loss(m, &batch, &bank, Some(&sem), w, 0)?;
            Ok(b.total)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn triplet_examples() {
        let a = [1.0, 0.0];
        assert_eq!(triplet_loss(&a, &a, &[-1.0, 0.0], 0.2).unwrap(), 0.0);
        assert!(triplet_loss(&a, &[-1.0, 0.0], &a, 0.2).unwrap() > 0.0);
    }

    #[test]
    fn margin_examples() {
        assert!(margin_loss(&[1.0f64], &[true], 0.2, 1.2).unwrap().abs() < 1e-12);
        assert_eq!(margin_loss(&[5.0], &[false], 0.2, 1.2).unwrap(), 0.0);
        assert!(margin_loss(&[0.3, 2.0], &[false, true], 0.2, 1.2).unwrap() > 0.0);
    }

    #[test]
    fn baseline_objective_gradients_match_finite_differences() {
        let f = frames();
        let mut m = tiny_model(None);
        let report = grad_check(&mut m, 1e-6, |m: &mut Model<f64>| {
            Ok(triplet_batch_loss(m, &[[&f[0], &f[1], &f[2]]], 5.0, 0)?.total)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");

        let mut m = tiny_model(None);
        let report = grad_check(&mut m, 1e-6, |m: &mut Model<f64>| {
            let items: Vec<(&[f64], usize)> = vec![(&f[0], 0), (&f[1], 0), (&f[2], 1)];
            Ok(margin_batch_loss(m, &items, 3.0, 0)?.total)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    proptest::proptest! {
        #[test]
        fn margin_loss_is_non_negative(
            d in proptest::collection::vec(0.0f64..4.0, 1..10),
            beta in -2.0f64..3.0,
        ) {
            let labels: Vec<bool> = d.iter().map(|v| *v > 1.0).collect();
            proptest::prop_assert!(margin_loss(&d, &labels, 0.2, beta).unwrap() >= 0.0);
        }
    }
}

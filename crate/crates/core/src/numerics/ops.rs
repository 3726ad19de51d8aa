//! Forward and backward kernels for the handful of operations the heads need.
//!
//! Backward functions take the forward inputs (and outputs where cheaper) plus the
//! upstream gradient and return or accumulate the downstream gradient. There is no
//! tape; callers chain them by hand.

use rayon::prelude::*;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Vectors with a norm at or below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Lower clamp on probabilities inside the negative log-likelihood.
pub const P_FLOOR: f64 = 1e-12;

// Below this many multiply-adds a single thread wins.
const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m×n] += a[m×k] · b[k×n]`.
///
/// Every output element is reduced in ascending `k` order by exactly one thread,
/// so results are bitwise independent of the thread count.
pub fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[m×n] += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn gemm_tn_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, out_row): (usize, &mut [T])| {
        for r in 0..k {
            let ari = a[r * m + i];
            if ari == T::zero() {
                continue;
            }
            let b_row = &b[r * n..(r + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + ari * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[m×n] += a · bᵀ` where `a` is `m×k` and `b` is `n×k`.
pub fn gemm_nt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            *o = *o + acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

fn as_matrix<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        [c] => Ok((1, *c)),
        s => Err(Error::dim(format!("{what} must be a matrix, got shape {s:?}"))),
    }
}

/// Matrix product `a · b`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = as_matrix(a, "lhs")?;
    let (k2, n) = as_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::dim(format!("matmul inner dimensions {k} and {k2} differ")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Gradients of `sum(grad_out ⊙ (a·b))` with respect to `a` and `b`.
pub fn matmul_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = as_matrix(a, "lhs")?;
    let (k2, n) = as_matrix(b, "rhs")?;
    let (gm, gn) = as_matrix(grad_out, "grad")?;
    if k != k2 || gm != m || gn != n {
        return Err(Error::dim(format!(
            "matmul backward shapes {:?}·{:?} vs grad {:?}",
            a.shape(),
            b.shape(),
            grad_out.shape()
        )));
    }
    let mut ga = vec![T::zero(); m * k];
    gemm_nt_acc(grad_out.data(), b.data(), &mut ga, m, n, k);
    let mut gb = vec![T::zero(); k * n];
    gemm_tn_acc(a.data(), grad_out.data(), &mut gb, m, k, n);
    Ok((
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    ))
}

pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let n = norm(v);
    if !(n.as_f64() > NORM_EPS) {
        return Err(Error::Degenerate(format!(
            "cannot normalize a vector of norm {}",
            n.as_f64()
        )));
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Gradient through `v / ‖v‖`.
pub fn l2_normalize_backward<T: Real>(v: &[T], grad_out: &[T]) -> Vec<T> {
    let n = norm(v);
    let y: Vec<T> = v.iter().map(|&x| x / n).collect();
    let dot: T = y.iter().zip(grad_out).map(|(&a, &b)| a * b).sum();
    y.iter().zip(grad_out).map(|(&yi, &gi)| (gi - yi * dot) / n).collect()
}

/// Numerically stable softmax in place.
pub fn softmax_in_place<T: Real>(logits: &mut [T]) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
    let mut total = T::zero();
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in logits.iter_mut() {
        *v = *v / total;
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Softmax Jacobian-vector product: gradient on logits given gradient on probabilities.
pub fn softmax_backward<T: Real>(probs: &[T], grad_probs: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_probs).map(|(&p, &g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(&p, &g)| p * (g - dot)).collect()
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// `exp(−dᵢ/τ) / Σₖ exp(−dₖ/τ)`.
pub fn distance_softmax<T: Real>(dists: &[T], tau: T) -> Result<Vec<T>> {
    check_tau(tau)?;
    if dists.is_empty() {
        return Err(Error::dim("distance softmax over an empty set"));
    }
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::Degenerate("non-finite distance".into()));
    }
    let mut logits: Vec<T> = dists.iter().map(|&d| -d / tau).collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Gradient on distances given the softmax output and the gradient on it.
pub fn distance_softmax_backward<T: Real>(probs: &[T], grad_probs: &[T], tau: T) -> Vec<T> {
    softmax_backward(probs, grad_probs)
        .into_iter()
        .map(|g| -g / tau)
        .collect()
}

/// Euclidean distance `‖a − b‖₂`.
pub fn euclidean<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "euclidean distance between lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(euclidean_unchecked(a, b))
}

#[inline]
pub(crate) fn euclidean_unchecked<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// Gradient of `grad · ‖a − b‖` with respect to `a` (the gradient for `b` is its negation).
///
/// At `a = b` the distance is not differentiable; the zero subgradient is used.
pub fn euclidean_backward<T: Real>(a: &[T], b: &[T], dist: T, grad: T) -> Vec<T> {
    if dist.as_f64() <= NORM_EPS {
        return vec![T::zero(); a.len()];
    }
    let s = grad / dist;
    a.iter().zip(b).map(|(&x, &y)| (x - y) * s).collect()
}

/// `−log(max(probs[label], p_floor))`.
pub fn nll_from_probs<T: Real>(probs: &[T], label: usize) -> Result<T> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::Parameter(format!("label {label} out of range for {} classes", probs.len())))?;
    Ok(-(p.max(T::lit(P_FLOOR))).ln())
}

/// Gradient of [`nll_from_probs`] with respect to the probabilities.
pub fn nll_from_probs_backward<T: Real>(probs: &[T], label: usize) -> Vec<T> {
    let mut g = vec![T::zero(); probs.len()];
    let p = probs[label];
    if p > T::lit(P_FLOOR) {
        g[label] = -T::one() / p;
    }
    g
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the forward activation was clamped.
pub fn relu_backward_in_place<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, "ops-test");
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_selection() {
        let eye = Tensor::<f32>::matrix(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let m = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let a = Tensor::<f32>::matrix(1, 2, vec![1., 0.]).unwrap();
        let b = Tensor::matrix(2, 1, vec![2., 5.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_gradient_matches_central_difference() {
        let a = rand_tensor(3, 4, 1);
        let b = rand_tensor(4, 2, 2);
        let ones = Tensor::matrix(3, 2, vec![1.0; 6]).unwrap();
        let (ga, gb) = matmul_backward(&a, &b, &ones).unwrap();
        let f = |a: &Tensor<f64>, b: &Tensor<f64>| matmul(a, b).unwrap().data().iter().sum::<f64>();
        let eps = 1e-5;
        for i in 0..a.len() {
            let mut ap = a.clone();
            ap.data_mut()[i] += eps;
            let mut am = a.clone();
            am.data_mut()[i] -= eps;
            let num = (f(&ap, &b) - f(&am, &b)) / (2.0 * eps);
            let rel = (num - ga.data()[i]).abs() / num.abs().max(ga.data()[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "a[{i}]: {num} vs {}", ga.data()[i]);
        }
        for i in 0..b.len() {
            let mut bp = b.clone();
            bp.data_mut()[i] += eps;
            let mut bm = b.clone();
            bm.data_mut()[i] -= eps;
            let num = (f(&a, &bp) - f(&a, &bm)) / (2.0 * eps);
            let rel = (num - gb.data()[i]).abs() / num.abs().max(gb.data()[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "b[{i}]: {num} vs {}", gb.data()[i]);
        }
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let a = rand_tensor(5, 7, 3);
        let b = rand_tensor(5, 6, 4);
        let mut at = vec![0.0; 35];
        for r in 0..5 {
            for c in 0..7 {
                at[c * 5 + r] = a.data()[r * 7 + c];
            }
        }
        let mut want = vec![0.0; 42];
        gemm_acc(&at, b.data(), &mut want, 7, 5, 6);
        let mut got = vec![0.0; 42];
        gemm_tn_acc(a.data(), b.data(), &mut got, 5, 7, 6);
        for (x, y) in want.iter().zip(&got) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = rand_tensor(6, 7, 5);
        let mut ct = vec![0.0; 42];
        for r in 0..6 {
            for k in 0..7 {
                ct[k * 6 + r] = c.data()[r * 7 + k];
            }
        }
        let mut want = vec![0.0; 30];
        gemm_acc(a.data(), &ct, &mut want, 5, 7, 6);
        let mut got = vec![0.0; 30];
        gemm_nt_acc(a.data(), c.data(), &mut got, 5, 7, 6);
        for (x, y) in want.iter().zip(&got) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_bitwise_independent_of_thread_count() {
        let a = rand_tensor(64, 96, 7).cast::<f32>();
        let b = rand_tensor(96, 80, 8).cast::<f32>();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| matmul(&a, &b).unwrap())
        };
        assert_eq!(run(1).data(), run(4).data());
    }

    #[test]
    fn l2_normalize_examples() {
        let v = l2_normalize(&[3.0f64, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        let u = [0.0f64, 1.0, 0.0];
        assert_eq!(l2_normalize(&u).unwrap(), u.to_vec());
        assert!(matches!(l2_normalize(&[0.0f32, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn distance_softmax_examples() {
        let p = distance_softmax(&[2.0f64; 4], 1.0).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let p = distance_softmax(&[0.0f64, 10.0], 0.01).unwrap();
        assert!(p[0] > 1.0 - 1e-9);
        let p = distance_softmax(&[1.0f64, 2.0, 3.0], 1.0).unwrap();
        for (got, want) in p.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((got - want).abs() < 5e-6, "{got} vs {want}");
        }
        assert!(matches!(distance_softmax(&[1.0f64], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(distance_softmax(&[1.0f64], -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let d = euclidean(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(euclidean(&[1.0f64, 2.0], &[4.0, 6.0]).unwrap(), 5.0);
        assert!(euclidean(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll_from_probs(&[0.0f64, 1.0, 0.0], 1).unwrap(), 0.0);
        let u = vec![0.1f64; 10];
        assert!((nll_from_probs(&u, 7).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!((nll_from_probs(&[0.5f64, 0.5], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(nll_from_probs(&[0.5f64, 0.5], 2).is_err());
        // clamp keeps the loss finite
        let l = nll_from_probs(&[1.0f64, 0.0], 1).unwrap();
        assert!((l - (1e12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn distance_softmax_gradient_matches_central_difference() {
        let d = [0.3f64, 1.1, 0.7, 2.0];
        let tau = 0.5;
        let label = 2;
        let loss = |d: &[f64]| nll_from_probs(&distance_softmax(d, tau).unwrap(), label).unwrap();
        let p = distance_softmax(&d, tau).unwrap();
        let g = distance_softmax_backward(&p, &nll_from_probs_backward(&p, label), tau);
        for i in 0..d.len() {
            let eps = 1e-6;
            let mut dp = d;
            dp[i] += eps;
            let mut dm = d;
            dm[i] -= eps;
            let num = (loss(&dp) - loss(&dm)) / (2.0 * eps);
            assert!((num - g[i]).abs() < 1e-7, "{i}: {num} vs {}", g[i]);
        }
        // closed form: (δ_iy − p_i)/τ
        for i in 0..d.len() {
            let want = ((i == label) as u8 as f64 - p[i]) / tau;
            assert!((g[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_gradient_matches_central_difference() {
        let v = [0.4f64, -1.2, 0.9];
        let w = [0.3f64, 0.5, -0.2];
        let f = |v: &[f64]| l2_normalize(v).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = l2_normalize_backward(&v, &w);
        for i in 0..3 {
            let eps = 1e-6;
            let mut vp = v;
            vp[i] += eps;
            let mut vm = v;
            vm[i] -= eps;
            let num = (f(&vp) - f(&vm)) / (2.0 * eps);
            assert!((num - g[i]).abs() < 1e-8);
        }
    }

    fn arb_dists() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..2.0, 1..12)
    }

    proptest! {
        #[test]
        fn distance_softmax_is_a_distribution(d in arb_dists(), ti in 0usize..4) {
            let tau = [0.01, 0.1, 1.0, 10.0][ti];
            let p = distance_softmax(&d, tau).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if d.len() > 1 && (hi - lo) / tau <= 30.0 {
                prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        #[test]
        fn distance_softmax_argmax_is_distance_argmin(d in arb_dists(), tau in 0.001f64..100.0) {
            let p = distance_softmax(&d, tau).unwrap();
            let argmin = d.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let pmax = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // ties in probability are allowed only between tied distances
            prop_assert_eq!(p[argmin], pmax);
        }

        #[test]
        fn l2_normalize_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }

        #[test]
        fn euclidean_is_a_metric(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            c in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let ab = euclidean(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, euclidean(&b, &a).unwrap());
            let ac = euclidean(&a, &c).unwrap();
            let cb = euclidean(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-6);
        }
    }
}

use ndarray::Array2;

use super::Scalar;
use crate::corpus::Vocabulary;

/// Label-smoothed cross-entropy averaged over the rows whose gold id is not
/// `PAD`, together with its gradient with respect to the logits.
///
/// Per row the loss is `(1 - eps) * NLL(gold) + eps * mean_v NLL(v)`.
/// Rows with a `PAD` gold id get a zero gradient. With no scored rows the
/// loss is zero.
pub fn smoothed_cross_entropy<F: Scalar>(
    logits: &Array2<F>,
    gold: &[u32],
    smoothing: f64,
) -> (f64, Array2<F>) {
    assert_eq!(logits.nrows(), gold.len(), "one gold id per logit row");
    let vocab = logits.ncols();
    let scored = gold.iter().filter(|&&g| g != Vocabulary::PAD).count();
    let mut grad = Array2::zeros(logits.raw_dim());
    if scored == 0 {
        return (0.0, grad);
    }
    let inv_n = 1.0 / scored as f64;
    let uniform = smoothing / vocab as f64;
    let mut total = 0.0;
    for (r, &g) in gold.iter().enumerate() {
        if g == Vocabulary::PAD {
            continue;
        }
        let row: Vec<f64> = logits.row(r).iter().map(|x| x.to_f64().unwrap()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let mean_logit = row.iter().sum::<f64>() / vocab as f64;
        total += (1.0 - smoothing) * (lse - row[g as usize]) + smoothing * (lse - mean_logit);
        let mut out = grad.row_mut(r);
        for (c, x) in row.iter().enumerate() {
            let mut d = (x - lse).exp() - uniform;
            if c == g as usize {
                d -= 1.0 - smoothing;
            }
            out[c] = F::from_f64_lossy(d * inv_n);
        }
    }
    (total * inv_n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = Array2::<f64>::zeros((3, 17));
        for eps in [0.0, 0.1, 0.5] {
            let (l, _) = smoothed_cross_entropy(&logits, &[5, 6, 7], eps);
            assert!((l - 17f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let mut logits = Array2::<f64>::zeros((2, 5));
        logits[[0, 1]] = 100.0;
        logits[[1, 3]] = 100.0;
        let (l, _) = smoothed_cross_entropy(&logits, &[1, 3], 0.0);
        assert!(l < 1e-12);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, v, eps) = (6, 9, 0.1);
        let logits = Array2::from_shape_fn((rows, v), |_| rng.gen_range(-3.0..3.0));
        let gold: Vec<u32> = (0..rows).map(|_| rng.gen_range(1..v as u32)).collect();
        let (l, _) = smoothed_cross_entropy(&logits, &gold, eps);

        let mut expected = 0.0;
        for r in 0..rows {
            let z: f64 = logits.row(r).iter().map(|x: &f64| x.exp()).sum();
            let logp: Vec<f64> = logits.row(r).iter().map(|x: &f64| (x.exp() / z).ln()).collect();
            let mean_nll = -logp.iter().sum::<f64>() / v as f64;
            expected += (1.0 - eps) * -logp[gold[r] as usize] + eps * mean_nll;
        }
        expected /= rows as f64;
        assert!((l - expected).abs() < 1e-6);
    }

    #[test]
    fn pad_rows_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let (with_pad, grad) = smoothed_cross_entropy(&logits, &[2, Vocabulary::PAD, 3], 0.1);
        let trimmed = ndarray::stack![ndarray::Axis(0), logits.row(0), logits.row(2)];
        let (without, _) = smoothed_cross_entropy(&trimmed, &[2, 3], 0.1);
        assert!((with_pad - without).abs() < 1e-12);
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut logits = Array2::from_shape_fn((2, 5), |_| rng.gen_range(-2.0..2.0));
        let gold = [1, 4];
        let (_, grad) = smoothed_cross_entropy(&logits, &gold, 0.1);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..5 {
                let orig = logits[[r, c]];
                logits[[r, c]] = orig + h;
                let (up, _) = smoothed_cross_entropy(&logits, &gold, 0.1);
                logits[[r, c]] = orig - h;
                let (down, _) = smoothed_cross_entropy(&logits, &gold, 0.1);
                logits[[r, c]] = orig;
                assert!(((up - down) / (2.0 * h) - grad[[r, c]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = 6;
        let logits = Array2::from_shape_fn((4, v), |_| rng.gen_range(-2.0..2.0));
        let gold = [1u32, 2, 5, 3];
        let perm = [0usize, 3, 5, 1, 2, 4];
        let mut permuted = Array2::zeros((4, v));
        for r in 0..4 {
            for c in 0..v {
                permuted[[r, perm[c]]] = logits[[r, c]];
            }
        }
        let gold_p: Vec<u32> = gold.iter().map(|&g| perm[g as usize] as u32).collect();
        let (a, _) = smoothed_cross_entropy(&logits, &gold, 0.1);
        let (b, _) = smoothed_cross_entropy(&permuted, &gold_p, 0.1);
        assert!((a - b).abs() < 1e-12);
    }
}

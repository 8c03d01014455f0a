//! Log-space helpers shared by the loss, scoring and search code.

/// log(exp(a) + exp(b)) without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax of a row-major `rows × cols` buffer.
pub fn log_softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|&x| x - lse));
    }
    out
}

/// `weight * score` with the convention that a zero weight silences the term even when the
/// score is `-inf`.
#[inline]
pub fn weighted(weight: f64, score: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * score
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct() {
        let v = log_add(0.3f64.ln(), 0.2f64.ln());
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log_add(f64::NEG_INFINITY, -1.0), -1.0);
        assert_eq!(
            log_add(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let lp = log_softmax_rows(&[1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0], 3);
        for row in lp.chunks(3) {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_silences_neg_inf() {
        assert_eq!(weighted(0.0, f64::NEG_INFINITY), 0.0);
        assert_eq!(weighted(0.5, -2.0), -1.0);
    }
}

//! Branch-free float kernels for the trainer's hot loops.
//!
//! `std`'s `exp` is a scalar libm call, which keeps activation layers from
//! vectorizing. The variants here trade the last couple of ulps for
//! straight-line code the compiler can lift into SIMD lanes. They are only
//! used inside the training stack; the loss functions keep the libm-backed
//! scalar forms.

/// Padé numerator for `expm1`-style rational approximation.
const EXP_P: [f64; 3] = [
    1.261_771_930_748_105_9e-4,
    3.029_944_077_074_419_6e-2,
    9.999_999_999_999_999_9e-1,
];
/// Padé denominator.
const EXP_Q: [f64; 4] = [
    3.001_985_051_386_644_6e-6,
    2.524_483_403_496_841e-3,
    2.272_655_482_081_550_3e-1,
    2.0,
];
/// `ln 2` split into a high part exactly representable in the top bits and a
/// low correction, so `x - n*ln2` stays accurate.
const LN2_HI: f64 = 6.931_457_519_531_25e-1;
const LN2_LO: f64 = 1.428_606_820_309_417_2e-6;
const LOG2_E: f64 = std::f64::consts::LOG2_E;
/// Inputs are clamped to keep `2^n` inside the normal range.
const EXP_CLAMP: f64 = 700.0;

/// Range-reduce `x = n*ln2 + r` and evaluate the Padé pieces, so that
/// `e^x = scale * (q + p) / (q - p)` with `scale = 2^n`.
#[inline]
fn exp_parts(x: f64) -> (f64, f64, f64) {
    let x = x.clamp(-EXP_CLAMP, EXP_CLAMP);
    let nf = (x * LOG2_E + 0.5).floor();
    let r = (x - nf * LN2_HI) - nf * LN2_LO;
    let rr = r * r;
    let p = r * (EXP_P[2] + rr * (EXP_P[1] + rr * EXP_P[0]));
    let q = EXP_Q[3] + rr * (EXP_Q[2] + rr * (EXP_Q[1] + rr * EXP_Q[0]));
    // 2^n through the exponent bits; |n| < 1023 after the clamp, and the
    // i32 conversion keeps the loop vectorizable
    let n = nf as i32;
    let scale = f64::from_bits(((n as i64 + 1023) as u64) << 52);
    (p, q, scale)
}

/// `e^x`, accurate to a few ulps over the clamped range, with straight-line
/// control flow. Inputs outside roughly `[-700, 700]` saturate to the clamp
/// endpoints' values instead of reaching 0/inf. The reference form of
/// [`exp_parts`]; production code goes through [`sigmoid`].
#[cfg_attr(not(test), allow(dead_code))]
#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    let (p, q, scale) = exp_parts(x);
    scale * ((q + p) / (q - p))
}

/// Logistic function, symmetric, branch-free, and one division total:
/// with `e = e^(-|x|) = scale*(q+p)/(q-p)`, the reflected half is
/// `e/(1+e) = scale*(q+p) / ((q-p) + scale*(q+p))`.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    let (p, q, scale) = exp_parts(-x.abs());
    let num = scale * (q + p);
    let s = num / ((q - p) + num);
    if x >= 0.0 {
        1.0 - s
    } else {
        s
    }
}

/// Sum with eight independent accumulators: vectorizes, and the summation
/// order is fixed so results stay bit-reproducible.
pub(crate) fn sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    let mut tail = 0.0;
    for v in chunks.remainder() {
        tail += v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `sum((x - shift)^2)` in one pass, eight-lane like [`sum`].
pub(crate) fn sum_sq_dev(xs: &[f64], shift: f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for k in 0..8 {
            let d = c[k] - shift;
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for v in chunks.remainder() {
        let d = v - shift;
        tail += d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Dot product, eight-lane like [`sum`].
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_matches_std_over_wide_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut max_rel = 0.0f64;
        for _ in 0..200_000 {
            let x: f64 = rng.gen_range(-690.0..690.0);
            let got = exp(x);
            let want = x.exp();
            let rel = ((got - want) / want).abs();
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-13, "max rel err {max_rel}");
    }

    #[test]
    fn exp_known_points() {
        assert_eq!(exp(0.0), 1.0);
        assert!((exp(1.0) - std::f64::consts::E).abs() < 1e-15);
        assert!((exp(-1.0) - 1.0 / std::f64::consts::E).abs() < 1e-16);
        // saturates instead of overflowing
        assert!(exp(1e300).is_finite());
        assert!(exp(-1e300) > 0.0);
    }

    #[test]
    fn sigmoid_matches_libm_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100_000 {
            let x: f64 = rng.gen_range(-60.0..60.0);
            let want = crate::loss::at::sigmoid(x);
            let got = sigmoid(x);
            assert!(
                (got - want).abs() <= 1e-13 * want.max(1e-300),
                "x={x}: {got} vs {want}"
            );
        }
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) < 1e-300);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for i in 0..1000 {
            let x = (i as f64) * 0.05;
            let s = sigmoid(x) + sigmoid(-x);
            assert!((s - 1.0).abs() < 1e-15, "x={x}: {s}");
        }
    }

    #[test]
    fn reductions_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for len in [0usize, 1, 7, 8, 9, 64, 100] {
            let a: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let naive_sum: f64 = a.iter().sum();
            assert!((sum(&a) - naive_sum).abs() < 1e-12);
            let naive_dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive_dot).abs() < 1e-12);
            let m = 0.3;
            let naive_dev: f64 = a.iter().map(|x| (x - m) * (x - m)).sum();
            assert!((sum_sq_dev(&a, m) - naive_dev).abs() < 1e-12);
        }
    }
}

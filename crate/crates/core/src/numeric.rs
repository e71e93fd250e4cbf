//! Correctly rounded summation.
//!
//! Kernel reductions (inner products, squared distances) go through
//! [`exact_sum`], whose result is the exact sum of its inputs rounded once.
//! The result therefore depends only on the multiset of terms, never on
//! their order: a permuted template yields bit-identical kernel values and
//! parallel Gram construction is bitwise reproducible.

/// Sum of `terms`, correctly rounded to nearest (ties to even).
///
/// Uses Shewchuk's non-overlapping partials followed by a half-way
/// correction on the final rounding. Falls back to a naive sum when a
/// term or an intermediate is not finite.
pub fn exact_sum<I>(terms: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut partials: Vec<f64> = Vec::with_capacity(32);
    let mut special = 0.0f64;
    let mut overflowed = false;

    for mut x in terms {
        if !x.is_finite() {
            special += x;
            overflowed = true;
            continue;
        }
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            overflowed = true;
        }
        partials.truncate(i);
        partials.push(x);
    }

    if overflowed {
        return special + partials.iter().sum::<f64>();
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// Correctly rounded inner product of two equal-length slices.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    exact_sum(x.iter().zip(y).map(|(a, b)| a * b))
}

/// Correctly rounded squared Euclidean distance.
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    exact_sum(x.iter().zip(y).map(|(a, b)| {
        let d = a - b;
        d * d
    }))
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancels_exactly() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn half_way_rounds_to_even() {
        // 1 + 2^-53 is exactly half way between 1 and its successor.
        let half_ulp = f64::EPSILON / 2.0;
        assert_eq!(exact_sum([1.0, half_ulp]), 1.0);
        // A tiny extra term breaks the tie upwards.
        assert_eq!(exact_sum([1.0, half_ulp, 1e-300]), 1.0 + f64::EPSILON);
    }

    #[test]
    fn non_finite_propagates() {
        assert_eq!(exact_sum([1.0, f64::INFINITY]), f64::INFINITY);
        assert!(exact_sum([f64::INFINITY, f64::NEG_INFINITY]).is_nan());
    }

    proptest! {
        #[test]
        fn order_independent(mut v in prop::collection::vec(-1e6f64..1e6, 0..64), seed in any::<u64>()) {
            let forward = exact_sum(v.iter().copied());
            // deterministic shuffle from the seed
            let mut s = seed | 1;
            for i in (1..v.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                v.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(forward.to_bits(), exact_sum(v.iter().copied()).to_bits());
        }
    }
}

//! Rank statistics and group-relative normalization, generic over the float type.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("group has {got} rewards, expected group size {expected}")]
    GroupSize { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
}

fn from_usize<T: Float>(n: usize) -> T {
    T::from(n).expect("usize representable as float")
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks<T: Float>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let avg = from_usize::<T>(i + 1 + j) / from_usize::<T>(2);
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn mean<T: Float>(xs: &[T]) -> T {
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    sum / from_usize(xs.len())
}

/// Population standard deviation.
pub fn population_std<T: Float>(xs: &[T]) -> T {
    let m = mean(xs);
    let ss = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    (ss / from_usize(xs.len())).sqrt()
}

/// Pearson correlation; zero when either input has no spread.
pub fn pearson<T: Float>(xs: &[T], ys: &[T]) -> Result<T, StatsError> {
    check_pair(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(T::zero());
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Spearman rank correlation with average ranks for ties.
///
/// Defined as the Pearson correlation of the rank vectors; a constant rank
/// vector (all values tied) yields 0.
pub fn spearman<T: Float>(xs: &[T], ys: &[T]) -> Result<T, StatsError> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

fn check_pair<T: Float>(xs: &[T], ys: &[T]) -> Result<(), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooShort {
            need: 2,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Group-relative advantages `(r_i - mean) / std` with population std.
///
/// A group whose spread is zero (or lost in rounding relative to its mean)
/// gets all-zero advantages.
pub fn group_advantage<T: Float>(totals: &[T], group_size: usize) -> Result<Vec<T>, StatsError> {
    if group_size < 2 {
        return Err(StatsError::TooShort {
            need: 2,
            got: group_size,
        });
    }
    if totals.len() != group_size {
        return Err(StatsError::GroupSize {
            expected: group_size,
            got: totals.len(),
        });
    }
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = mean(totals);
    let sd = population_std(totals);
    let scale = m.abs().max(T::one());
    let tol = T::epsilon() * from_usize(64) * scale;
    if sd <= tol {
        return Ok(vec![T::zero(); totals.len()]);
    }
    Ok(totals.iter().map(|&r| (r - m) / sd).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), [2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(r, 0.8);
    }

    #[test]
    fn spearman_with_tie_matches_hand_value() {
        // ranks x = [1.5, 1.5, 3], y = [1, 2, 3]
        // dx = [-0.5, -0.5, 1], dy = [-1, 0, 1]; sxy = 1.5, sxx = 1.5, syy = 2
        let r: f64 = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        let expected = 1.5 / (1.5f64.sqrt() * 2f64.sqrt());
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors_and_constant() {
        assert_eq!(
            spearman(&[1.0], &[1.0]),
            Err(StatsError::TooShort { need: 2, got: 1 })
        );
        assert_eq!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        );
        assert_eq!(spearman(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn spearman_f32() {
        let r = spearman(&[1.0f32, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8f32).abs() < 1e-6);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantage(&[1.0; 8], 8).unwrap(), vec![0.0; 8]);
        assert_eq!(group_advantage(&[2.0, 0.0], 2).unwrap(), [1.0, -1.0]);
        assert_eq!(group_advantage(&[0.1; 8], 8).unwrap(), vec![0.0; 8]);
        assert!(matches!(
            group_advantage(&[1.0, 2.0, 3.0], 8),
            Err(StatsError::GroupSize { expected: 8, got: 3 })
        ));
        assert!(group_advantage(&[1.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn spearman_rank_invariant_under_monotone_maps(
            pairs in prop::collection::vec((-100i32..100, -100i32..100), 2..12),
            a in 0.1f64..5.0,
            b in -10.0f64..10.0,
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            // strictly increasing maps
            let fx: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let gx: Vec<f64> = xs.iter().map(|x| x * x * x + x).collect();
            let base = spearman(&xs, &ys).unwrap();
            prop_assert!((spearman(&fx, &ys).unwrap() - base).abs() < 1e-12);
            prop_assert!((spearman(&gx, &ys).unwrap() - base).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn advantages_are_centered(totals in prop::collection::vec(-2.0f64..1.75, 8)) {
            let adv = group_advantage(&totals, 8).unwrap();
            let m: f64 = adv.iter().sum::<f64>() / 8.0;
            prop_assert!(m.abs() <= 1e-12);
        }
    }
}

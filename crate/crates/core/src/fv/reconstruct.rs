/// `minmod(a, b)`: the smaller-magnitude argument when both share a sign,
/// zero otherwise.
#[inline]
pub fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Limited slope of the middle cell of a three-cell stencil.
#[inline]
pub fn limited_slope(left: f64, center: f64, right: f64) -> f64 {
    minmod(center - left, right - center)
}

/// MUSCL face states along one grid line with minmod-limited slopes.
///
/// Returns `(left, right)` for the `n − 1` interior faces: face `k` sits
/// between cells `k` and `k + 1`. The end cells have no outer neighbour and
/// keep a zero slope.
pub fn minmod_reconstruct(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    assert!(n >= 3, "reconstruction needs at least three cells, got {n}");
    let mut slopes = vec![0.0; n];
    for k in 1..n - 1 {
        slopes[k] = limited_slope(values[k - 1], values[k], values[k + 1]);
    }
    let left = (0..n - 1).map(|k| values[k] + 0.5 * slopes[k]).collect();
    let right = (0..n - 1)
        .map(|k| values[k + 1] - 0.5 * slopes[k + 1])
        .collect();
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_data() {
        let (l, r) = minmod_reconstruct(&[2.0; 5]);
        assert!(l.iter().chain(&r).all(|&v| v == 2.0));
    }

    #[test]
    fn linear_data_keeps_slope() {
        let q: Vec<f64> = (0..6).map(|k| 1.0 + 0.5 * k as f64).collect();
        let (l, r) = minmod_reconstruct(&q);
        // interior cells reproduce the exact face value 1.25 + 0.5k
        for k in 1..4 {
            let exact = 1.25 + 0.5 * k as f64;
            assert!((l[k] - exact).abs() < 1e-15);
            assert!((r[k - 1] - (exact - 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn extremum_is_first_order() {
        assert_eq!(limited_slope(1.0, 3.0, 2.0), 0.0);
        let (l, r) = minmod_reconstruct(&[1.0, 3.0, 2.0]);
        assert_eq!(l[1], 3.0);
        assert_eq!(r[0], 3.0);
    }
}

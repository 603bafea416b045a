use proptest::prelude::*;
use vinmap_core::validate::{kendall_tau, TauError};

/// Pair-by-pair tau-b, O(n²).
fn naive_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut s, mut n1, mut n2, mut n0) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            n0 += 1;
            let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            if dx == 0 {
                n1 += 1;
            }
            if dy == 0 {
                n2 += 1;
            }
            s += dx * dy;
        }
    }
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    (denom > 0.0).then(|| s as f64 / denom)
}

fn small_values(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec((0..6i32).prop_map(f64::from), n),
            prop::collection::vec((0..6i32).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #[test]
    fn matches_pairwise_definition((x, y) in small_values(2..40)) {
        match (kendall_tau(&x, &y), naive_tau_b(&x, &y)) {
            (Ok(t), Some(o)) => prop_assert!((t - o).abs() < 1e-12, "{t} vs {o}"),
            (Err(TauError::Undefined), None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
    }

    #[test]
    fn continuous_values_match(
        (x, y) in (2usize..60).prop_flat_map(|n| (
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(-1e3f64..1e3, n),
        ))
    ) {
        let t = kendall_tau(&x, &y).unwrap();
        let o = naive_tau_b(&x, &y).unwrap();
        prop_assert!((t - o).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments((x, y) in small_values(2..30)) {
        prop_assert_eq!(kendall_tau(&x, &y).ok(), kendall_tau(&y, &x).ok());
    }

    #[test]
    fn strictly_monotone_transform_is_invisible((x, y) in small_values(2..30)) {
        let fx: Vec<f64> = x.iter().map(|v| (v * 0.5).exp() + 3.0).collect();
        let a = kendall_tau(&x, &y).ok();
        let b = kendall_tau(&fx, &y).ok();
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn reversal_negates((x, y) in small_values(2..30)) {
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        if let (Ok(a), Ok(b)) = (kendall_tau(&x, &y), kendall_tau(&x, &neg)) {
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_permutation_is_invisible((x, y) in small_values(2..30), rot in 0usize..30) {
        let n = x.len();
        let k = rot % n;
        let mut px = x.clone();
        let mut py = y.clone();
        px.rotate_left(k);
        py.rotate_left(k);
        prop_assert_eq!(kendall_tau(&x, &y).ok(), kendall_tau(&px, &py).ok());
    }
}

#[test]
fn hand_computed_values() {
    // 3 concordant, 0 discordant
    assert_eq!(
        kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
        1.0
    );
    assert_eq!(
        kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
        -1.0
    );
    // pairs: (0,1) C, (0,2) C, (0,3) C, (1,2) D, (1,3) C, (2,3) C -> (5-1)/6
    let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((t - 4.0 / 6.0).abs() < 1e-15);
    assert_eq!(
        kendall_tau(&[1.0, 1.0], &[1.0, 2.0]),
        Err(TauError::Undefined)
    );
}

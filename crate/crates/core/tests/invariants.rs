use proptest::prelude::*;
use rankiq::evalsuite::{d_test, p_test, plcc, srcc};
use rankiq::listrank::{dil_loss, list_loss_general, permutation_probability, permutations};
use rankiq::pairgen::{uncertainty, Dip};

fn distinct(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[0] != w[1])
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| (prop::collection::vec(-100.0..100.0f64, n), prop::collection::vec(-100.0..100.0f64, n)))
}

proptest! {
    #[test]
    fn srcc_ignores_increasing_transforms((a, b) in paired(3..40)) {
        prop_assume!(distinct(&a) && distinct(&b));
        let base = srcc(&a, &b).unwrap();
        let ta: Vec<f64> = a.iter().map(|v| (v / 50.0).exp() * 3.0 - 1.0).collect();
        let tb: Vec<f64> = b.iter().map(|v| v * v * v + 7.0).collect();
        prop_assert_eq!(srcc(&ta, &tb).unwrap(), base);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn plcc_ignores_positive_affine_maps((a, b) in paired(3..40), s in 0.1..10.0f64, t in -50.0..50.0f64) {
        prop_assume!(distinct(&a) && distinct(&b));
        let base = plcc(&a, &b, false).unwrap();
        let ta: Vec<f64> = a.iter().map(|v| s * v + t).collect();
        prop_assert!((plcc(&ta, &b, false).unwrap() - base).abs() < 1e-10);
        prop_assert!((plcc(&a, &ta, false).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn d_test_depends_only_on_order(
        p in prop::collection::vec(-20i32..20, 1..30),
        d in prop::collection::vec(-20i32..20, 1..30),
    ) {
        let p: Vec<f64> = p.into_iter().map(f64::from).collect();
        let d: Vec<f64> = d.into_iter().map(f64::from).collect();
        let base = d_test(&p, &d).unwrap().d;
        let warp = |v: &Vec<f64>| v.iter().map(|x| x.atan() * 4.0 + x * 0.01).collect::<Vec<f64>>();
        prop_assert_eq!(d_test(&warp(&p), &warp(&d)).unwrap().d, base);
        prop_assert!((0.5..=1.0).contains(&base));
    }

    #[test]
    fn p_test_depends_only_on_order(
        scores in prop::collection::vec(-5.0..5.0f64, 10),
        pairs in prop::collection::vec((0usize..10, 0usize..10), 1..40),
    ) {
        let dips: Vec<Dip> = pairs
            .into_iter()
            .map(|(i, j)| Dip { i, j, gap: 30.0, uncertainty: 0.0, label: 1.0 })
            .collect();
        let base = p_test(&dips, &scores).unwrap();
        let warped: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(p_test(&dips, &warped).unwrap(), base);
        prop_assert_eq!(base.concordant + base.incorrect, base.total);
    }

    #[test]
    fn permutation_probabilities_sum_to_one(scores in prop::collection::vec(-10.0..10.0f64, 2..6)) {
        let total: f64 = permutations(scores.len())
            .iter()
            .map(|p| permutation_probability(&scores, p).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn list_loss_ignores_translation(scores in prop::collection::vec(-10.0..10.0f64, 3), shift in -100.0..100.0f64) {
        let mut truth = vec![0.0; 6];
        truth[0] = 0.7;
        truth[3] = 0.3;
        let moved: Vec<f64> = scores.iter().map(|v| v + shift).collect();
        let a = list_loss_general(&scores, &truth).unwrap();
        let b = list_loss_general(&moved, &truth).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((dil_loss(scores[0], scores[1], scores[2]).unwrap()
            - dil_loss(moved[0], moved[1], moved[2]).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn dil_loss_falls_along_widening_gaps(a in 0.01..3.0f64, b in 0.01..3.0f64) {
        let mut prev = f64::INFINITY;
        for step in 0..40 {
            let t = step as f64 * 0.5;
            let loss = dil_loss(t * (a + b), t * b, 0.0).unwrap();
            prop_assert!(loss < prev || loss == 0.0);
            prev = loss;
        }
    }

    #[test]
    fn uncertainty_is_a_weight(t in 0.0..100.0f64, tc in 0.5..50.0f64) {
        let u = uncertainty(t, tc).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
        prop_assert!(uncertainty(t + 0.1, tc).unwrap() <= u);
    }
}

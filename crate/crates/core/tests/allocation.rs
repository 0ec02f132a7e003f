use ia_feedback::bitalloc::{
    allocation_objective, brute_force_allocation, distributed_bits, total_bits_for_dof, total_bits_for_dof_raw,
    waterfill, weights,
};
use ia_feedback::channel::NetworkConfig;
use ia_feedback::topology::TopologyKind;
use proptest::prelude::*;

const M: usize = 3;

fn marginal(a: f64, b: f64) -> f64 {
    let m1 = (M - 1) as f64;
    a * (-b / m1).exp2() * std::f64::consts::LN_2 / m1
}

fn weight_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-12.0f64..12.0, k).prop_map(|e| e.into_iter().map(f64::exp2).collect())
}

#[test]
fn hand_cases() {
    assert_eq!(waterfill(&[1.0; 4], 16, M).unwrap().integer.bits, vec![4, 4, 4, 4]);
    let s = waterfill(&[4.0, 1.0, 1.0, 1.0], 16, M).unwrap();
    for (c, e) in s.continuous.iter().zip([7.0, 3.0, 3.0, 3.0]) {
        assert!((c - e).abs() < 1e-12);
    }
    assert_eq!(s.integer.bits, vec![7, 3, 3, 3]);
    let a = [(20f64).exp2(), 1.0, 1.0, 1.0];
    assert_eq!(waterfill(&a, 4, M).unwrap().integer.bits, vec![4, 0, 0, 0]);
    assert_eq!(brute_force_allocation(&a, 4, M).unwrap().bits, vec![4, 0, 0, 0]);
    assert_eq!(waterfill(&[3.0, 2.0, 1.0, 5.0], 0, M).unwrap().integer.bits, vec![0; 4]);
}

#[test]
fn dof_budget_from_closed_form_weights() {
    let p = 1e3;
    let cfg = NetworkConfig::with_fixed_ratio(4, 1, 3.5, p, 2.0).unwrap();
    let a = weights(&cfg, TopologyKind::Star).unwrap().a;
    let a_hat = std::f64::consts::PI.sqrt() / 2.0 * 9.0 * 2.0 * (-3.5f64).exp2();
    for ak in &a {
        assert!((ak / p - a_hat).abs() < 1e-12);
    }
    let raw = total_bits_for_dof_raw(&a, 2.0, p, M, 4);
    assert!((raw - 79.691_658_806_724_48).abs() < 1e-9);
    assert_eq!(total_bits_for_dof(&a, 2.0, p, M, 4), 80);

    let e = weights(&cfg, TopologyKind::CsiExchange).unwrap().a;
    let expect = [
        1.409_978_404_479_937_7,
        1.409_978_404_479_937_7,
        0.704_989_202_239_968_9,
        0.704_989_202_239_968_9,
    ];
    for (x, y) in e.iter().zip(expect) {
        assert!((x / p - y).abs() < 1e-12);
    }
}

#[test]
fn dof_budget_cancellation() {
    let p = 512.0f64;
    let c = 2.0;
    let a: Vec<f64> = (0..4).map(|_| p * (c / 4.0f64).exp2()).collect();
    let raw = total_bits_for_dof_raw(&a, c, p, M, 4);
    assert!((raw - 4.0 * 2.0 * 9.0).abs() < 1e-9);
    let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
    assert!((total_bits_for_dof_raw(&doubled, c, 2.0 * p, M, 4) - raw - 8.0).abs() < 1e-9);
}

#[test]
fn distributed_threshold_case() {
    let a = vec![(0.5f64).exp2(); 4];
    assert_eq!(distributed_bits(&a, 2.0, 4, M).bits, vec![0; 4]);
}

#[test]
fn oracle_agreement_sweep() {
    let mut rng = ia_feedback::rng::rng_from(2024);
    use rand::Rng;
    for _ in 0..300 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-12.0f64..12.0).exp2()).collect();
        for bt in [8, 16, 20] {
            let w = waterfill(&a, bt, M).unwrap().integer;
            let o = brute_force_allocation(&a, bt, M).unwrap();
            assert!(allocation_objective(&a, &w, M) <= 1.05 * allocation_objective(&a, &o, M));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kkt_and_budget(a in weight_vec(4), bt in 0u32..64) {
        let s = waterfill(&a, bt, M).unwrap();
        prop_assert_eq!(s.integer.sum(), bt);
        prop_assert!((s.continuous.iter().sum::<f64>() - bt as f64).abs() < 1e-9 * (1.0 + bt as f64));
        if bt > 0 {
            let common = marginal(a[s.active_set[0]], s.continuous[s.active_set[0]]);
            for &i in &s.active_set {
                prop_assert!((marginal(a[i], s.continuous[i]) - common).abs() <= 1e-9 * common);
            }
            for i in (0..4).filter(|i| !s.active_set.contains(i)) {
                prop_assert_eq!(s.continuous[i], 0.0);
                prop_assert!(marginal(a[i], 0.0) <= common * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn scale_invariance(a in weight_vec(5), bt in 1u32..48, c in -20.0f64..20.0) {
        let s = waterfill(&a, bt, M).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * c.exp2()).collect();
        let t = waterfill(&scaled, bt, M).unwrap();
        for (x, y) in s.continuous.iter().zip(&t.continuous) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn larger_weight_gets_more_bits(a in weight_vec(6), bt in 0u32..64) {
        let s = waterfill(&a, bt, M).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if a[i] > a[j] {
                    prop_assert!(s.continuous[i] >= s.continuous[j] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn within_five_percent_of_brute_force(a in weight_vec(4), bt in prop::sample::select(vec![8u32, 16, 20])) {
        let w = waterfill(&a, bt, M).unwrap().integer;
        let o = brute_force_allocation(&a, bt, M).unwrap();
        prop_assert!(allocation_objective(&a, &w, M) <= 1.05 * allocation_objective(&a, &o, M));
    }

    #[test]
    fn distributed_meets_per_user_target(a in prop::collection::vec(4.0f64..40.0, 4), c in 0.5f64..4.0) {
        let a: Vec<f64> = a.into_iter().map(f64::exp2).collect();
        let b = distributed_bits(&a, c, 4, M);
        let m1 = (M - 1) as f64;
        for (ak, bk) in a.iter().zip(&b.bits) {
            let level = ak.log2() - *bk as f64 / m1;
            prop_assert!((level - c / 4.0).abs() <= 0.5 / m1 + 1e-9);
        }
        let p = 1.0;
        let central = total_bits_for_dof(&a, c, p, M, 4) as i64;
        prop_assert!((b.sum() as i64 - central).abs() as f64 <= 4.0 / 2.0 + 1.0);
    }
}

use ia_feedback::linalg::CVec;
use ia_feedback::quantize::{
    build_codebook, distortion_bound, gamma_bar, load_or_build, quantize_channel_matrix, quantize_streaming,
    quantize_vector, sample_rvq_distortion, Codebook, QuantizerMode, DEFAULT_EXPLICIT_CAP,
};
use ia_feedback::rng::{complex_normal_matrix, isotropic_unit, rng_for, rng_from};
use ia_feedback::stats::{ks_critical, ks_statistic, mean, std_error};
use num_complex::Complex64;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

/// Exact mean of the smallest of `n` i.i.d. `σ` with `P(σ ≤ x) = x^{dim−1}`:
/// `Γ(n+1)Γ(1+1/(dim−1)) / Γ(n+1+1/(dim−1))`.
fn exact_min_mean(dim: usize, bits: u32) -> f64 {
    let n = (1u64 << bits) as f64;
    let e = 1.0 / (dim - 1) as f64;
    (ln_gamma(n + 1.0) + ln_gamma(1.0 + e) - ln_gamma(n + 1.0 + e)).exp()
}

fn explicit_sigmas(dim: usize, bits: u32, trials: u64, tag: u64) -> Vec<f64> {
    (0..trials)
        .map(|t| {
            let v = isotropic_unit(&mut rng_for(t, &[tag, 1]), dim);
            quantize_streaming(
                &v,
                bits,
                ia_feedback::rng::derive_seed(t, &[tag, 2]),
                DEFAULT_EXPLICIT_CAP,
            )
            .unwrap()
            .sigma
        })
        .collect()
}

#[test]
fn normalized_gamma_values() {
    assert!((gamma_bar(3) - 0.886_226_925_452_758).abs() < 1e-14);
    assert!((gamma_bar(9) - 7.533_941_598_797_612 / 8.0).abs() < 1e-12);
    assert!((distortion_bound(3, 8.0) - 0.886_226_925_452_758 / 16.0).abs() < 1e-14);
}

#[test]
fn explicit_distortion_matches_order_statistic() {
    for (dim, bits) in [(3, 2), (3, 6), (4, 6), (5, 4)] {
        let s = explicit_sigmas(dim, bits, 4000, 10 + bits as u64);
        let (m, se) = (mean(&s), std_error(&s));
        let exact = exact_min_mean(dim, bits);
        assert!(
            (m - exact).abs() < 4.0 * se,
            "dim {dim} B {bits}: {m} vs {exact} (se {se})"
        );
        assert!(m <= distortion_bound(dim, bits as f64) * (1.0 + 3.0 * se / m));
    }
}

#[test]
fn distortion_falls_with_bits() {
    let means: Vec<f64> = [2, 4, 8, 12]
        .iter()
        .map(|&b| mean(&explicit_sigmas(3, b, 1500, 3)))
        .collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn zero_bit_sampler_mean_is_two_thirds() {
    let mut rng = rng_from(5);
    let s: Vec<f64> = (0..100_000).map(|_| sample_rvq_distortion(&mut rng, 3, 0.0)).collect();
    assert!((mean(&s) - 2.0 / 3.0).abs() < 3.0 * std_error(&s));
}

#[test]
fn sampler_agrees_with_codebook_search() {
    let bits = 6;
    let explicit = explicit_sigmas(3, bits, 4000, 40);
    let mut rng = rng_from(41);
    let sampled: Vec<f64> = (0..4000)
        .map(|_| sample_rvq_distortion(&mut rng, 3, bits as f64))
        .collect();
    assert!(ks_statistic(&explicit, &sampled) < ks_critical(4000, 4000, 0.01));
}

#[test]
fn high_resolution_matrix_distortion() {
    let m = 3;
    let bits = ((m * m - 1) as f64 * 10.0) as u32;
    assert_eq!(bits, 80);
    let s: Vec<f64> = (0..10_000u64)
        .map(|t| {
            let h = complex_normal_matrix(&mut rng_for(t, &[80]), m, m);
            quantize_channel_matrix(&h, bits, t, QuantizerMode::default())
                .unwrap()
                .sigma
        })
        .collect();
    let target = gamma_bar(m * m) / 1024.0;
    assert!(
        (mean(&s) - target).abs() < 3.0 * std_error(&s),
        "{} vs {target}",
        mean(&s)
    );
}

#[test]
fn codebook_entries_are_isotropic() {
    let cb = build_codebook(3, 16, 9).unwrap();
    assert_eq!(cb.len(), 65_536);
    let mut coord: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(cb.len())).collect();
    for i in 0..cb.len() {
        let e = cb.entry(i);
        let n: f64 = e.iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-12);
        for (c, z) in coord.iter_mut().zip(e) {
            c.push(z.norm_sqr());
        }
    }
    for c in &coord {
        assert!((mean(c) - 1.0 / 3.0).abs() < 3.0 * std_error(c));
    }
}

#[test]
fn cached_codebook_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = load_or_build(dir.path(), 4, 7, 11).unwrap();
    assert!(dir.path().join(Codebook::cache_name(4, 7, 11)).exists());
    let b = load_or_build(dir.path(), 4, 7, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, build_codebook(4, 7, 11).unwrap());
}

#[test]
fn single_entry_codebook_distortion() {
    let s = 0.5f64.sqrt();
    let v = CVec::from_vec(vec![
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
    ]);
    let w = CVec::from_vec(vec![
        Complex64::new(0.0, 0.75f64.sqrt()),
        Complex64::new(0.5 * s, 0.0),
        Complex64::new(0.0, 0.5 * s),
    ]);
    let q = quantize_vector(&v, &Codebook::from_entries(&[w]).unwrap()).unwrap();
    assert!((q.sigma - 0.25).abs() < 1e-15);
    assert!(q.quantized[0].im.abs() < 1e-15 && q.quantized[0].re > 0.0);
}

fn check_decomposition(v: &CVec, q: &ia_feedback::quantize::QuantizationResult) -> Result<(), TestCaseError> {
    prop_assert!((0.0..=1.0).contains(&q.sigma));
    let rebuilt = v * Complex64::from((1.0 - q.sigma).sqrt()) + &q.error_direction * Complex64::from(q.sigma.sqrt());
    prop_assert!((rebuilt - &q.quantized).norm() < 1e-12);
    prop_assert!(v.dotc(&q.error_direction).norm() < 1e-12);
    prop_assert!((q.quantized.norm() - 1.0).abs() < 1e-12);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn explicit_decomposition(seed in any::<u64>(), dim in 2usize..6, bits in 0u32..9) {
        let v = isotropic_unit(&mut rng_from(seed), dim);
        let q = QuantizerMode::Explicit { cap: 12 }.quantize(&v, bits, seed ^ 1).unwrap();
        check_decomposition(&v, &q)?;
        prop_assert!(q.index.is_some());
    }

    #[test]
    fn sampled_decomposition(seed in any::<u64>(), dim in 2usize..10, bits in 0u32..64) {
        let v = isotropic_unit(&mut rng_from(seed), dim);
        let q = QuantizerMode::Statistical.quantize(&v, bits, seed ^ 1).unwrap();
        check_decomposition(&v, &q)?;
    }

    #[test]
    fn streaming_matches_materialized(seed in any::<u64>(), bits in 0u32..8) {
        let v = isotropic_unit(&mut rng_from(seed), 3);
        let cb = build_codebook(3, bits, seed).unwrap();
        let a = quantize_vector(&v, &cb).unwrap();
        let b = quantize_streaming(&v, bits, seed, DEFAULT_EXPLICIT_CAP).unwrap();
        prop_assert_eq!(a, b);
    }
}

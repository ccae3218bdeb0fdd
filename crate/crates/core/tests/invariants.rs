use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aisil::filter::{bootstrap_filter, conditional_smc, multinomial_indices, systematic_indices};
use aisil::io::{parse_table, read_binary, write_binary, write_table, Table};
use aisil::lgssm::{LgParams, LinearGaussian};
use aisil::ssm::StateSpaceModel;
use aisil::stats::{log_sum_exp, normalize_log_weights};
use aisil::temper::{ess, ess_after_increment, find_next_temperature, reweight_log_weights};

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn positive_weights() -> impl Strategy<Value = Vec<f64>> {
    vec(prop_oneof![Just(0.0), 1e-6..10.0f64], 1..40)
        .prop_filter("some mass", |w| w.iter().any(|&x| x > 0.0))
        .prop_map(|w| normalized(&w))
}

proptest! {
    #[test]
    fn systematic_counts_are_floor_or_ceil(w in positive_weights(), u in 0.0..1.0f64, count in 1usize..200) {
        let mut out = Vec::new();
        systematic_indices(&w, u, count, &mut out);
        prop_assert_eq!(out.len(), count);
        prop_assert!(out.windows(2).all(|p| p[0] <= p[1]));
        for (j, &wj) in w.iter().enumerate() {
            let hits = out.iter().filter(|&&i| i == j).count() as f64;
            let expected = wj * count as f64;
            prop_assert!(hits >= (expected - 1e-9).floor() && hits <= (expected + 1e-9).ceil(),
                "index {} drawn {} times, expected {}", j, hits, expected);
            if wj == 0.0 {
                prop_assert_eq!(hits, 0.0);
            }
        }
    }

    #[test]
    fn multinomial_draws_are_sorted_and_supported(w in positive_weights(), count in 0usize..100, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        multinomial_indices(&w, count, &mut rng, &mut out);
        prop_assert_eq!(out.len(), count);
        prop_assert!(out.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(out.iter().all(|&i| w[i] > 0.0));
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(xs in vec(-500.0..500.0f64, 1..30), c in -1e3..1e3f64) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = log_sum_exp(&xs) + c;
        let b = log_sum_exp(&shifted);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&xs);
        prop_assert!(l >= max && l <= max + (xs.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn normalized_log_weights_sum_to_one(mut xs in vec(-800.0..50.0f64, 1..50)) {
        normalize_log_weights(&mut xs);
        let total: f64 = xs.iter().map(|x| x.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reweight_matches_direct_formula(
        pairs in vec((-5.0..5.0f64, -200.0..0.0f64), 2..40),
        delta in 0.0..1.0f64,
    ) {
        let mut log_w: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ll: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        normalize_log_weights(&mut log_w);
        let direct: Vec<f64> = log_w.iter().zip(&ll).map(|(w, l)| w + delta * l).collect();
        let expected = log_sum_exp(&direct);
        let ratio = reweight_log_weights(&mut log_w, &ll, delta);
        prop_assert!((ratio - expected).abs() < 1e-9);
        let total: f64 = log_w.iter().map(|x| x.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let w: Vec<f64> = log_w.iter().map(|x| x.exp()).collect();
        let e = ess(&w);
        prop_assert!(e >= 1.0 - 1e-9 && e <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn next_temperature_stays_in_range(
        ll in vec(-300.0..0.0f64, 4..60),
        a_prev in 0.0..0.99f64,
        frac in 0.3..0.95f64,
    ) {
        let m = ll.len();
        let log_w = vec![-(m as f64).ln(); m];
        let target = frac * m as f64;
        let choice = find_next_temperature(&log_w, &ll, a_prev, target, 100);
        prop_assert!(choice.temperature > a_prev && choice.temperature <= 1.0);
        if choice.terminal {
            prop_assert_eq!(choice.temperature, 1.0);
            prop_assert!(ess_after_increment(&log_w, &ll, 1.0 - a_prev) >= target);
        } else {
            prop_assert!(ess_after_increment(&log_w, &ll, 1.0 - a_prev) < target);
            let got = ess_after_increment(&log_w, &ll, choice.temperature - a_prev);
            prop_assert!((got - choice.ess).abs() < 1e-6 * m as f64);
        }
    }

    #[test]
    fn filters_keep_weights_normalized(
        y in vec(-3.0..3.0f64, 2..12),
        n in 2usize..20,
        a in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let model = LinearGaussian::new(LgParams::default(), y).unwrap();
        let series = model.series();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = bootstrap_filter(&series, n, a, &mut rng).unwrap();
        prop_assert!(fs.log_likelihood.is_finite());
        for t in 0..series.horizon() {
            let total: f64 = fs.weights_at(t).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(fs.ancestors_at(t).iter().all(|&j| j < n));
        }
        let reference: Vec<f64> = (0..series.horizon()).map(|t| *fs.particle(t, 0)).collect();
        let cs = conditional_smc(&series, n, a, &reference, &mut rng).unwrap();
        for (t, x) in reference.iter().enumerate() {
            prop_assert_eq!(cs.particle(t, n - 1), x);
            if t > 0 {
                prop_assert_eq!(cs.ancestors_at(t)[n - 1], n - 1);
            }
        }
    }

    #[test]
    fn tables_round_trip(
        cols in (1usize..5, 1usize..30).prop_flat_map(|(k, t)| vec(vec(-1e6..1e6f64, t), k)),
    ) {
        let names = (0..cols.len()).map(|k| format!("s{k}")).collect();
        let table = Table { names, columns: cols };
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("t.csv");
        write_table(&csv_path, &table).unwrap();
        let back = parse_table(std::fs::File::open(&csv_path).unwrap()).unwrap();
        prop_assert_eq!(&back, &table);
        let bin_path = dir.path().join("t.bin");
        write_binary(&bin_path, &table).unwrap();
        prop_assert_eq!(read_binary(&bin_path).unwrap(), table);
    }
}

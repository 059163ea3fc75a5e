use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use intertwine::data::{self, Dataset, Provenance, Trial};
use intertwine::filter::Bandpass;
use intertwine::space::{sample_config, SearchSpace};
use intertwine::stats::{average_ranks, friedman_test, pairwise_bonferroni, signed_rank_test, AccuracyTable, PosthocMethod};
use intertwine::{plan_shapes, Family, Tensor};

fn table(values: Vec<Vec<f64>>) -> AccuracyTable {
    let rows = (0..values.len()).map(|i| format!("s{i}")).collect();
    let cols = (0..values[0].len()).map(|j| format!("m{j}")).collect();
    AccuracyTable::new(rows, cols, values).unwrap()
}

fn accuracy_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..6, 3usize..12).prop_flat_map(|(k, n)| {
        // coarse grid so ties occur
        prop::collection::vec(prop::collection::vec((0u32..=20).prop_map(|v| f64::from(v) / 20.0), k), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranks_sum_to_triangular_number(v in prop::collection::vec(-5i32..5, 1..30)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let (r, _) = average_ranks(&v);
        let n = v.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(r[i] < r[j]);
                }
            }
        }
    }

    #[test]
    fn friedman_is_invariant_to_monotone_row_maps(rows in accuracy_rows()) {
        let a = friedman_test(&table(rows.clone())).unwrap();
        let squashed: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * v * 0.5 + 0.1).collect()).collect();
        let b = friedman_test(&table(squashed)).unwrap();
        prop_assert!((a.chi_square - b.chi_square).abs() < 1e-9);
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert!(a.chi_square >= -1e-12);
    }

    #[test]
    fn friedman_permutes_with_columns(rows in accuracy_rows(), shift in 1usize..5) {
        let k = rows[0].len();
        let rotated: Vec<Vec<f64>> = rows.iter().map(|r| (0..k).map(|j| r[(j + shift) % k]).collect()).collect();
        let a = friedman_test(&table(rows)).unwrap();
        let b = friedman_test(&table(rotated)).unwrap();
        prop_assert!((a.chi_square - b.chi_square).abs() < 1e-9);
        for j in 0..k {
            prop_assert!((b.mean_ranks[j] - a.mean_ranks[(j + shift) % k]).abs() < 1e-12);
        }
        let n = b.mean_ranks.len() as f64;
        prop_assert!((b.mean_ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn bonferroni_bounds_hold(rows in accuracy_rows(), exact in any::<bool>()) {
        let method = if exact { PosthocMethod::WilcoxonExact } else { PosthocMethod::RankZ };
        let k = rows[0].len();
        let res = pairwise_bonferroni(&table(rows), method).unwrap();
        prop_assert_eq!(res.len(), k * (k - 1) / 2);
        for r in &res {
            prop_assert!(r.p_raw >= 0.0 && r.p_raw <= 1.0 + 1e-12);
            prop_assert!(r.p_adjusted >= r.p_raw - 1e-15 && r.p_adjusted <= 1.0);
            prop_assert_eq!(r.significant, r.p_adjusted < 0.05);
        }
    }

    #[test]
    fn signed_rank_is_symmetric_under_negation(d in prop::collection::vec(-6i32..=6, 1..40)) {
        let d: Vec<f64> = d.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (w, p) = signed_rank_test(&d);
        let (wn, pn) = signed_rank_test(&neg);
        let nz = d.iter().filter(|v| **v != 0.0).count() as f64;
        prop_assert!((w + wn - nz * (nz + 1.0) / 2.0).abs() < 1e-9);
        prop_assert!((p - pn).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn sampled_configs_plan_and_respect_the_cap(seed in any::<u64>(), fam in 0usize..3, capped in any::<bool>()) {
        let family = [Family::Intertwined, Family::Parallel, Family::Cascade][fam];
        let cap = capped.then_some(4_000_000);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_config(&SearchSpace::standard(), family, [19, 200], cap, &mut rng).unwrap();
        prop_assert_eq!(s.config.family, family);
        s.config.validate().unwrap();
        SearchSpace::standard().check_membership(&s.config).unwrap();
        let plan = plan_shapes(&s.config).unwrap();
        plan.check_chain().unwrap();
        prop_assert_eq!(plan.output(), &[6]);
        if let Some(c) = cap {
            prop_assert!(plan.total_macs() <= c);
        }
    }

    #[test]
    fn filtfilt_is_linear(a in prop::collection::vec(-1.0f64..1.0, 80), b in prop::collection::vec(-1.0f64..1.0, 80), s in -3.0f64..3.0) {
        let f = Bandpass::motor_band(200.0).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let (fa, fb, fm) = (f.filtfilt(&a).unwrap(), f.filtfilt(&b).unwrap(), f.filtfilt(&mix).unwrap());
        for i in 0..80 {
            prop_assert!((fm[i] - (fa[i] + s * fb[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn split_partitions_trials(per_class in 2usize..8, frac in 0.1f64..0.5, seed in any::<u64>()) {
        let trials: Vec<Trial> = (0..6 * per_class)
            .map(|i| Trial {
                data: Tensor::full(&[2, 3], i as f64),
                label: i % 6,
                subject: 0,
                session: 0,
            })
            .collect();
        let ds = Dataset::new(trials, 200.0, Provenance::Raw).unwrap();
        let per_class_val = (per_class as f64 * frac).round() as usize;
        let Ok((train, val)) = data::split(&ds, frac, seed) else {
            prop_assert_eq!(per_class_val, 0);
            return Ok(());
        };
        prop_assert_eq!(val.len(), 6 * per_class_val);
        prop_assert_eq!(val.class_counts(), [per_class_val; 6]);
        let mut ids: Vec<u64> = train.trials.iter().chain(&val.trials).map(|t| t.data.data()[0] as u64).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..ds.len() as u64).collect::<Vec<_>>());
    }
}

use proptest::prelude::*;
use tpis_core::domain::{ColumnKind, Label, VoteOutcome};
use tpis_core::learners::{fit, LearnerKind, LearnerSpec};
use tpis_core::metrics::roc_auc;
use tpis_core::preprocess::{apply_scaler, balanced_split, fit_scaler, flag_outliers_boxplot, impute_knn, SplitSpec};
use tpis_core::stacking::{
    confidence_from_tally, confidence_score, tally_votes, vote_label, ConfidencePolicy, VotePanel,
};
use tpis_core::synthgen::{default_spec, sample_cohort};

fn sparse_matrix() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    (1usize..5).prop_flat_map(|w| {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, -50.0f64..50.0), w), 2..20)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scaled_cells_lie_in_unit_interval(train in sparse_matrix(), probe in prop::collection::vec(prop::option::of(-200.0f64..200.0), 4)) {
        let state = fit_scaler(&train).unwrap();
        for row in &train {
            for v in apply_scaler(&state, row).unwrap().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let probe = &probe[..state.width().min(probe.len())];
        if probe.len() == state.width() {
            for v in apply_scaler(&state, probe).unwrap().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn imputation_keeps_observed_cells(rows in sparse_matrix(), k in 1usize..6) {
        // Every row and every column needs an observed cell.
        let mut rows = rows;
        for r in rows.iter_mut() {
            if r.iter().all(Option::is_none) {
                r[0] = Some(1.0);
            }
        }
        for c in 0..rows[0].len() {
            if rows.iter().all(|r| r[c].is_none()) {
                rows[0][c] = Some(0.0);
            }
        }
        let kinds = vec![ColumnKind::Numeric; rows[0].len()];
        let filled = impute_knn(&rows, &kinds, k).unwrap();
        for (a, b) in rows.iter().zip(&filled) {
            for (x, y) in a.iter().zip(b) {
                if let Some(x) = x {
                    prop_assert_eq!(x, y);
                }
                prop_assert!(y.is_finite());
            }
        }
    }

    #[test]
    fn balanced_split_partitions(seed in any::<u64>(), per_class in 1usize..25) {
        let d = sample_cohort(&default_spec(), 60, seed % 1000, false).unwrap();
        let (tb, p) = d.class_counts();
        prop_assume!(per_class <= tb.min(p));
        let (train, test) = balanced_split(&d, SplitSpec { train_per_class: per_class, seed }).unwrap();
        prop_assert_eq!(train.class_counts(), (per_class, per_class));
        prop_assert_eq!(train.len() + test.len(), d.len());
        let mut ids: Vec<&str> = train.records().iter().chain(test.records()).map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), d.len());
    }

    #[test]
    fn confidence_takes_admissible_values(probs in prop::collection::vec(0.0f64..=1.0, 2..9), eps in 0.05f64..0.95) {
        let policy = ConfidencePolicy::new(eps, 0.51).unwrap();
        let n = probs.len();
        let cs = confidence_score(&VotePanel::new(probs).unwrap(), &policy);
        let admissible = (0..=n).any(|a| (0..=n).any(|b| confidence_from_tally(a, b) == cs));
        prop_assert!(admissible, "cs {}", cs);
        prop_assert!((0.0..=1.0).contains(&cs));
    }

    #[test]
    fn vote_is_permutation_invariant(probs in prop::collection::vec(0.0f64..=1.0, 2..9), eps in 0.05f64..0.95, rot in 0usize..9, flip in any::<bool>()) {
        let policy = ConfidencePolicy::new(eps, 0.51).unwrap();
        let base = VotePanel::new(probs.clone()).unwrap();
        let mut shuffled = probs;
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        if flip {
            shuffled.reverse();
        }
        let moved = VotePanel::new(shuffled).unwrap();
        prop_assert_eq!(vote_label(&base, &policy), vote_label(&moved, &policy));
        prop_assert_eq!(confidence_score(&base, &policy), confidence_score(&moved, &policy));
        prop_assert_eq!(tally_votes(&base, &policy), tally_votes(&moved, &policy));
    }

    #[test]
    fn confidence_grows_with_margin(p in 0usize..10, d1 in 0usize..10, d2 in 0usize..10) {
        let (lo, hi) = (d1.min(d2), d1.max(d2));
        prop_assert!(confidence_from_tally(p + lo, p) <= confidence_from_tally(p + hi, p));
    }

    #[test]
    fn roc_is_monotone(scores in prop::collection::vec(0.0f64..1.0, 4..40), flags in prop::collection::vec(any::<bool>(), 40)) {
        let mut y: Vec<Label> = flags[..scores.len()].iter().map(|&b| Label::from_tb(b)).collect();
        y[0] = Label::Tb;
        y[1] = Label::Pneumonia;
        let (curve, auc) = roc_auc(&scores, &y).unwrap();
        prop_assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        prop_assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
        prop_assert!((0.0..=1.0).contains(&auc));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn learners_emit_probabilities(
        seed in any::<u64>(),
        rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 8..30),
        probe in prop::collection::vec(prop::collection::vec(-1.0f64..2.0, 3), 5),
    ) {
        let y: Vec<Label> = (0..rows.len()).map(|i| Label::from_tb(i % 2 == 0)).collect();
        for kind in LearnerKind::ALL {
            let model = fit(&LearnerSpec::default_for(kind, seed), &rows, &y).unwrap();
            for x in rows.iter().chain(&probe) {
                let p = model.predict_proba(x).unwrap();
                prop_assert!((0.0..=1.0).contains(&p), "{:?} gave {}", kind, p);
            }
        }
    }
}

/// Outliers in exact integer arithmetic: quartiles times 4, whiskers times 8.
fn boxplot_oracle(values: &[i64]) -> Vec<usize> {
    let mut s = values.to_vec();
    s.sort_unstable();
    let n = s.len() as i64;
    let quartile4 = |num: i64| -> i64 {
        // Position q·(n-1) with q = num/4, scaled by 4.
        let pos4 = num * (n - 1);
        let (lo, frac4) = ((pos4 / 4) as usize, pos4 % 4);
        let hi = if frac4 == 0 { lo } else { lo + 1 };
        4 * s[lo] + (s[hi] - s[lo]) * frac4
    };
    let (q1, q3) = (quartile4(1), quartile4(3));
    let iqr = q3 - q1;
    let (lower8, upper8) = (2 * q1 - 3 * iqr, 2 * q3 + 3 * iqr);
    values.iter().enumerate().filter(|(_, &v)| 8 * v < lower8 || 8 * v > upper8).map(|(i, _)| i).collect()
}

fn check_boxplot(values: &[i64]) {
    let column: Vec<Option<f64>> = values.iter().map(|&v| Some(v as f64)).collect();
    assert_eq!(flag_outliers_boxplot(&column).unwrap(), boxplot_oracle(values), "{values:?}");
}

/// Calls `f` on every array of length `len` over 0..=9.
fn for_each_array(len: usize, f: &mut impl FnMut(&[i64])) {
    let mut a = vec![0i64; len];
    loop {
        f(&a);
        let mut i = 0;
        while i < len && a[i] == 9 {
            a[i] = 0;
            i += 1;
        }
        if i == len {
            return;
        }
        a[i] += 1;
    }
}

/// Calls `f` on every non-decreasing array of length `len` over 0..=9.
fn for_each_sorted(len: usize, start: i64, prefix: &mut Vec<i64>, f: &mut impl FnMut(&[i64])) {
    if prefix.len() == len {
        f(prefix);
        return;
    }
    for v in start..=9 {
        prefix.push(v);
        for_each_sorted(len, v, prefix, f);
        prefix.pop();
    }
}

#[test]
fn boxplot_matches_quartile_oracle() {
    // Every array up to length 6.
    for len in 4..=6 {
        for_each_array(len, &mut |a| check_boxplot(a));
    }
    // Lengths 7 and 8: every multiset, in sorted order and in several
    // rearrangements (the flagged set must follow the values).
    for len in 7..=8 {
        for_each_sorted(len, 0, &mut Vec::new(), &mut |sorted| {
            check_boxplot(sorted);
            let mut r = sorted.to_vec();
            r.reverse();
            check_boxplot(&r);
            r.rotate_left(3);
            check_boxplot(&r);
            let interleaved: Vec<i64> = sorted.iter().step_by(2).chain(sorted.iter().skip(1).step_by(2)).copied().collect();
            check_boxplot(&interleaved);
        });
    }
    let short: Vec<Option<f64>> = vec![Some(1.0), Some(2.0), None, Some(3.0)];
    assert!(flag_outliers_boxplot(&short).is_err());
}

#[test]
fn undetermined_needs_a_level_tally() {
    let policy = ConfidencePolicy::new(0.4, 0.51).unwrap();
    let panel = VotePanel::new(vec![0.5; 4]).unwrap();
    assert_eq!(tally_votes(&panel, &policy), (4, 4));
    assert_eq!(vote_label(&panel, &policy), VoteOutcome::Undetermined);
    assert_eq!(confidence_score(&panel, &policy), 0.0);
}

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erf;
use warntriage_core::corpus::{Origin, WarningRecord};
use warntriage_core::ensemble::Prediction;
use warntriage_core::workflow::{
    assign_band, fit_bands, highlight_disagreements, should_retrain, Band, BandThresholds,
    FeedbackEvent, FeedbackStore, RecordOutcome, RetrainPolicy, Verdict, FALLBACK_HIGH, FALLBACK_MED,
};
use warntriage_core::{seeded_rng, Error};

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Quantile by bisection on the CDF.
fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn standard_normal_thresholds_match_bisection() {
    let t = BandThresholds::from_normal("CWE-476", 0.0, 1.0);
    assert!((t.t_high - normal_quantile(0.95)).abs() < 1e-4);
    assert!((t.t_med - normal_quantile(0.66)).abs() < 1e-4);
    assert!((t.t_high - 1.6449).abs() < 1e-4);
    assert!((t.t_med - 0.4125).abs() < 1e-4);
}

#[test]
fn five_percent_of_normal_scores_are_high() {
    let mut rng = seeded_rng(2024);
    let scores: Vec<f64> = (0..10_000).map(|_| 0.4 + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let t = fit_bands("CWE-476", &scores);
    assert!(!t.fallback);
    let count = |b: Band| scores.iter().filter(|&&s| assign_band(&t, s) == b).count() as f64 / 100.0;
    assert!((count(Band::High) - 5.0).abs() <= 2.0, "{}", count(Band::High));
    assert!((count(Band::Medium) - 29.0).abs() <= 3.0, "{}", count(Band::Medium));
}

#[test]
fn degenerate_scores_use_fixed_cutoffs() {
    let cases: [Vec<f64>; 4] = [vec![], vec![0.7], vec![0.5; 100], (0..29).map(|i| i as f64 / 29.0).collect()];
    for scores in cases {
        let t = fit_bands("CWE-404", &scores);
        assert!(t.fallback, "{scores:?}");
        assert_eq!((t.t_high, t.t_med), (FALLBACK_HIGH, FALLBACK_MED));
    }
    let t = fit_bands("CWE-404", &[0.5; 100]);
    assert_eq!(assign_band(&t, 0.95), Band::High);
    assert_eq!(assign_band(&t, 0.66), Band::Medium);
    assert_eq!(assign_band(&t, 0.6599), Band::Low);
}

proptest! {
    #[test]
    fn bands_are_monotone_in_score(
        scores in prop::collection::vec(0.0f64..1.0, 0..80),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let t = fit_bands("CWE-476", &scores);
        prop_assert!(t.t_high >= t.t_med);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(assign_band(&t, lo) <= assign_band(&t, hi));
    }
}

fn pool(n: usize) -> Vec<WarningRecord> {
    (0..n)
        .map(|i| WarningRecord {
            id: format!("w{i:03}"),
            cwe: if i % 4 == 0 { "CWE-252" } else { "CWE-476" }.into(),
            source: "void f(){}\n".into(),
            file_path: "src/a.c".into(),
            line: 1,
            checker: "NULL_RETURNS".into(),
            origin: Origin::Open,
        })
        .collect()
}

fn event(id: &str, verdict: Verdict, user: &str, version: u64, ts: u64) -> FeedbackEvent {
    FeedbackEvent {
        warning_id: id.into(),
        cwe: String::new(),
        verdict,
        user: user.into(),
        timestamp: ts,
        model_version_at_verdict: version,
    }
}

#[test]
fn replaying_the_log_reconstructs_staged_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feedback.jsonl");
    let open = pool(80);
    let mut store = FeedbackStore::open(&path).unwrap();
    let mut rng = seeded_rng(5);
    for ts in 0..300 {
        let id = format!("w{:03}", rng.random_range(0..80));
        let verdict = if rng.random_bool(0.5) { Verdict::TruePositive } else { Verdict::FalsePositive };
        let user = ["ana", "bo", "cy"][rng.random_range(0..3)];
        let version = rng.random_range(1..3);
        store.record_feedback(&open, event(&id, verdict, user, version, ts)).unwrap();
    }
    let replayed = FeedbackStore::open(&path).unwrap();
    assert_eq!(replayed.events(), store.events());
    for cwe in ["CWE-252", "CWE-476"] {
        for v in 1..3 {
            assert_eq!(replayed.staged(cwe, v), store.staged(cwe, v));
        }
    }
    assert!(store.staged("CWE-476", 1).iter().all(|s| s.cwe == "CWE-476"));
}

#[test]
fn latest_verdict_per_user_wins() {
    let open = pool(8);
    let mut store = FeedbackStore::in_memory();
    let rec = |s: &mut FeedbackStore, e| s.record_feedback(&open, e).unwrap();
    assert_eq!(rec(&mut store, event("w001", Verdict::TruePositive, "ana", 1, 1)), RecordOutcome::Appended);
    assert_eq!(rec(&mut store, event("w001", Verdict::TruePositive, "ana", 1, 2)), RecordOutcome::Unchanged);
    rec(&mut store, event("w001", Verdict::FalsePositive, "ana", 1, 3));
    rec(&mut store, event("w002", Verdict::FalsePositive, "bo", 1, 4));
    rec(&mut store, event("w002", Verdict::TruePositive, "ana", 1, 5));
    let staged = store.staged("CWE-476", 1);
    let labels: Vec<(&str, u8)> = staged.iter().map(|s| (s.warning_id.as_str(), s.label)).collect();
    assert_eq!(labels, [("w001", 0), ("w002", 1)]);
    assert!(store.staged("CWE-476", 2).is_empty());
    assert!(matches!(
        store.record_feedback(&open, event("nope", Verdict::TruePositive, "ana", 1, 6)),
        Err(Error::UnknownWarning(_))
    ));
}

#[test]
fn retrain_fires_at_fifty_labels() {
    let open = pool(200);
    let mut store = FeedbackStore::in_memory();
    let policy = RetrainPolicy::default();
    let ids: Vec<&WarningRecord> = open.iter().filter(|r| r.cwe == "CWE-476").collect();
    for (i, r) in ids.iter().take(50).enumerate() {
        assert!(!should_retrain(&store, "CWE-476", 1, &policy), "after {i}");
        store.record_feedback(&open, event(&r.id, Verdict::TruePositive, "ana", 1, i as u64)).unwrap();
    }
    assert!(should_retrain(&store, "CWE-476", 1, &policy));
    assert!(!should_retrain(&store, "CWE-476", 2, &policy));
    assert!(!should_retrain(&store, "CWE-252", 1, &policy));
}

#[test]
fn dismissed_high_band_positives_are_highlighted() {
    let open = pool(4);
    let mut store = FeedbackStore::in_memory();
    for id in ["w000", "w001", "w002"] {
        store.record_feedback(&open, event(id, Verdict::FalsePositive, "ana", 1, 0)).unwrap();
    }
    let pred = |id: &str, label: u8| Prediction {
        warning_id: id.into(),
        member_probs: [0.9; 3],
        votes: [label; 3],
        final_label: label,
        score: 0.9,
    };
    let items = [
        (pred("w000", 1), Band::High),
        (pred("w001", 1), Band::Medium),
        (pred("w002", 0), Band::High),
        (pred("w003", 1), Band::High),
    ];
    assert_eq!(highlight_disagreements(&items, &store), ["w000"]);
}

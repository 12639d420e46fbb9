use rand::Rng;
use warntriage_core::ensemble::{
    bootstrap_sample, train_cwe_ensemble, vote, EnsembleHyper, EnsembleModel, Registry,
};
use warntriage_core::learners::{ForestHyper, GbtHyper, NetHyper};
use warntriage_core::linalg::Matrix;
use warntriage_core::{seeded_rng, Error};

fn small_hyper() -> EnsembleHyper {
    EnsembleHyper {
        gbt: GbtHyper { n_rounds: 15, ..GbtHyper::default() },
        forest: ForestHyper { n_estimators: 8, ..ForestHyper::default() },
        net: NetHyper { units: 12, max_epochs: 15, ..NetHyper::default() },
    }
}

fn blobs(seed: u64, n: usize) -> (Matrix, Vec<u8>) {
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = (i % 3 != 0) as u8;
        let c = if label == 1 { 0.8 } else { -0.8 };
        rows.push((0..4).map(|_| c + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        y.push(label);
    }
    (Matrix::from_rows(&rows), y)
}

fn trained(cwe: &str, seed: u64) -> EnsembleModel {
    let (x, y) = blobs(seed, 60);
    train_cwe_ensemble(cwe, &x, &y, &small_hyper(), seed).unwrap()
}

#[test]
fn bootstrap_covers_about_632_percent() {
    let rows: Vec<usize> = (0..1000).collect();
    for seed in 0..5 {
        let mut sample = bootstrap_sample(&rows, seed);
        assert_eq!(sample.len(), 1000);
        sample.sort_unstable();
        sample.dedup();
        let frac = sample.len() as f64 / 1000.0;
        assert!((frac - 0.632).abs() < 0.05, "seed {seed}: {frac}");
    }
}

#[test]
fn all_vote_patterns_match_brute_force_majority() {
    let (lo, hi) = (0.31, 0.77);
    for mask in 0..8u8 {
        let probs = [0, 1, 2].map(|k| if mask >> k & 1 == 1 { hi } else { lo });
        let (label, score) = vote(probs);
        assert_eq!(label, (mask.count_ones() >= 2) as u8, "pattern {mask:03b}");
        assert!((score - probs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }
    assert_eq!(vote([0.5, 0.5, 0.0]).0, 1);
    assert_eq!(vote([0.5, 0.4999, 0.0]).0, 0);
}

#[test]
fn vote_ignores_member_order_and_small_perturbations() {
    let mut rng = seeded_rng(9);
    for _ in 0..500 {
        let p: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.0..1.0));
        let (label, score) = vote(p);
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let (l2, s2) = vote(perm.map(|i| p[i]));
            assert_eq!(l2, label);
            assert!((s2 - score).abs() < 1e-12);
        }
        if p.iter().all(|v| (v - 0.5).abs() > 1e-6) {
            let nudged = p.map(|v| v + rng.random_range(-1e-7..1e-7));
            assert_eq!(vote(nudged).0, label);
        }
    }
}

#[test]
fn members_see_different_resamples() {
    let m = trained("CWE-476", 11);
    let s = m.bootstrap_seeds;
    assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
    assert_eq!(m, trained("CWE-476", 11));
    assert_ne!(m.members, trained("CWE-476", 12).members);
}

#[test]
fn predictions_follow_the_vote() {
    let m = trained("CWE-252", 5);
    let (x, _) = blobs(77, 30);
    for r in 0..x.rows {
        let p = m.predict(&format!("w{r}"), x.row(r)).unwrap();
        let (label, score) = vote(p.member_probs);
        assert_eq!(p.final_label, label);
        assert_eq!(p.score, score);
        assert_eq!(p.votes, p.member_probs.map(|v| (v >= 0.5) as u8));
    }
    assert!(matches!(
        m.predict("w", &[0.0; 3]),
        Err(Error::DimensionMismatch { expected: 4, found: 3 })
    ));
}

#[test]
fn registry_round_trip_is_bit_exact() {
    let cwes = [
        "CWE-119", "CWE-125", "CWE-252", "CWE-394", "CWE-404", "CWE-457", "CWE-476", "CWE-561",
        "CWE-590", "CWE-667",
    ];
    let mut reg = Registry::default();
    for (i, cwe) in cwes.iter().enumerate() {
        assert_eq!(reg.publish(trained(cwe, i as u64)), 1);
    }
    assert_eq!(reg.publish(trained("CWE-476", 99)), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.json");
    reg.save(&path).unwrap();
    let back = Registry::load(&path).unwrap();
    assert_eq!(back.models.len(), 10);
    assert_eq!(back.to_json(), reg.to_json());

    let mut rng = seeded_rng(3);
    for cwe in cwes {
        let (a, b) = (reg.get(cwe).unwrap(), back.get(cwe).unwrap());
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (pa, pb) = (a.member_probs(&x).unwrap(), b.member_probs(&x).unwrap());
            assert_eq!(pa.map(f64::to_bits), pb.map(f64::to_bits));
        }
    }
    assert!(matches!(back.get("CWE-000"), Err(Error::UnknownCwe(_))));
}

#[test]
fn corrupt_registries_are_rejected() {
    let mut reg = Registry::default();
    reg.publish(trained("CWE-476", 1));
    let json = reg.to_json();

    assert!(matches!(Registry::from_json(&json[..json.len() / 2]), Err(Error::Schema(_))));
    let bumped = json.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
    assert!(matches!(Registry::from_json(&bumped), Err(Error::SchemaVersion { expected: 1, .. })));
    let misfiled = json.replacen("{\"CWE-476\":", "{\"CWE-999\":", 1);
    assert!(matches!(Registry::from_json(&misfiled), Err(Error::Schema(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.json");
    std::fs::write(&path, "not json").unwrap();
    assert!(Registry::load(&path).is_err());
    assert!(matches!(Registry::load(dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn identical_retrain_keeps_the_version() {
    let mut reg = Registry::default();
    assert_eq!(reg.publish_if_changed(trained("CWE-476", 1)), (1, true));
    let before = reg.to_json();
    assert_eq!(reg.publish_if_changed(trained("CWE-476", 1)), (1, false));
    assert_eq!(reg.to_json(), before);
    assert_eq!(reg.publish_if_changed(trained("CWE-476", 2)), (2, true));
}

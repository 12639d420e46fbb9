use proptest::prelude::*;
use rand::Rng;
use warntriage_core::evaluation::{
    auroc, compute_metrics, forest_grid, gbt_grid, grid_search, joint_search, net_grid,
    render_json, render_text, summary_report, LearnerHyper, MetricsReport, TrainVal,
};
use warntriage_core::learners::{ForestHyper, GbtHyper, NetHyper};
use warntriage_core::linalg::Matrix;
use warntriage_core::{seeded_rng, Error};

/// Published per-CWE results: accuracy, precision, recall, F1, AUROC.
const TABLE3: [(&str, [f64; 5]); 10] = [
    ("CWE-476", [86.77, 81.40, 89.95, 85.46, 88.86]),
    ("CWE-404", [80.94, 85.17, 93.25, 89.02, 84.27]),
    ("CWE-561", [76.93, 80.94, 86.15, 83.46, 80.35]),
    ("CWE-252", [85.84, 88.71, 79.17, 83.66, 79.64]),
    ("CWE-457", [92.56, 94.24, 94.43, 94.33, 94.86]),
    ("CWE-119", [80.07, 83.35, 84.18, 83.76, 77.77]),
    ("CWE-394", [74.39, 75.42, 73.63, 74.51, 72.98]),
    ("CWE-125", [75.84, 78.55, 81.93, 80.20, 73.03]),
    ("CWE-590", [87.31, 87.81, 91.61, 89.66, 84.71]),
    ("CWE-667", [62.43, 63.03, 63.35, 63.19, 56.48]),
];

fn hundredths(v: f64) -> u64 {
    (v * 100.0).round() as u64
}

/// Confusion counts realizing a precision/recall pair exactly.
fn confusion_for(precision: f64, recall: f64) -> MetricsReport {
    let (p, r) = (hundredths(precision), hundredths(recall));
    MetricsReport::from_confusion(p * r, r * (10_000 - p), 0, p * (10_000 - r))
}

#[test]
fn published_f1_follows_from_precision_and_recall() {
    for (cwe, [_, p, r, f1, _]) in TABLE3 {
        let m = confusion_for(p, r);
        assert!((m.precision - p).abs() < 1e-9 && (m.recall - r).abs() < 1e-9, "{cwe}");
        // Independent harmonic mean.
        let oracle = 2.0 / (1.0 / p + 1.0 / r);
        assert!((m.f1 - oracle).abs() < 1e-9, "{cwe}");
        assert!((m.f1 - f1).abs() <= 0.02, "{cwe}: {} vs {f1}", m.f1);
    }
}

#[test]
fn published_column_means() {
    let reports: Vec<MetricsReport> = TABLE3
        .iter()
        .map(|(cwe, [a, p, r, f1, auc])| MetricsReport {
            cwe: cwe.to_string(),
            accuracy: *a,
            precision: *p,
            recall: *r,
            f1: *f1,
            auroc: Some(*auc),
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        })
        .collect();
    let s = summary_report(&reports).unwrap();
    assert_eq!(format!("{:.3}", s.f1), "82.725");
    assert_eq!(format!("{:.3}", s.recall), "83.765");
    assert_eq!(format!("{:.3}", s.auroc.unwrap()), "79.295");
    assert_eq!(format!("{:.3}", s.precision), "81.862");

    let text = render_text(&reports, &s);
    assert_eq!(text.lines().count(), 12);
    assert!(text.lines().last().unwrap().contains("82.725"));
    let json: serde_json::Value = serde_json::from_str(&render_json(&reports, &s)).unwrap();
    assert_eq!(json["reports"].as_array().unwrap().len(), 10);
    assert_eq!(json["reports"][0]["fn"], 0);
}

fn pairwise_auroc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn labeled_scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 19.0), n),
        )
    })
    .prop_filter("both classes", |(l, _)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_count((labels, scores) in labeled_scores()) {
        let a = auroc(&labels, &scores).unwrap();
        prop_assert!((a - pairwise_auroc(&labels, &scores)).abs() < 1e-12);
    }

    #[test]
    fn auroc_is_invariant_under_monotone_maps((labels, scores) in labeled_scores()) {
        let a = auroc(&labels, &scores).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((a - auroc(&labels, &mapped).unwrap()).abs() < 1e-12);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((a + auroc(&flipped, &scores).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn metrics_edge_cases() {
    assert!(matches!(auroc(&[1, 1], &[0.2, 0.3]), Err(Error::AurocUndefined)));
    assert!(matches!(compute_metrics(&[1], &[1, 0], &[0.1]), Err(Error::LengthMismatch(_))));
    let m = compute_metrics(&[0, 0], &[0, 0], &[0.1, 0.2]).unwrap();
    assert_eq!((m.precision, m.recall, m.f1, m.accuracy, m.auroc), (0.0, 0.0, 0.0, 100.0, None));
    let m = compute_metrics(&[1, 0, 1, 0], &[1, 1, 0, 0], &[0.9, 0.6, 0.4, 0.1]).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 1, 1));
    assert_eq!(m.auroc, Some(75.0));
}

fn split_blobs(seed: u64) -> (Matrix, Vec<u8>, Matrix, Vec<u8>) {
    let mut rng = seeded_rng(seed);
    let mut make = |n: usize| {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 0.6 } else { -0.6 };
            rows.push((0..3).map(|_| c + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            y.push(label);
        }
        (Matrix::from_rows(&rows), y)
    };
    let (xt, yt) = make(40);
    let (xv, yv) = make(20);
    (xt, yt, xv, yv)
}

#[test]
fn grids_are_exhaustive_and_pick_the_argmax() {
    let (xt, yt, xv, yv) = split_blobs(1);
    let data = TrainVal { x_train: &xt, y_train: &yt, x_val: &xv, y_val: &yv };
    let quick_net = NetHyper { max_epochs: 2, ..NetHyper::default() };
    let grids = [
        (gbt_grid(&GbtHyper { n_rounds: 5, ..GbtHyper::default() }), 60),
        (net_grid(&quick_net), 108),
        (forest_grid(&ForestHyper::default()), 27),
    ];
    for (grid, expected) in grids {
        assert_eq!(grid.len(), expected);
        let mut unique: Vec<String> = grid.iter().map(|h| serde_json::to_string(h).unwrap()).collect();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), expected, "duplicate combinations");

        let res = grid_search(&grid, data, 3).unwrap();
        assert_eq!(res.table.len(), expected);
        assert!(res.table.iter().zip(&grid).all(|(row, h)| &row.hyper == h));
        let max = res.table.iter().map(|r| r.f1).fold(f64::NEG_INFINITY, f64::max);
        let first = res.table.iter().position(|r| r.f1 == max).unwrap();
        assert_eq!(res.best, first);
        assert_eq!(res.best_hyper(), &grid[first]);
    }
}

#[test]
fn joint_search_scores_every_triple() {
    let (xt, yt, xv, yv) = split_blobs(2);
    let data = TrainVal { x_train: &xt, y_train: &yt, x_val: &xv, y_val: &yv };
    let g: Vec<LearnerHyper> = gbt_grid(&GbtHyper { n_rounds: 5, ..GbtHyper::default() })[..2].to_vec();
    let f: Vec<LearnerHyper> = forest_grid(&ForestHyper::default())[..3].to_vec();
    let n: Vec<LearnerHyper> = net_grid(&NetHyper { max_epochs: 2, ..NetHyper::default() })[..2].to_vec();
    let res = joint_search(&g, &f, &n, data, 0).unwrap();
    assert_eq!(res.table.len(), 12);
    assert_eq!((res.table[0].0, res.table[0].1, res.table[0].2), (0, 0, 0));
    assert_eq!((res.table[11].0, res.table[11].1, res.table[11].2), (1, 2, 1));
    let max = res.table.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(res.table[res.best].3, max);
}

#[test]
fn grid_rejects_bad_input() {
    let (xt, yt, xv, _) = split_blobs(3);
    let zeros = vec![0u8; xv.rows];
    let data = TrainVal { x_train: &xt, y_train: &yt, x_val: &xv, y_val: &zeros };
    assert!(matches!(grid_search(&gbt_grid(&GbtHyper::default()), data, 0), Err(Error::DegenerateLabels)));
    assert!(matches!(grid_search(&[], data, 0), Err(Error::GridExhausted)));
}

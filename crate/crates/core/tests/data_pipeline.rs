mod support;

use attngcn::autodiff::Matrix;
use attngcn::data::{
    make_folds, read_csv, select_features, standardize, synth_planted, write_csv, Dataset,
    FeatureSelection, SynthSpec,
};
use proptest::prelude::*;
use support::{rng, uniform};

/// Pearson r against integer labels, computed from scratch.
fn oracle_r(x: &[f64], labels: &[usize]) -> f64 {
    let n = x.len() as f64;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let c: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    c / (vx * vy).sqrt()
}

fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let features = uniform(n, d, -3.0, 3.0, &mut rng(seed));
    let labels = (0..n).map(|i| i % 3).collect();
    let names = (0..d).map(|j| format!("c{j}")).collect();
    Dataset::new(features, labels, names, vec!["a".into(), "b".into(), "c".into()], "y").unwrap()
}

#[test]
fn planted_columns_correlate_with_labels() {
    let (ds, informative) = synth_planted(&SynthSpec::default()).unwrap();
    assert_eq!(informative, vec![4, 10, 34, 41]);
    let frozen = [
        (4, 0.90606910335325463),
        (10, 0.82912741513937105),
        (34, 0.92333794673270808),
        (41, 0.81927012343565964),
    ];
    for (j, r) in frozen {
        let got = oracle_r(&ds.features.column(j).to_vec(), &ds.labels);
        assert!((got - r).abs() < 1e-12, "column {j}: {got}");
        assert!(got.abs() > 0.3);
    }
    let quiet = (0..50)
        .filter(|j| !informative.contains(j))
        .filter(|&j| oracle_r(&ds.features.column(j).to_vec(), &ds.labels).abs() < 0.15)
        .count();
    assert!(quiet >= 44, "{quiet} of 46 uninformative columns below 0.15");
}

#[test]
fn library_pearson_agrees_with_oracle() {
    let (ds, _) = synth_planted(&SynthSpec::default()).unwrap();
    for j in 0..ds.feature_count() {
        let col = ds.features.column(j).to_vec();
        let r = attngcn::report::pearson(&col, &ds.labels).unwrap().unwrap();
        assert!((r - oracle_r(&col, &ds.labels)).abs() < 1e-12);
    }
}

#[test]
fn synth_is_bit_reproducible_and_balanced() {
    let spec = SynthSpec::default();
    let (a, ia) = synth_planted(&spec).unwrap();
    let (b, ib) = synth_planted(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(ia, ib);
    assert_eq!(a.features.dim(), (300, 50));
    assert_eq!(a.feature_names[0], "f00");
    assert_eq!(a.feature_names[49], "f49");
    for c in 0..3 {
        assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 100);
    }
    let other = synth_planted(&SynthSpec { seed: 8, ..spec }).unwrap().0;
    assert_ne!(a.features, other.features);
}

#[test]
fn noiseless_planted_columns_separate_classes() {
    let spec = SynthSpec {
        noise_sigma: 0.0,
        ..SynthSpec::default()
    };
    let (ds, informative) = synth_planted(&spec).unwrap();
    // Every node of a class sits at the same point in the informative subspace.
    for c in 0..3 {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        for &j in &informative {
            let v = ds.features[[rows[0], j]];
            assert!(rows.iter().all(|&i| ds.features[[i, j]] == v));
        }
    }
    let sel = FeatureSelection::Include(informative.iter().map(|&j| ds.feature_names[j].clone()).collect());
    let sub = select_features(&ds, &sel).unwrap();
    let centroids: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let i = sub.labels.iter().position(|&l| l == c).unwrap();
            sub.features.row(i).to_vec()
        })
        .collect();
    for a in 0..3 {
        for b in a + 1..3 {
            assert_ne!(centroids[a], centroids[b]);
        }
    }
}

#[test]
fn csv_round_trip() {
    let ds = random_dataset(12, 4, 3);
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), "y").unwrap();
    assert_eq!(back.feature_names, ds.feature_names);
    assert_eq!(back.labels, ds.labels);
    for (a, b) in back.features.iter().zip(ds.features.iter()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let mut again = Vec::new();
    write_csv(&back, &mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn csv_missing_values_and_label_order() {
    let text = "id_a,label,id_b\n1.0,10,\n,2,4.0\n3.0,10,8.0\n";
    let ds = read_csv(text.as_bytes(), "label").unwrap();
    assert_eq!(ds.class_names, vec!["2", "10"]);
    assert_eq!(ds.labels, vec![1, 0, 1]);
    assert_eq!(ds.features[[1, 0]], 2.0);
    assert_eq!(ds.features[[0, 1]], 6.0);

    let err = read_csv("a,label\nx,1\n".as_bytes(), "label").unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains('a'));
    assert!(read_csv("a,b\n1,2\n".as_bytes(), "label").is_err());
}

#[test]
fn train_statistics_differ_from_whole_data_statistics() {
    let ds = random_dataset(20, 3, 5);
    let train: Vec<usize> = (0..20).filter(|i| i % 4 != 0).collect();
    let (fold, stats) = standardize(&ds, Some(&train));
    let (whole, _) = standardize(&ds, None);
    // Direct recomputation for column 0 with population std over train rows.
    let col: Vec<f64> = train.iter().map(|&i| ds.features[[i, 0]]).collect();
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
    assert!((stats[0].mean - mean).abs() < 1e-12);
    assert!((stats[0].std - std).abs() < 1e-12);
    assert!((fold.features[[0, 0]] - (ds.features[[0, 0]] - mean) / std).abs() < 1e-12);
    assert!((fold.features[[0, 0]] - whole.features[[0, 0]]).abs() > 1e-6);
}

#[test]
fn stratified_folds_keep_proportions() {
    let labels: Vec<usize> = (0..97).map(|i| if i < 50 { 0 } else if i < 80 { 1 } else { 2 }).collect();
    let plan = make_folds(&labels, 10, true, 4).unwrap();
    for fold in 0..10 {
        let test = plan.test_indices(fold);
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count() as f64;
            let got = test.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((got - total / 10.0).abs() <= 1.0, "fold {fold} class {c}: {got}");
        }
    }
    let again = make_folds(&labels, 10, true, 4).unwrap();
    assert_eq!(plan.to_json().unwrap(), again.to_json().unwrap());
    assert!(make_folds(&labels, 1, true, 4).is_err());
    assert!(make_folds(&labels[..5], 10, false, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selection_commutes_with_standardization(
        seed in 0u64..1000,
        keep in prop::collection::vec(any::<bool>(), 6),
    ) {
        prop_assume!(keep.iter().any(|&k| k));
        let ds = random_dataset(18, 6, seed);
        let train: Vec<usize> = (0..18).filter(|i| i % 3 != 1).collect();
        let names: Vec<String> = ds.feature_names.iter().zip(&keep).filter(|(_, &k)| k).map(|(n, _)| n.clone()).collect();
        let sel = FeatureSelection::Include(names);

        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let loaded = read_csv(buf.as_slice(), "y").unwrap();
        let a = select_features(&standardize(&loaded, Some(&train)).0, &sel).unwrap();
        let b = standardize(&select_features(&loaded, &sel).unwrap(), Some(&train)).0;
        prop_assert_eq!(&a.feature_names, &b.feature_names);
        for (x, y) in a.features.iter().zip(b.features.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn synth_relabelling_equivariance(seed in 0u64..500) {
        let spec = SynthSpec { n: 60, d: 10, seed, ..SynthSpec::default() };
        let (ds, informative) = synth_planted(&spec).unwrap();
        prop_assert_eq!(informative.len(), 4);
        prop_assert!(informative.windows(2).all(|w| w[0] < w[1]));
        // Reordering the columns and rows of the output is a pure relabelling:
        // correlations follow the columns they came from.
        let rev: Vec<String> = ds.feature_names.iter().rev().cloned().collect();
        let sub = select_features(&ds, &FeatureSelection::Include(rev)).unwrap();
        prop_assert_eq!(&sub.feature_names, &ds.feature_names);
        let perm: Vec<usize> = (0..60).rev().collect();
        let rows = Matrix::from_shape_fn(ds.features.dim(), |(i, j)| ds.features[[perm[i], j]]);
        let labels: Vec<usize> = perm.iter().map(|&i| ds.labels[i]).collect();
        for j in 0..10 {
            let a = oracle_r(&ds.features.column(j).to_vec(), &ds.labels);
            let b = oracle_r(&rows.column(j).to_vec(), &labels);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

use super::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

pub(crate) fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, depth: usize) -> TreeNode {
    if depth == 0 || rng.gen_bool(0.25) {
        return TreeNode::leaf(rng.gen_range(-2.0..2.0), rng.gen_range(1..20) as f64);
    }
    let f = rng.gen_range(0..n_features);
    let thr = rng.gen_range(-1.0..1.0);
    TreeNode::split(
        f,
        thr,
        random_tree(rng, n_features, depth - 1),
        random_tree(rng, n_features, depth - 1),
    )
}

pub(crate) fn random_model(seed: u64, n_features: usize, max_depth: usize) -> GbtModel {
    let mut rng = crate::seed::rng(seed, "test/gbt-model");
    let n_trees = rng.gen_range(1..4);
    let mut m = GbtModel::constant(
        rng.gen_range(-1.0..1.0),
        names(n_features),
        GbtParams::default(),
    );
    m.trees = (0..n_trees)
        .map(|_| random_tree(&mut rng, n_features, max_depth))
        .collect();
    m
}

fn stump() -> GbtModel {
    let mut m = GbtModel::constant(0.0, names(3), GbtParams::default());
    m.trees.push(TreeNode::split(
        0,
        0.5,
        TreeNode::leaf(0.1, 10.0),
        TreeNode::leaf(0.9, 10.0),
    ));
    m
}

#[test]
fn constant_target_has_no_trees() {
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![i as f64, (i * 7 % 5) as f64])
        .collect();
    let y = vec![0.37; 30];
    let m = fit(&rows, &y, &GbtParams::default(), names(2)).unwrap();
    assert!(m.trees.is_empty());
    assert_eq!(m.predict(&[100.0, -3.0]).unwrap(), 0.37);
}

#[test]
fn constant_features_give_base_only() {
    let rows = vec![vec![1.0, 2.0]; 10];
    let y: Vec<f64> = (0..10).map(f64::from).collect();
    let m = fit(&rows, &y, &GbtParams::default(), names(2)).unwrap();
    assert!(m.trees.is_empty());
    assert_eq!(m.base_score, 4.5);
}

#[test]
fn empty_data_is_an_error() {
    assert!(fit(&[], &[], &GbtParams::default(), names(1)).is_err());
    assert!(fit(&[vec![1.0]], &[f64::NAN], &GbtParams::default(), names(1)).is_err());
}

#[test]
fn step_function_converges_geometrically() {
    let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i as f64 - 50.0) / 10.0]).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| if r[0] < 0.0 { 0.0 } else { 1.0 })
        .collect();
    let params = GbtParams {
        learning_rate: 0.3,
        max_depth: 1,
        n_rounds: 50,
        ..Default::default()
    };
    let m = fit(&rows, &y, &params, names(1)).unwrap();
    assert_eq!(m.trees.len(), 50);
    // Each side's residual shrinks by 1 - eta*n/(n+lambda) per round.
    let oracle = 0.5 * (1.0 - 0.3 * 50.0 / 51.0f64).powi(50);
    let worst = rows
        .iter()
        .zip(&y)
        .map(|(r, t)| (m.predict(r).unwrap() - t).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3);
    assert!((worst - oracle).abs() < 1e-12, "{worst} vs {oracle}");
    for t in &m.trees {
        if let TreeNode::Internal { threshold, .. } = t {
            assert_eq!(*threshold, 0.0);
        }
    }
}

#[test]
fn ties_prefer_lower_feature_then_lower_threshold() {
    // Identical columns: both features tie, feature 0 must win.
    let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, i as f64]).collect();
    let y = vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    let params = GbtParams {
        max_depth: 1,
        n_rounds: 1,
        ..Default::default()
    };
    let m = fit(&rows, &y, &params, names(2)).unwrap();
    match &m.trees[0] {
        TreeNode::Internal {
            feature, threshold, ..
        } => {
            assert_eq!(*feature, 0);
            // Splits at 2 and 6 have equal gain; the lower threshold wins.
            assert_eq!(*threshold, 2.0);
        }
        _ => panic!("expected a split"),
    }
}

#[test]
fn predict_traces_stump() {
    let m = stump();
    assert_eq!(m.predict(&[0.2, 0.0, 0.0]).unwrap(), 0.1);
    assert_eq!(m.predict(&[0.7, 0.0, 0.0]).unwrap(), 0.9);
    assert_eq!(m.predict(&[f64::NAN, 0.0, 0.0]).unwrap(), 0.1);
    assert!(matches!(
        m.predict(&[0.2]),
        Err(Error::DimensionMismatch {
            expected: 3,
            actual: 1
        })
    ));
    let empty = GbtModel::constant(1.5, names(2), GbtParams::default());
    assert_eq!(empty.predict(&[9.0, 9.0]).unwrap(), 1.5);
}

#[test]
fn stump_shap_example() {
    let mut m = GbtModel::constant(0.0, names(3), GbtParams::default());
    m.trees.push(TreeNode::split(
        0,
        0.5,
        TreeNode::leaf(0.0, 50.0),
        TreeNode::leaf(1.0, 50.0),
    ));
    let a = tree_shap(&m, &[0.9, 3.0, -2.0]).unwrap();
    assert_eq!(a.base, 0.5);
    assert!((a.phi[0] - 0.5).abs() < 1e-12);
    assert_eq!(&a.phi[1..], &[0.0, 0.0]);
    let b = brute_force_shap(&m, &[0.9, 3.0, -2.0]).unwrap();
    assert!((b.phi[0] - 0.5).abs() < 1e-12);
}

#[test]
fn single_leaf_and_missing_cover() {
    let mut m = GbtModel::constant(0.25, names(2), GbtParams::default());
    m.trees.push(TreeNode::leaf(0.5, 4.0));
    let a = brute_force_shap(&m, &[1.0, 2.0]).unwrap();
    assert_eq!(a.phi, vec![0.0, 0.0]);
    assert_eq!(a.base, 0.75);
    m.trees[0] = TreeNode::Leaf {
        value: 0.5,
        cover: None,
    };
    assert!(matches!(tree_shap(&m, &[1.0, 2.0]), Err(Error::Model(_))));
    let wide = GbtModel::constant(0.0, names(13), GbtParams::default());
    assert!(brute_force_shap(&wide, &[0.0; 13]).is_err());
}

#[test]
fn symmetric_duplicates_share_credit() {
    let mut m = GbtModel::constant(0.0, names(2), GbtParams::default());
    let branch =
        |v: f64| TreeNode::split(1, 0.0, TreeNode::leaf(v, 5.0), TreeNode::leaf(v + 1.0, 5.0));
    m.trees
        .push(TreeNode::split(0, 0.0, branch(0.0), branch(1.0)));
    let a = brute_force_shap(&m, &[1.0, 1.0]).unwrap();
    assert!((a.phi[0] - a.phi[1]).abs() < 1e-12);
}

#[test]
fn fitted_trees_have_consistent_cover() {
    let mut rng = crate::seed::rng(3, "test/cover");
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 + r[1].sin()).collect();
    let m = fit(&rows, &y, &GbtParams::default(), names(3)).unwrap();
    fn check(n: &TreeNode) {
        if let TreeNode::Internal {
            left, right, cover, ..
        } = n
        {
            assert_eq!(
                cover.unwrap(),
                left.cover().unwrap() + right.cover().unwrap()
            );
            check(left);
            check(right);
        }
    }
    for t in &m.trees {
        assert_eq!(t.cover(), Some(60.0));
        assert!(t.depth() <= 4);
        check(t);
    }
}

#[test]
fn training_loss_is_monotone_and_deterministic() {
    let mut rng = crate::seed::rng(5, "test/mono");
    let rows: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r[0] * r[1] + rng.gen_range(-0.1..0.1) + r[3])
        .collect();
    let (m, hist) = fit_with_validation(&rows, &y, None, &GbtParams::default(), names(4)).unwrap();
    assert!(hist.train_loss.windows(2).all(|w| w[1] <= w[0]));
    let again = fit(&rows, &y, &GbtParams::default(), names(4)).unwrap();
    assert_eq!(m.to_json().unwrap(), again.to_json().unwrap());
}

#[test]
fn early_stopping_keeps_best_prefix() {
    let mut rng = crate::seed::rng(8, "test/early");
    let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    let y: Vec<f64> = rows.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
    let vx: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    let vy: Vec<f64> = vx.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
    let (m, hist) =
        fit_with_validation(&rows, &y, Some((&vx, &vy)), &GbtParams::default(), names(1)).unwrap();
    assert!(hist.valid_loss.len() < 200);
    let best = hist
        .valid_loss
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    assert_eq!(hist.valid_loss[m.trees.len() - 1], best);
}

#[test]
fn monotone_transform_keeps_partitions() {
    let mut rng = crate::seed::rng(6, "test/transform");
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| (r[0] > 0.3) as u8 as f64 + 0.5 * r[1])
        .collect();
    let warped: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r[0].exp(), r[1] * 3.0 + 1.0])
        .collect();
    let params = GbtParams {
        n_rounds: 30,
        ..Default::default()
    };
    let a = fit(&rows, &y, &params, names(2)).unwrap();
    let b = fit(&warped, &y, &params, names(2)).unwrap();
    assert_eq!(a.trees.len(), b.trees.len());
    for (r, w) in rows.iter().zip(&warped) {
        assert_eq!(a.predict(r).unwrap(), b.predict(w).unwrap());
    }
}

#[test]
fn rankings_and_top_k() {
    let m = stump();
    let rows = vec![
        vec![0.2, 1.0, 1.0],
        vec![0.8, 2.0, 0.0],
        vec![0.6, 0.0, 5.0],
    ];
    let ranking = mean_abs_shap_ranking(&m, &rows).unwrap();
    assert_eq!(ranking[0].name, "f0");
    assert_eq!((ranking[1].index, ranking[2].index), (1, 2));
    assert_eq!(ranking[2].score, 0.0);
    let mut reversed = rows.clone();
    reversed.reverse();
    assert_eq!(mean_abs_shap_ranking(&m, &reversed).unwrap(), ranking);
    assert_eq!(select_top_k(&ranking, 0).unwrap(), Vec::<String>::new());
    assert_eq!(select_top_k(&ranking, 3).unwrap(), vec!["f0", "f1", "f2"]);
    assert!(select_top_k(&ranking, 4).is_err());
    assert_eq!(gain_ranking(&m)[0].score, 0.0);
}

#[test]
fn save_load_round_trip() {
    let m = random_model(1, 4, 3);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    m.save(&p).unwrap();
    assert_eq!(GbtModel::load(&p).unwrap(), m);
    let csv = dir.path().join("a.csv");
    let a = tree_shap(&m, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    write_attributions_csv(&csv, &["u1".into()], &m.feature_names, &[a]).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("utterance_id,feature,phi\nu1,f0,"));
}

proptest! {
    #[test]
    fn tree_shap_matches_brute_force(seed in any::<u64>(), nf in 1usize..=4, depth in 0usize..=3) {
        let m = random_model(seed, nf, depth);
        let mut rng = crate::seed::rng(seed, "test/gbt-x");
        let x: Vec<f64> = (0..nf).map(|_| if rng.gen_bool(0.1) { f64::NAN } else { rng.gen_range(-1.5..1.5) }).collect();
        let fast = tree_shap(&m, &x).unwrap();
        let slow = brute_force_shap(&m, &x).unwrap();
        prop_assert!((fast.base - slow.base).abs() < 1e-9);
        for (a, b) in fast.phi.iter().zip(&slow.phi) {
            prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", fast.phi, slow.phi);
        }
        prop_assert!((fast.output() - m.predict(&x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn unused_features_get_zero(seed in any::<u64>()) {
        let mut m = random_model(seed, 3, 3);
        m.feature_names.push("unused".into());
        let x = [0.1, -0.4, 0.7, 123.0];
        prop_assert_eq!(tree_shap(&m, &x).unwrap().phi[3], 0.0);
    }
}

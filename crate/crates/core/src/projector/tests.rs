use super::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub(crate) fn blobs(n_per_class: usize, dim: usize, seed: u64) -> Vec<Sample> {
    let mut rng = crate::seed::rng(seed, "test/blobs");
    let centers: Vec<Vec<f64>> = (0..N_CITIES)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut out = Vec::new();
    for i in 0..n_per_class {
        for (label, c) in centers.iter().enumerate() {
            let _ = i;
            let v = c.iter().map(|m| m + noise.sample(&mut rng)).collect();
            out.push(Sample {
                input: Tensor::vector(v),
                label,
            });
        }
    }
    out
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Central differences on every parameter, eps = 1e-5.
fn max_grad_error(model: &ProjectorModel, batch: &[Sample]) -> f64 {
    let (_, analytic) = model.loss_and_gradient(batch).unwrap();
    let theta = model.parameters();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] += eps;
        m.set_parameters(&t).unwrap();
        let up = m.loss_and_gradient(batch).unwrap().0;
        t[k] -= 2.0 * eps;
        m.set_parameters(&t).unwrap();
        let down = m.loss_and_gradient(batch).unwrap().0;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}

fn random_sequence(channels: usize, len: usize, label: usize, seed: u64) -> Sample {
    let mut rng = crate::seed::rng(seed, "test/seq");
    Sample {
        input: Tensor::new(
            channels,
            len,
            (0..channels * len)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        ),
        label,
    }
}

#[test]
fn fc_parameter_count_and_zero_init() {
    let m = build_fc(&FcSpec::default(), InitSpec::zeros());
    assert_eq!(m.n_parameters(), 148_101);
    let p = m.project(&Tensor::vector(vec![3.0; 512])).unwrap();
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn random_init_outputs_are_distributions() {
    let m = build_fc(
        &FcSpec::default(),
        InitSpec {
            seed: 4,
            scale: 1.0,
        },
    );
    let x = Tensor::vector((0..512).map(|i| (i as f64 * 0.37).sin()).collect());
    let p = m.project(&x).unwrap();
    assert_eq!(p.len(), 5);
    assert!(p.iter().all(|&v| v >= 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(p, m.project(&x).unwrap());
    assert!(matches!(
        m.project(&Tensor::vector(vec![0.0; 511])),
        Err(Error::DimensionMismatch {
            expected: 512,
            actual: 511
        })
    ));
}

#[test]
fn cnn_shapes() {
    let m = build_cnn(
        &CnnSpec::default(),
        InitSpec {
            seed: 1,
            scale: 1.0,
        },
    );
    assert_eq!(m.min_input_len(), 14);
    let short = random_sequence(4, 13, 0, 1);
    assert!(matches!(
        m.project(&short.input),
        Err(Error::TooShort {
            frames: 13,
            min_frames: 14
        })
    ));
    for len in [14, 15, 57, 300] {
        let p = m
            .project(&random_sequence(4, len, 0, len as u64).input)
            .unwrap();
        assert_eq!(p.len(), 5);
    }
    assert!(m.project(&random_sequence(3, 40, 0, 1).input).is_err());
}

#[test]
fn cnn_is_order_sensitive() {
    let m = build_cnn(
        &CnnSpec::default(),
        InitSpec {
            seed: 2,
            scale: 1.0,
        },
    );
    let a = random_sequence(4, 40, 0, 9).input;
    let mut reversed = a.clone();
    for c in 0..4 {
        reversed.data[c * 40..(c + 1) * 40].reverse();
    }
    let (pa, pb) = (m.project(&a).unwrap(), m.project(&reversed).unwrap());
    assert!(pa.iter().zip(&pb).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn softmax_translation_invariance() {
    let z = [0.3, -1.2, 4.0, 2.2, 0.0];
    let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
    for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn gradient_check_fc() {
    let spec = FcSpec {
        input_dim: 6,
        hidden: vec![5, 4],
    };
    let m = build_fc(
        &spec,
        InitSpec {
            seed: 3,
            scale: 1.0,
        },
    );
    let batch: Vec<Sample> = (0..3)
        .map(|i| random_sequence(6, 1, i, 100 + i as u64))
        .collect();
    let e = max_grad_error(&m, &batch);
    assert!(e <= 1e-4, "max relative error {e}");
}

#[test]
fn gradient_check_cnn() {
    let spec = CnnSpec {
        in_channels: 2,
        conv1_channels: 3,
        conv2_channels: 4,
        kernel: 3,
        pool: 2,
    };
    let m = build_cnn(
        &spec,
        InitSpec {
            seed: 5,
            scale: 1.0,
        },
    );
    let batch: Vec<Sample> = (0..2)
        .map(|i| random_sequence(2, 17, i + 2, 200 + i as u64))
        .collect();
    let e = max_grad_error(&m, &batch);
    assert!(e <= 1e-4, "max relative error {e}");
}

#[test]
fn separable_blobs_are_learned() {
    let data = blobs(40, 512, 11);
    let cfg = TrainConfig {
        seed: 11,
        ..Default::default()
    };
    let m = build_fc(
        &FcSpec::default(),
        InitSpec {
            seed: 11,
            scale: 1.0,
        },
    );
    let (trained, hist) = train_projector(&m, &data, &cfg).unwrap();
    let last = hist.epochs.last().unwrap();
    assert!(last.train_accuracy >= 0.95, "{last:?}");
    assert!(last.valid_accuracy.unwrap() >= 0.95, "{last:?}");
    let non_increasing = hist
        .epochs
        .windows(2)
        .filter(|w| w[1].train_loss <= w[0].train_loss)
        .count();
    assert!(non_increasing as f64 >= 0.9 * (hist.epochs.len() - 1) as f64);
    assert_ne!(trained.parameters(), m.parameters());
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let data = blobs(4, 8, 1);
    let m = build_fc(
        &FcSpec {
            input_dim: 8,
            hidden: vec![4],
        },
        InitSpec {
            seed: 1,
            scale: 1.0,
        },
    );
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        ..Default::default()
    };
    let (trained, _) = train_projector(&m, &data, &cfg).unwrap();
    assert_eq!(trained.parameters(), m.parameters());
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = blobs(6, 10, 2);
    let spec = FcSpec {
        input_dim: 10,
        hidden: vec![8],
    };
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let m = build_fc(
            &spec,
            InitSpec {
                seed: 9,
                scale: 1.0,
            },
        );
        train_projector(&m, &data, &cfg).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    let bits = |m: &ProjectorModel| {
        m.parameters()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ha, hb);
}

#[test]
fn single_class_pool_is_rejected() {
    let mut data = blobs(3, 8, 1);
    data.iter_mut().for_each(|s| s.label = 2);
    let m = build_fc(
        &FcSpec {
            input_dim: 8,
            hidden: vec![],
        },
        InitSpec::zeros(),
    );
    assert!(train_projector(&m, &data, &TrainConfig::default()).is_err());
    assert!(train_projector(&m, &[], &TrainConfig::default()).is_err());
}

#[test]
fn save_load_round_trip_is_f32_exact() {
    let m = build_cnn(
        &CnnSpec::default(),
        InitSpec {
            seed: 7,
            scale: 1.0,
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cnn.json");
    m.save(&p).unwrap();
    let back = ProjectorModel::load(&p).unwrap();
    assert_eq!(back.kind, ProjectorKind::Cnn);
    assert_eq!(back.n_parameters(), m.n_parameters());
    for (a, b) in m.parameters().iter().zip(back.parameters()) {
        assert_eq!(b, f64::from(*a as f32));
    }
    back.save(&p).unwrap();
    assert_eq!(ProjectorModel::load(&p).unwrap(), back);
}

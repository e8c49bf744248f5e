use mcgan_core::data::{builtin, sample_real};
use mcgan_core::objectives::{graph, mean_dual_loss};
use mcgan_core::optim::stiefel_deviation;
use mcgan_core::train::{
    smooth, train, train_combined, train_cov_primal, train_mean_primal, Objective, TrainConfig, TrainTrace, Trainer,
    VProjection, CHECKPOINT_VERSION, HEAD_S, HEAD_U, HEAD_V, HEAD_V_COV, TRACE_HEADER,
};
use mcgan_core::{Error, FeatureMap, MixtureSpec, MlpFeatureMap, Norm, RandomFourierMap, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(objective: Objective, updates: usize) -> TrainConfig {
    TrainConfig {
        objective,
        generator_updates: updates,
        hidden: vec![16, 16],
        feature_dim: 16,
        k: 4,
        batch: 32,
        ..TrainConfig::default()
    }
}

fn csv_fields(trace: &TrainTrace) -> Vec<[u64; 4]> {
    trace.records().iter().map(|r| [r.iter, r.loss.to_bits(), r.grad_norm.to_bits(), r.param_norm.to_bits()]).collect()
}

#[test]
fn combined_without_covariance_is_mean_primal() {
    let a = train_mean_primal(&small(Objective::MeanPrimal, 40)).unwrap();
    let cfg = TrainConfig { cov_weight: 0.0, ..small(Objective::Combined, 40) };
    let b = train_combined(&cfg).unwrap();
    // b also carries unused (U, V) heads, so only the CSV fields are compared
    assert_eq!(csv_fields(a.trace()), csv_fields(b.trace()));
    assert_eq!(a.models().phi, b.models().phi);
    assert_eq!(a.models().generator, b.models().generator);
    assert_eq!(a.models().head(HEAD_V), b.models().head(HEAD_V));
}

#[test]
fn combined_without_mean_is_cov() {
    let a = train_cov_primal(&small(Objective::Cov, 40)).unwrap();
    let cfg = TrainConfig { mean_weight: 0.0, ..small(Objective::Combined, 40) };
    let b = train_combined(&cfg).unwrap();
    assert!(a.trace().same_run(b.trace()));
    assert_eq!(a.models().phi, b.models().phi);
    assert_eq!(a.models().generator, b.models().generator);
    assert_eq!(a.models().head(HEAD_U), b.models().head(HEAD_U));
    assert_eq!(a.models().head(HEAD_V_COV), b.models().head(HEAD_V_COV));
}

#[test]
fn conditional_without_label_terms_is_cov() {
    let base = TrainConfig { dataset: "labeled3".into(), ..small(Objective::Cov, 30) };
    let cov = TrainConfig { conditional_generator: Some(true), ..base.clone() };
    let cond = TrainConfig { objective: Objective::Conditional, lambda_d: 0.0, lambda_g: 0.0, ..base };
    let a = train(&cov).unwrap();
    let b = train(&cond).unwrap();
    assert!(a.trace().same_run(b.trace()));
    assert_eq!(a.models().generator, b.models().generator);
    assert_eq!(a.models().phi, b.models().phi);
    assert_eq!(b.counters().critic_labeled, 0);
}

#[test]
fn label_terms_change_the_run() {
    let base = TrainConfig { dataset: "labeled3".into(), ..small(Objective::Conditional, 10) };
    let a = train(&TrainConfig { lambda_d: 0.0, lambda_g: 0.0, ..base.clone() }).unwrap();
    let b = train(&base).unwrap();
    assert!(!a.trace().same_run(b.trace()));
    assert_eq!(b.counters().critic_labeled, 10 * 5 * 32);
}

#[test]
fn single_step_is_bitwise_reproducible() {
    for objective in [Objective::MeanPrimal, Objective::MeanDual, Objective::Cov, Objective::Combined] {
        let cfg = TrainConfig { critic_iters: 1, ..small(objective, 1) };
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert!(a.trace().same_run(b.trace()));
        assert_eq!(a.models(), b.models());
        let c = train(&TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.models(), c.models());
    }
}

#[test]
fn generator_real_sample_usage() {
    let updates = 7;
    for objective in [Objective::MeanPrimal, Objective::Cov, Objective::Combined] {
        let t = train(&small(objective, updates)).unwrap();
        let c = t.counters();
        assert_eq!(c.generator_real, 0, "{objective:?}");
        assert_eq!(c.critic_real, (updates * 5 * 32) as u64);
    }
    let cfg = small(Objective::MeanDual, updates);
    let t = train(&cfg).unwrap();
    assert_eq!(t.counters().generator_real, (updates * cfg.real_multiplier * cfg.batch) as u64);
    assert_eq!(cfg.real_multiplier, 3);
}

#[test]
fn constraints_hold_after_every_update() {
    for (objective, p) in [
        (Objective::MeanPrimal, Norm::L1),
        (Objective::MeanPrimal, Norm::L2),
        (Objective::MeanPrimal, Norm::Inf),
        (Objective::Cov, Norm::L2),
        (Objective::Combined, Norm::L2),
    ] {
        let cfg = TrainConfig { p, lr: 5e-3, ..small(objective, 60) };
        let mut t = Trainer::new(cfg.clone()).unwrap();
        for _ in 0..60 {
            t.run_for(1).unwrap();
            let m = t.models();
            assert!(m.phi.params.max_abs() <= cfg.clip);
            if let Some(v) = m.head(HEAD_V) {
                assert!(v.norm(p) <= 1.0 + 1e-12);
            }
            for name in [HEAD_U, HEAD_V_COV] {
                if let Some(u) = m.head(name) {
                    assert!(stiefel_deviation(u).unwrap() <= 1e-8);
                }
            }
        }
        for r in t.trace().records() {
            assert!(r.omega_max <= cfg.clip);
            assert!(r.stiefel_dev <= 1e-8);
        }
    }
}

#[test]
fn weight_clip_mode_keeps_v_in_the_box() {
    let cfg =
        TrainConfig { p: Norm::Inf, v_projection: VProjection::Clip, lr: 1e-2, ..small(Objective::MeanPrimal, 20) };
    let t = train(&cfg).unwrap();
    assert!(t.models().head(HEAD_V).unwrap().max_abs() <= 1.0);
}

#[test]
fn critic_ascent_at_frozen_generator() {
    for objective in [Objective::MeanPrimal, Objective::MeanDual, Objective::Cov, Objective::Combined] {
        for seed in 0..3 {
            let mut t = Trainer::new(TrainConfig { objective, seed, ..TrainConfig::default() }).unwrap();
            let before = t.models().generator.clone();
            let s = smooth(&t.critic_steps(1000, None).unwrap(), 50);
            assert_eq!(t.models().generator, before);
            assert_eq!(t.step(), 0);
            let (mut up, mut total) = (0, 0);
            let mut i = 50;
            while i + 50 <= s.len() {
                total += 1;
                if s[i + 49] >= s[i - 1] {
                    up += 1;
                }
                i += 50;
            }
            assert!(up * 10 >= total * 9, "{objective:?} seed {seed}: {up}/{total}");
        }
    }
}

/// Largest `‖Φ(x)‖_q` over a grid covering the data.
fn grid_bound(phi: &MlpFeatureMap, q: Norm) -> f64 {
    let n = 161;
    let pts: Vec<f64> = (0..n * n).flat_map(|i| [-8.0 + 0.1 * (i / n) as f64, -8.0 + 0.1 * (i % n) as f64]).collect();
    let f = phi.features(&Tensor::matrix(n * n, 2, pts).unwrap()).unwrap();
    (0..f.rows()).map(|i| q.of(f.row(i))).fold(0.0, f64::max)
}

#[test]
fn mean_critic_ascent_against_shifted_mixture() {
    let real = builtin("bimodal2d").unwrap();
    let shifted = MixtureSpec::new(vec![vec![-1.0, 1.0], vec![3.0, 1.0]], real.stddev).unwrap();
    let mut t = Trainer::new(TrainConfig::default()).unwrap();
    let losses = t.critic_steps(500, Some(&shifted)).unwrap();
    let s = smooth(&losses, 50);
    let mut down = 0;
    for w in (49..s.len()).step_by(50).collect::<Vec<_>>().windows(2) {
        if s[w[1]] < s[w[0]] {
            down += 1;
        }
    }
    assert!(down <= 1, "{down} decreasing windows");
    assert!(s[s.len() - 1] > s[49]);
    // |⟨v, Δμ⟩| ≤ ‖v‖_p ‖Δμ‖_q ≤ 2 max ‖Φ‖_q
    let bound = 2.0 * grid_bound(&t.models().phi, Norm::L2);
    assert!(losses.iter().all(|&l| l <= bound), "bound {bound}");
}

#[test]
fn p_inf_ball_equals_weight_clipping() {
    let cfg = TrainConfig { p: Norm::Inf, ..small(Objective::MeanPrimal, 50) };
    let a = train(&cfg).unwrap();
    let b = train(&TrainConfig { v_projection: VProjection::Clip, ..cfg }).unwrap();
    assert!(a.trace().same_run(b.trace()));
    assert_eq!(a.models(), b.models());
}

#[test]
fn mean_dual_null_case_sits_at_sampling_noise() {
    let spec = builtin("bimodal2d").unwrap();
    let phi = RandomFourierMap::from_seed(2, 64, 1.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scaled = Vec::new();
    for &n in &[64usize, 256, 1024] {
        let reps = 200;
        let mean: f64 = (0..reps)
            .map(|_| {
                let a = sample_real(&spec, n, &mut rng).unwrap().points;
                let b = sample_real(&spec, n, &mut rng).unwrap().points;
                mean_dual_loss(Norm::L2, &phi, &a, &b).unwrap()
            })
            .sum::<f64>()
            / reps as f64;
        assert!(mean > 0.0);
        scaled.push(mean * (n as f64).sqrt());
    }
    // E‖Δμ̂‖ · √N is roughly constant
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    assert!(hi / lo < 1.2, "{scaled:?}");
}

#[test]
fn squared_dual_gradient_is_parallel() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phi = MlpFeatureMap::new(2, &[16], 8, 0.5, &mut rng).unwrap();
    let spec = builtin("bimodal2d").unwrap();
    let real = sample_real(&spec, 64, &mut rng).unwrap().points;
    let fake = sample_real(&builtin("unimodal2d").unwrap(), 64, &mut rng).unwrap().points;
    let grad = |squared: bool| {
        let mut tape = Tape::new();
        let w = phi.params.bind(&mut tape);
        let xr = tape.constant(real.clone());
        let xf = tape.constant(fake.clone());
        let fr = phi.record(&mut tape, &w, xr).unwrap();
        let ff = phi.record(&mut tape, &w, xf).unwrap();
        let l = graph::mean_dual(&mut tape, Norm::L2, fr, ff, squared).unwrap();
        let value = tape.value(l).item().unwrap();
        let g: Vec<f64> =
            tape.backward(l).unwrap().collect(&w).unwrap().iter().flat_map(|t| t.data().to_vec()).collect();
        (value, g)
    };
    let (norm, g1) = grad(false);
    let (_, g2) = grad(true);
    // ∇‖Δ‖² = 2‖Δ‖ ∇‖Δ‖
    for (a, b) in g1.iter().zip(&g2) {
        assert!((b - 2.0 * norm * a).abs() < 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn divergence_aborts_with_diagnostic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let cfg =
        TrainConfig { init_scale: 1e120, clip: 1e200, checkpoint_path: Some(path.clone()), ..small(Objective::Cov, 5) };
    let mut t = Trainer::new(cfg).unwrap();
    let err = t.run().unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let diag = dir.path().join("run.ckpt.diverged");
    assert!(diag.exists());
    Trainer::resume(&diag).unwrap();
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let mut t = Trainer::new(small(Objective::Combined, 20)).unwrap();
    t.run_for(7).unwrap();
    let bytes = t.checkpoint_bytes();
    let back = Trainer::from_checkpoint_bytes(&bytes).unwrap();
    assert_eq!(back.checkpoint_bytes(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    t.save_checkpoint(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn resume_matches_uninterrupted_run() {
    for objective in [Objective::MeanDual, Objective::Conditional] {
        let cfg = TrainConfig { dataset: "labeled3".into(), ..small(objective, 100) };
        let full = train(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        let mut first = Trainer::new(cfg).unwrap();
        first.run_for(50).unwrap();
        first.save_checkpoint(&path).unwrap();
        drop(first);
        let mut second = Trainer::resume(&path).unwrap();
        assert_eq!(second.step(), 50);
        second.run().unwrap();
        assert!(full.trace().same_run(second.trace()));
        assert_eq!(full.models(), second.models());
        assert_eq!(full.counters(), second.counters());
    }
}

#[test]
fn corrupt_or_foreign_checkpoints_are_rejected() {
    let mut t = Trainer::new(small(Objective::Cov, 5)).unwrap();
    t.run_for(2).unwrap();
    let bytes = t.checkpoint_bytes();
    assert!(Trainer::from_checkpoint_bytes(&bytes[..bytes.len() / 2]).is_err());
    assert!(Trainer::from_checkpoint_bytes(b"not a checkpoint").is_err());
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0xff;
    assert!(Trainer::from_checkpoint_bytes(&flipped).is_err());
    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    // re-seal so only the version differs
    let body = versioned.len() - 32;
    let digest = <sha2::Sha256 as sha2::Digest>::digest(&versioned[..body]);
    versioned[body..].copy_from_slice(&digest);
    let err = Trainer::from_checkpoint_bytes(&versioned).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn trace_csv_layout() {
    let t = train(&TrainConfig { log_every: 2, ..small(Objective::MeanPrimal, 6) }).unwrap();
    let csv = t.trace().to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    let iters: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, vec![2, 4, 6]);
}

#[test]
fn conditional_model_classifies_and_places_samples() {
    let cfg = TrainConfig {
        objective: Objective::Conditional,
        dataset: "labeled3".into(),
        lr: 5e-4,
        generator_updates: 2000,
        ..TrainConfig::default()
    };
    let t = train(&cfg).unwrap();
    let spec = t.spec().clone();
    let m = t.models();
    let s = m.head(HEAD_S).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let held_out = sample_real(&spec, 1000, &mut rng).unwrap();
    let f = m.phi.features(&held_out.points).unwrap();
    let logits = Tensor::matmul_t(&f, false, s, true).unwrap();
    let labels = held_out.labels.unwrap();
    let correct = (0..1000)
        .filter(|&i| {
            let row = logits.row(i);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == labels[i]
        })
        .count();
    assert!(correct >= 900, "accuracy {correct}/1000");

    let classes = spec.classes().unwrap();
    for y in 0..classes {
        let z = mcgan_core::data::sample_noise(&mcgan_core::NoisePrior::new(cfg.noise_dim).unwrap(), 500, &mut rng)
            .unwrap();
        let onehot = mcgan_core::features::one_hot(&vec![y; 500], classes).unwrap();
        let x = m.generator.generate(&z, Some(&onehot)).unwrap();
        let center = &spec.centers[spec.components_with_label(y)[0]];
        let near = (0..500)
            .filter(|&i| {
                let d2: f64 = x.row(i).iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() <= 3.0 * spec.stddev
            })
            .count();
        assert!(near >= 400, "label {y}: {near}/500 within 3σ");
    }
}

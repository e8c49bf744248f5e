use mcgan_core::data::{builtin, builtin_datasets, sample_real};
use mcgan_core::eval::{
    levelset, mode_coverage, oracle_report, GridSpec, LevelSetMode, DEFAULT_MIN_FRACTION, DEFAULT_RADIUS_MULT,
};
use mcgan_core::features::median_heuristic;
use mcgan_core::plot::{parse_grid_csv, parse_trace_csv, plot_file, render_heatmap, render_loss_plot};
use mcgan_core::{Error, MixtureSpec, MlpFeatureMap, Norm, RandomFourierMap, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_grid() -> GridSpec {
    GridSpec { nx: 40, ny: 30, ..GridSpec::default() }
}

#[test]
fn true_ring_draws_cover_every_mode() {
    let spec = builtin("ring8").unwrap();
    for seed in 0..5 {
        let x = sample_real(&spec, 10_000, &mut rng(seed)).unwrap().points;
        let r = mode_coverage(&x, &spec, DEFAULT_RADIUS_MULT, DEFAULT_MIN_FRACTION).unwrap();
        assert_eq!(r.covered, 8, "{r}");
        assert!(r.high_quality > 0.98);
        let total: f64 = r.fractions.iter().sum();
        assert!(total <= 1.0 + 1e-12 && (total - r.high_quality).abs() < 1e-12);
    }
}

#[test]
fn collapsed_samples_cover_one_mode() {
    let spec = builtin("ring8").unwrap();
    let c = &spec.centers[3];
    let x = Tensor::matrix(100, 2, (0..100).flat_map(|_| c.clone()).collect()).unwrap();
    let r = mode_coverage(&x, &spec, 3.0, 0.02).unwrap();
    assert_eq!(r.covered, 1);
    assert_eq!(r.fractions[3], 1.0);
}

#[test]
fn far_samples_are_not_assigned() {
    let spec = builtin("bimodal2d").unwrap();
    let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![-2.0, 0.0], vec![9.0, 9.0], vec![2.1, 0.1]]).unwrap();
    let r = mode_coverage(&x, &spec, 3.0, 0.02).unwrap();
    assert_eq!(r.fractions, vec![0.25, 0.25]);
    assert_eq!(r.high_quality, 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coverage_is_permutation_invariant(seed in any::<u64>()) {
        let spec = builtin("ring8").unwrap();
        let mut r = rng(seed);
        let x = sample_real(&spec, 300, &mut r).unwrap().points;
        let base = mode_coverage(&x, &spec, 3.0, 0.02).unwrap();

        let mut order: Vec<usize> = (0..300).collect();
        order.shuffle(&mut r);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
        let shuffled = mode_coverage(&Tensor::from_rows(&rows).unwrap(), &spec, 3.0, 0.02).unwrap();
        prop_assert_eq!(&shuffled.covered, &base.covered);
        for (a, b) in shuffled.fractions.iter().zip(&base.fractions) {
            prop_assert!((a - b).abs() < 1e-12);
        }

        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut r);
        let centers: Vec<Vec<f64>> = perm.iter().map(|&i| spec.centers[i].clone()).collect();
        let permuted = MixtureSpec::new(centers, spec.stddev).unwrap();
        let p = mode_coverage(&x, &permuted, 3.0, 0.02).unwrap();
        prop_assert_eq!(p.covered, base.covered);
        prop_assert!((p.high_quality - base.high_quality).abs() < 1e-12);
        for (slot, &i) in perm.iter().enumerate() {
            prop_assert!((p.fractions[slot] - base.fractions[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn coverage_contracts() {
    let spec = builtin("ring8").unwrap();
    assert!(mode_coverage(&Tensor::zeros([0, 2]), &spec, 3.0, 0.02).is_err());
    assert!(mode_coverage(&Tensor::zeros([3, 2]), &builtin("unimodal2d").unwrap(), 3.0, 0.02).is_err());
}

fn bimodal_vs_unimodal(seed: u64, n: usize) -> (Tensor, Tensor) {
    let real = sample_real(&builtin("bimodal2d").unwrap(), n, &mut rng(seed)).unwrap().points;
    let fake = sample_real(&builtin("unimodal2d").unwrap(), n, &mut rng(seed + 1000)).unwrap().points;
    (real, fake)
}

#[test]
fn cov_levelset_channels_and_sum() {
    let (real, fake) = bimodal_vs_unimodal(1, 500);
    let phi = RandomFourierMap::from_seed(2, 128, median_heuristic(&real).unwrap(), 5).unwrap();
    let g = levelset(&real, &fake, &phi, LevelSetMode::Cov(4), &small_grid()).unwrap();
    assert_eq!(g.channels.len(), 5);
    assert_eq!(g.names, vec!["f1", "f2", "f3", "f4", "sum"]);
    assert!(g.sigmas.windows(2).all(|w| w[0] >= w[1]));
    assert!(g.sigmas.iter().all(|&s| s >= 0.0));
    let sum = g.channel("sum").unwrap();
    for (c, &s) in sum.iter().enumerate() {
        let parts: f64 = (0..4).map(|j| g.channels[j][c]).sum();
        assert!((s - parts).abs() <= 1e-12 * (1.0 + s.abs()));
    }
}

#[test]
fn mean_levelset_has_one_channel() {
    let (real, fake) = bimodal_vs_unimodal(2, 300);
    let phi = RandomFourierMap::from_seed(2, 64, 1.0, 5).unwrap();
    for p in Norm::ALL {
        let g = levelset(&real, &fake, &phi, LevelSetMode::Mean(p), &small_grid()).unwrap();
        assert_eq!(g.channels.len(), 1);
        assert!(g.sigmas.is_empty());
    }
    let same = levelset(&real, &real, &phi, LevelSetMode::Mean(Norm::L2), &small_grid()).unwrap();
    assert!(same.channels[0].iter().all(|&v| v == 0.0));
}

#[test]
fn levelset_rejects_non_2d_input() {
    let phi = RandomFourierMap::from_seed(3, 16, 1.0, 5).unwrap();
    let x = Tensor::zeros([4, 3]);
    assert!(levelset(&x, &x, &phi, LevelSetMode::Cov(2), &small_grid()).is_err());
}

#[test]
fn oracle_identities_hold_on_builtins() {
    for (name, spec) in builtin_datasets() {
        let mut r = rng(7);
        let phi = MlpFeatureMap::new(2, &[32, 32], 16, 0.3, &mut r).unwrap();
        let real = sample_real(&spec, 256, &mut r).unwrap().points;
        let fake = sample_real(&builtin("unimodal2d").unwrap(), 256, &mut r).unwrap().points;
        for p in Norm::ALL {
            let report = oracle_report(&phi, &real, &fake, 4, p).unwrap();
            assert!(report.all_ok(), "{name} p={p}\n{report}");
            assert_eq!(report.rows.len(), 3);
        }
        let same = oracle_report(&phi, &real, &real, 4, Norm::L2).unwrap();
        assert!(same.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0), "{same}");
    }
}

#[test]
fn heatmap_has_one_panel_per_channel_and_is_deterministic() {
    let (real, fake) = bimodal_vs_unimodal(3, 400);
    let phi = RandomFourierMap::from_seed(2, 64, 1.0, 9).unwrap();
    let g = levelset(&real, &fake, &phi, LevelSetMode::Cov(3), &small_grid()).unwrap();
    let img = render_heatmap(&g).unwrap();
    assert_eq!(img.width, 4 * 40 + 5 * 4);
    assert_eq!(img.height, 30 + 2 * 4);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    std::fs::write(&csv, g.to_csv()).unwrap();
    let back = parse_grid_csv(&g.to_csv()).unwrap();
    assert_eq!(back.channels.len(), 4);
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    plot_file(&csv, &a).unwrap();
    plot_file(&csv, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&a).unwrap(), img.to_png().unwrap());
}

#[test]
fn loss_plot_from_trace_csv() {
    let text = "iter,loss,wall_ms,grad_norm,param_norm\n1,0.5,1.0,0.1,2.0\n2,0.4,2.0,0.1,2.0\n";
    let rows = parse_trace_csv(text).unwrap();
    let img = render_loss_plot(&rows).unwrap();
    assert!(img.to_png().unwrap().starts_with(b"\x89PNG"));

    let err = parse_trace_csv("iter,loss,wall_ms,grad_norm,param_norm\n1,0.5,1,0.1,2\n2,abc,2,0.1,2\n").unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other}"),
    }
}

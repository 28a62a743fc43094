mod common;

use common::{experiment_problem, ks_p_value, ks_uniform, martingale_ratios};
use jumpis::engine::stage_two;
use jumpis::models::{draw_jump_times, BnsDriver, KouJumps, NormalJumps};
use jumpis::models::{BnsParams, Correlation, KouParams, MertonParams, PathSimulator};
use jumpis::rng::{count_seed, fill_poisson, fill_standard_normal, sample_rng};
use jumpis::{correlate, GridSpec, ISParams, Integrand, ModelSpec, PathDraw};

fn grid12() -> GridSpec {
    GridSpec::regular(1.0, 12).unwrap()
}

fn kou() -> ModelSpec {
    ModelSpec::Kou(KouParams {
        s0: vec![100.0],
        sigma: vec![0.25],
        jumps: vec![KouJumps {
            intensity: 1.0,
            p_up: 0.6,
            eta_up: 10.0,
            eta_down: 5.0,
        }],
        r: 0.05,
        correlation: Correlation::default(),
    })
}

fn merton_basket(assets: usize) -> ModelSpec {
    let mut jumps = vec![
        NormalJumps {
            intensity: 0.8,
            mean: -0.1,
            std: 0.15,
        };
        assets
    ];
    jumps.push(NormalJumps {
        intensity: 0.3,
        mean: 0.05,
        std: 0.2,
    });
    ModelSpec::Merton(MertonParams {
        s0: (0..assets).map(|i| 90.0 + 5.0 * i as f64).collect(),
        sigma: (0..assets).map(|i| 0.2 + 0.02 * i as f64).collect(),
        jumps,
        r: 0.03,
        correlation: Correlation::Equi(0.3),
    })
}

fn bns_with_leverage() -> ModelSpec {
    let driver = BnsDriver {
        intensity: 1.0,
        kappa: 0.5,
        beta: 10.0,
        psi: -0.5,
    };
    ModelSpec::Bns(BnsParams {
        s0: vec![100.0, 100.0],
        sigma0_sq: vec![0.04, 0.02],
        drivers: vec![driver; 3],
        r: 0.05,
        correlation: Correlation::Equi(0.2),
    })
}

fn assert_martingale(label: &str, model: &ModelSpec, n: u64) {
    for (i, (mean, se)) in martingale_ratios(model, &grid12(), n, 2718).into_iter().enumerate() {
        assert!((mean - 1.0).abs() <= 3.0 * se, "{label} asset {i}: {mean} with se {se}");
    }
}

#[test]
fn discounted_prices_are_martingales() {
    assert_martingale("merton", experiment_problem("table1_merton_asian", 1).model(), 200_000);
    assert_martingale("kou", &kou(), 200_000);
    assert_martingale("bns", experiment_problem("table2_bns_asian", 1).model(), 200_000);
    assert_martingale("merton basket", &merton_basket(3), 200_000);
    assert_martingale("bns with leverage", &bns_with_leverage(), 200_000);
}

#[test]
fn merton_drift_matches_the_exponential_compensator() {
    let drift = experiment_problem("table1_merton_asian", 1).model().martingale_drift().unwrap();
    assert!((drift[0] - (0.05 - (0.52f64.exp() - 1.0))).abs() < 1e-14);
    // -0.632028 to six places
    assert!((drift[0] + 0.632028).abs() < 1e-6);
    let bns = experiment_problem("table2_bns_asian", 1).model().martingale_drift().unwrap();
    assert_eq!(bns, vec![0.05]);
}

#[test]
fn cholesky_factor_reproduces_the_correlation() {
    let l = correlate(0.3, 2).unwrap();
    assert!((l[(1, 0)] - 0.3).abs() < 1e-15 && (l[(1, 1)] - 0.91f64.sqrt()).abs() < 1e-15);
    assert_eq!(correlate(0.0, 2).unwrap(), nalgebra::DMatrix::identity(2, 2));
    let l = correlate(0.3, 10).unwrap();
    let gamma = &l * l.transpose();
    for r in 0..10 {
        for c in 0..10 {
            let want = if r == c { 1.0 } else { 0.3 };
            assert!((gamma[(r, c)] - want).abs() < 1e-12);
        }
    }
    assert!(correlate(1.0, 10).is_err());
    assert!(correlate(-0.2, 10).is_err());
}

#[test]
fn jump_times_are_uniform_order_statistics() {
    let mut rng = sample_rng(31, 0);
    let mut singles: Vec<f64> = (0..100_000).map(|_| draw_jump_times(0.0, 1.0, 1, &mut rng)[0]).collect();
    let d = ks_uniform(&mut singles);
    assert!(ks_p_value(d, singles.len()) > 1e-4, "KS distance {d}");

    let (a, b) = (0.25, 0.5);
    let mut pooled = Vec::new();
    for _ in 0..20_000 {
        let t = draw_jump_times(a, b, 5, &mut rng);
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.iter().all(|&x| (a..b).contains(&x)));
        pooled.extend(t.iter().map(|x| (x - a) / (b - a)));
    }
    let d = ks_uniform(&mut pooled);
    assert!(ks_p_value(d, pooled.len()) > 1e-4, "KS distance {d}");
    assert!(draw_jump_times(0.0, 1.0, 0, &mut rng).is_empty());
}

#[test]
fn jump_size_laws_have_the_right_moments() {
    let n = 1_000_000u32;
    let merton = experiment_problem("table1_merton_asian", 1).model().clone();
    let mut rng = sample_rng(41, 0);
    let sizes = merton.draw_jump_sizes(0, n, &mut rng);
    let mean = sizes.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 4.0 * 0.2 / 1e3, "{mean}");

    let sizes = kou().draw_jump_sizes(0, n, &mut rng);
    let up = sizes.iter().filter(|&&y| y > 0.0).count() as f64 / n as f64;
    assert!((up - 0.6).abs() < 4.0 * (0.24 / n as f64).sqrt(), "{up}");
    let mean = sizes.iter().sum::<f64>() / n as f64;
    let want: f64 = 0.6 / 10.0 - 0.4 / 5.0;
    let sd = (0.6 * 2.0 / 100.0 + 0.4 * 2.0 / 25.0 - want * want).sqrt();
    assert!((mean - want).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean}");

    let bns = experiment_problem("table2_bns_asian", 1).model().clone();
    let sizes = bns.draw_jump_sizes(0, n, &mut rng);
    assert!(sizes.iter().all(|&y| y >= 0.0));
    let mean = sizes.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0 / 18.6).abs() < 4.0 / 18.6 / 1e3, "{mean}");
    assert!(merton.draw_jump_sizes(0, 0, &mut rng).is_empty());
}

#[test]
fn log_return_variance_matches_the_compound_poisson_cumulant() {
    let model = merton_basket(3);
    let ModelSpec::Merton(p) = &model else { unreachable!() };
    let grid = grid12();
    let sim = PathSimulator::new(model.clone(), grid.clone()).unwrap();
    let mu = model.cell_intensities(&grid);
    let n = 200_000u64;
    let mut logs = vec![Vec::new(); 3];
    for j in 0..n {
        let mut rng = sample_rng(5, j);
        let mut g = vec![0.0; 36];
        let mut counts = vec![0u32; mu.len()];
        fill_standard_normal(&mut rng, &mut g);
        fill_poisson(&mut sample_rng(count_seed(5), j), &mu, &mut counts);
        let path = sim.simulate(&PathDraw::complete(&model, &grid, g, counts, &mut rng)).unwrap();
        for (i, l) in logs.iter_mut().enumerate() {
            l.push((path.price(i, 12) / p.s0[i]).ln());
        }
    }
    let sys = &p.jumps[3];
    for (i, l) in logs.iter().enumerate() {
        let own = &p.jumps[i];
        let want = p.sigma[i].powi(2)
            + own.intensity * (own.mean.powi(2) + own.std.powi(2))
            + sys.intensity * (sys.mean.powi(2) + sys.std.powi(2));
        let nf = l.len() as f64;
        let mean = l.iter().sum::<f64>() / nf;
        let var = l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let m4 = l.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
        let se = ((m4 - var * var) / nf).sqrt();
        assert!((var - want).abs() < 4.0 * se, "asset {i}: {var} vs {want} (se {se})");
    }
}

#[test]
fn changing_only_intensities_leaves_prices_unbiased() {
    let n = 200_000;
    for name in ["table1_merton_asian", "table2_bns_asian"] {
        let problem = experiment_problem(name, 1);
        let crude = stage_two(&problem, &ISParams::identity(problem.gaussian_dim(), problem.baseline()), n, 1, 4096).unwrap();
        for scale in [0.5, 2.0] {
            let lambda: Vec<f64> = problem.baseline().as_slice().iter().map(|m| scale * m).collect();
            let params = ISParams::new(vec![0.0; problem.gaussian_dim()], lambda).unwrap();
            let is = stage_two(&problem, &params, n, 2, 4096).unwrap();
            let se = ((crude.variance + is.variance) / n as f64).sqrt();
            assert!(
                (is.price - crude.price).abs() <= 3.0 * se,
                "{name} x{scale}: {} vs {} (joint se {se})",
                is.price,
                crude.price
            );
        }
    }
}

#[test]
fn bns_variance_never_goes_negative() {
    let grid = grid12();
    for model in [experiment_problem("table2_bns_asian", 1).model().clone(), bns_with_leverage()] {
        let sim = PathSimulator::new(model.clone(), grid.clone()).unwrap();
        let mu = model.cell_intensities(&grid);
        for j in 0..20_000u64 {
            let mut rng = sample_rng(6, j);
            let mut g = vec![0.0; model.assets() * 12];
            let mut counts = vec![0u32; mu.len()];
            fill_standard_normal(&mut rng, &mut g);
            fill_poisson(&mut rng, &mu, &mut counts);
            let path = sim.simulate(&PathDraw::complete(&model, &grid, g, counts, &mut rng)).unwrap();
            for i in 0..model.assets() {
                assert!(path.variance_path(i).unwrap().iter().all(|&v| v >= 0.0));
            }
        }
    }
}

#[test]
fn paths_without_noise_are_deterministic() {
    let grid = grid12();
    let merton = experiment_problem("table1_merton_asian", 1).model().clone();
    let beta = merton.martingale_drift().unwrap()[0];
    let draw = PathDraw {
        gaussian: vec![0.0; 12],
        counts: vec![0; 12],
        jump_sizes: vec![vec![]; 12],
        jump_times: None,
    };
    let path = jumpis::simulate_path(&merton, &grid, &draw).unwrap();
    for (j, &t) in grid.times().iter().enumerate() {
        let want = 100.0 * ((beta - 0.5 * 0.0625) * t).exp();
        assert!((path.price(0, j + 1) - want).abs() < 1e-10 * want);
    }

    let bns = experiment_problem("table2_bns_asian", 1).model().clone();
    let ModelSpec::Bns(p) = &bns else { unreachable!() };
    let draw = PathDraw {
        jump_times: Some(vec![vec![]; 12]),
        ..draw
    };
    let path = jumpis::simulate_path(&bns, &grid, &draw).unwrap();
    let vol = path.variance_path(0).unwrap();
    for (j, &t) in grid.times().iter().enumerate() {
        let want = p.sigma0_sq[0] * (-p.drivers[0].kappa * t).exp();
        assert!((vol[j + 1] - want).abs() < 1e-14, "{} vs {want}", vol[j + 1]);
    }
}

#[test]
fn single_step_jump_enters_the_log_price() {
    let grid = GridSpec::regular(1.0, 1).unwrap();
    let merton = experiment_problem("table1_merton_asian", 1).model().clone();
    let beta = merton.martingale_drift().unwrap()[0];
    let (g, y) = (0.7, -0.3);
    let draw = PathDraw {
        gaussian: vec![g],
        counts: vec![1],
        jump_sizes: vec![vec![y]],
        jump_times: None,
    };
    let path = jumpis::simulate_path(&merton, &grid, &draw).unwrap();
    let want = 100.0 * ((beta - 0.5 * 0.0625) + 0.25 * g + y).exp();
    assert!((path.price(0, 1) - want).abs() < 1e-10 * want);
}

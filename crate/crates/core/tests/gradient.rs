//! Analytic synthetic-input gradients against central finite differences.

use rand::Rng;
use unidd::cfm::grad::empty_state;
use unidd::cfm::{LossSettings, MatchFilter, NormKind, SyntheticObjective};
use unidd::features::{corr_stats, one_hot, EmuState, NetConfig, NetMode};
use unidd::harness::{squeeze, Dataset, SqueezeArtifact, Split};
use unidd::linalg::Mat;
use unidd::rng::seeded;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-5;

struct Case {
    sq: SqueezeArtifact,
    hs: Mat,
    ys: Mat,
    prev: Vec<EmuState>,
    beta: f64,
}

fn case(seed: u64, config: NetConfig, classes: usize, batch: usize, warm: bool) -> Case {
    let mut rng = seeded(seed);
    let d_in = config.widths[0] * config.spatial_hw();
    let n = 8 * classes;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let h = Mat::from_fn(n, d_in, |i, _| labels[i] as f64 * 0.5 + rng.random_range(-1.0..1.0));
    let real = Dataset::from_labels(h, &labels, classes, Split::Train, "fd", Some(seed)).unwrap();
    let sq = squeeze(&real, &config, 0.5).unwrap();

    let ylab: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let ys = one_hot(&ylab, classes);
    let hs = Mat::from_fn(batch, d_in, |_, _| rng.random_range(-1.0..1.0));
    let mut prev = empty_state(&sq.net, classes);
    if warm {
        // one earlier observation so the current batch enters with weight 1/2
        let other = Mat::from_fn(batch, d_in, |_, _| rng.random_range(-1.0..1.0));
        for (state, map) in prev.iter_mut().zip(sq.net.forward(&other).unwrap()) {
            state.observe(&corr_stats(&map, &ys).unwrap()).unwrap();
        }
    }
    Case {
        sq,
        hs,
        ys,
        prev,
        beta: rng.random_range(0.05..1.0),
    }
}

/// Worst per-coordinate relative error over coordinates with `|g| > 1e-8`.
fn fd_error(c: &Case, settings: LossSettings) -> f64 {
    let objective = SyntheticObjective {
        net: &c.sq.net,
        head: &c.sq.head,
        real: &c.sq.real_stats,
        beta: c.beta,
        settings,
    };
    let loss = |hs: &Mat| objective.evaluate(hs, &c.ys, &c.prev, false).unwrap().l_total;
    let grad = objective.evaluate(&c.hs, &c.ys, &c.prev, true).unwrap().grad;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..c.hs.nrows() {
        for j in 0..c.hs.ncols() {
            let mut plus = c.hs.clone();
            plus[(i, j)] += STEP;
            let mut minus = c.hs.clone();
            minus[(i, j)] -= STEP;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let g = grad[(i, j)];
            if g.abs() > 1e-8 {
                worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()));
                checked += 1;
            }
        }
    }
    assert!(checked * 2 > grad.len(), "only {checked} of {} coordinates above threshold", grad.len());
    worst
}

fn only(cls: bool, filter: bool, signal: bool) -> LossSettings {
    LossSettings {
        use_cls: cls,
        use_filter: filter,
        use_signal: signal,
        ..LossSettings::default()
    }
}

fn term_settings() -> Vec<(&'static str, LossSettings)> {
    vec![
        ("cls", only(true, false, false)),
        ("filter", only(false, true, false)),
        ("signal", only(false, false, true)),
        ("all", LossSettings::default()),
    ]
}

#[test]
fn each_term_and_total_match_finite_differences_flat() {
    for seed in 0..24u64 {
        let layers = 1 + (seed % 3) as usize;
        let mut widths = vec![3];
        widths.extend((0..layers).map(|l| 3 + (seed as usize + l) % 3));
        let c = case(seed, NetConfig::flat(&widths, seed), 2 + (seed % 2) as usize, 6, seed % 2 == 1);
        for (name, settings) in term_settings() {
            let err = fd_error(&c, settings);
            assert!(err < TOL, "seed {seed}, {layers} layers, term {name}: rel err {err:e}");
        }
    }
}

#[test]
fn squared_norm_and_linear_filter_match_finite_differences() {
    for seed in 100..106u64 {
        let c = case(seed, NetConfig::flat(&[3, 4, 5], seed), 3, 6, true);
        for filter in [MatchFilter::ShiftInverse, MatchFilter::Linear] {
            for norm in [NormKind::Frobenius, NormKind::SquaredFrobenius] {
                let settings = LossSettings {
                    filter,
                    norm,
                    eta: 0.7,
                    ..LossSettings::default()
                };
                let err = fd_error(&c, settings);
                assert!(err < TOL, "seed {seed}, {filter:?}/{norm:?}: rel err {err:e}");
            }
        }
    }
}

#[test]
fn spatial_mode_matches_finite_differences() {
    for seed in 200..203u64 {
        let config = NetConfig {
            widths: vec![1, 2, 3],
            mode: NetMode::Spatial { side: 3 },
            seed,
        };
        let c = case(seed, config, 2, 4, seed % 2 == 0);
        for (name, settings) in term_settings() {
            let err = fd_error(&c, settings);
            assert!(err < TOL, "seed {seed}, spatial, term {name}: rel err {err:e}");
        }
    }
}

#[test]
fn no_matching_and_zero_eta_is_cross_entropy_gradient() {
    let c = case(7, NetConfig::flat(&[3, 4], 7), 2, 6, false);
    let objective = |settings| SyntheticObjective {
        net: &c.sq.net,
        head: &c.sq.head,
        real: &c.sq.real_stats,
        beta: c.beta,
        settings,
    };
    let zero_eta = LossSettings {
        eta: 0.0,
        ..LossSettings::default()
    };
    let a = objective(zero_eta).evaluate(&c.hs, &c.ys, &c.prev, true).unwrap().grad;
    let b = objective(only(true, false, false))
        .evaluate(&c.hs, &c.ys, &c.prev, true)
        .unwrap()
        .grad;
    assert!((a - b).abs().max() < 1e-14);
}

mod common;

use common::*;
use frechet_core::metric_space::{distance, frechet_mean, MetricPoint, WeightedSample};
use frechet_core::regression::*;
use frechet_core::simulation::{embed_swiss_roll, sample_latent, Ambient, LatentSource};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eu(x: f64) -> MetricPoint {
    MetricPoint::euclidean(vec![x]).unwrap()
}

fn roll(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| embed_swiss_roll(sample_latent(LatentSource::Uniform, rng), Ambient::R3)).collect()
}

fn semi_default() -> Mode {
    Mode::SemiSupervised(GraphConfig::default())
}

fn epan(u: f64) -> f64 {
    if u < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[test]
fn kernel_examples() {
    assert_eq!(kernel_eval(0.0), 0.75);
    assert_eq!(kernel_eval(1.0), 0.0);
    assert_eq!(kernel_eval(0.5), 0.5625);
    assert_eq!(kernel_eval(3.0), 0.0);
}

#[test]
fn knn_k3_is_mean_of_three_nearest() {
    let x: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 4.0, 7.0].iter().map(|&v| vec![v]).collect();
    let y = vec![eu(10.0), eu(20.0), eu(30.0), eu(40.0), eu(50.0)];
    let l = LabeledSet::new(&x, y).unwrap();
    let fit = FittedRegressor::fit(RegressorSpec::new(Family::Knn { k: 3 }, Mode::Supervised), l, &[]).unwrap();
    // nearest to 1.8: 2, 1, then 0 (distance 1.8) beats 4 (2.2)
    let p = fit.predict(&[1.8]).unwrap();
    assert!((p.as_euclidean().unwrap()[0] - 20.0).abs() <= 1e-12);
}

#[test]
fn knn_with_k_equal_n_ignores_the_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = roll(30, &mut rng);
    let c = random_unit(&mut rng);
    let y: Vec<MetricPoint> =
        (0..30).map(|_| MetricPoint::sphere(random_cap_point(c, 0.8, &mut rng)).unwrap()).collect();
    let all = frechet_mean(&WeightedSample::uniform(&y).unwrap()).unwrap();
    let l = LabeledSet::new(&x, y).unwrap();
    let fit = FittedRegressor::fit(RegressorSpec::new(Family::Knn { k: 30 }, Mode::Supervised), l, &[]).unwrap();
    for q in roll(5, &mut rng) {
        assert!(distance(&fit.predict(&q).unwrap(), &all).unwrap() <= 1e-12);
    }
}

#[test]
fn single_point_in_bandwidth_returns_its_response() {
    let x = vec![vec![0.0], vec![5.0], vec![10.0]];
    let y = vec![
        MetricPoint::sphere([1.0, 0.0, 0.0]).unwrap(),
        MetricPoint::sphere([0.0, 1.0, 0.0]).unwrap(),
        MetricPoint::sphere([0.0, 0.0, 1.0]).unwrap(),
    ];
    let l = LabeledSet::new(&x, y.clone()).unwrap();
    let fit =
        FittedRegressor::fit(RegressorSpec::new(Family::Nw { bandwidth: 1.0 }, Mode::Supervised), l, &[]).unwrap();
    assert_eq!(fit.predict(&[5.3]).unwrap(), y[1]);
    assert!(matches!(fit.predict(&[2.5]), Err(RegressionError::EmptyNeighborhood)));
}

#[test]
fn isolated_semi_query_is_an_error() {
    let x = vec![vec![0.0], vec![1.0], vec![2.0]];
    let l = LabeledSet::new(&x, vec![eu(0.0), eu(1.0), eu(2.0)]).unwrap();
    let mode = Mode::SemiSupervised(GraphConfig { rule: GraphChoice::Radius(Some(1.5)), fermat_s: 1.0 });
    for family in [Family::Nw { bandwidth: 100.0 }, Family::Knn { k: 1 }] {
        let fit = FittedRegressor::fit(RegressorSpec::new(family, mode), l.clone(), &[]).unwrap();
        assert!(matches!(fit.predict(&[10.0]), Err(RegressionError::IsolatedQuery)));
    }
}

#[test]
fn too_few_reachable_neighbors() {
    // two components: {0,1} and {10}
    let x = vec![vec![0.0], vec![1.0], vec![10.0]];
    let l = LabeledSet::new(&x, vec![eu(0.0), eu(1.0), eu(2.0)]).unwrap();
    let mode = Mode::SemiSupervised(GraphConfig { rule: GraphChoice::Radius(Some(1.5)), fermat_s: 1.0 });
    let fit = FittedRegressor::fit(RegressorSpec::new(Family::Knn { k: 3 }, mode), l, &[]).unwrap();
    assert!(matches!(fit.predict(&[0.5]), Err(RegressionError::NotEnoughReachable { needed: 3, reachable: 2 })));
}

#[test]
fn sphere_nw_prediction_beats_every_labeled_response() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = random_unit(&mut rng);
    let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let y: Vec<MetricPoint> =
        (0..20).map(|_| MetricPoint::sphere(random_cap_point(c, 0.4, &mut rng)).unwrap()).collect();
    let l = LabeledSet::new(&x, y.clone()).unwrap();
    let fit =
        FittedRegressor::fit(RegressorSpec::new(Family::Nw { bandwidth: 0.6 }, Mode::Supervised), l, &[]).unwrap();
    for _ in 0..20 {
        let q = vec![rng.random::<f64>(), rng.random::<f64>()];
        let w: Vec<f64> =
            x.iter().map(|xi| epan(((xi[0] - q[0]).powi(2) + (xi[1] - q[1]).powi(2)).sqrt() / 0.6)).collect();
        let obj = |m: &MetricPoint| -> f64 {
            y.iter().zip(&w).map(|(yi, wi)| wi * sphere_distance(sphere_vec(yi), sphere_vec(m)).powi(2)).sum()
        };
        let p = fit.predict(&q).unwrap();
        let best = obj(&p);
        for yi in &y {
            assert!(best <= obj(yi) + 1e-12);
        }
    }
}

#[test]
fn knn_interpolates_labeled_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = roll(60, &mut rng);
    let unlabeled = roll(200, &mut rng);
    let y: Vec<MetricPoint> = (0..60)
        .map(|_| {
            let a = random_spd(2, &mut rng);
            MetricPoint::spd(nalgebra::DMatrix::from_fn(2, 2, |i, j| a[i][j])).unwrap()
        })
        .collect();
    let l = LabeledSet::new(&x, y.clone()).unwrap();
    for mode in [
        Mode::Supervised,
        semi_default(),
        Mode::SemiSupervised(GraphConfig { rule: GraphChoice::Knn(4), fermat_s: 1.0 }),
    ] {
        let fit = FittedRegressor::fit(RegressorSpec::new(Family::Knn { k: 1 }, mode), l.clone(), &unlabeled).unwrap();
        for (xj, yj) in x.iter().zip(&y) {
            assert_eq!(&fit.predict(xj).unwrap(), yj);
        }
    }
}

#[test]
fn duplicated_labeled_points_tie_to_the_lower_index() {
    let x = vec![vec![0.0], vec![1.0], vec![0.0]];
    let l = LabeledSet::new(&x, vec![eu(5.0), eu(6.0), eu(7.0)]).unwrap();
    for mode in [Mode::Supervised, semi_default()] {
        let fit = FittedRegressor::fit(RegressorSpec::new(Family::Knn { k: 1 }, mode), l.clone(), &[]).unwrap();
        assert_eq!(fit.predict(&[0.0]).unwrap(), eu(5.0));
    }
}

/// Leave-one-out losses for 1-D kNN computed from scratch.
fn oracle_knn_table(x: &[f64], y: &[f64], ks: &[usize]) -> Vec<f64> {
    let n = x.len();
    ks.iter()
        .map(|&k| {
            let mut total = 0.0;
            for i in 0..n {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| (x[a] - x[i]).abs().total_cmp(&(x[b] - x[i]).abs()).then(a.cmp(&b)));
                let pred = others[..k].iter().map(|&j| y[j]).sum::<f64>() / k as f64;
                total += (pred - y[i]).powi(2);
            }
            total / n as f64
        })
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    let mut b = 0;
    for i in 1..v.len() {
        if v[i] < v[b] {
            b = i;
        }
    }
    b
}

#[test]
fn loocv_matches_exhaustive_table_on_noiseless_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ks: Vec<usize> = (1..=10).collect();
    let grid: Vec<Family> = ks.iter().map(|&k| Family::Knn { k }).collect();
    let even: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    let random: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    for (name, x) in [("even", even), ("random", random)] {
        let feats: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let l = LabeledSet::new(&feats, x.iter().map(|&v| eu(v)).collect()).unwrap();
        let d = cv_distance_matrix(&l, None);
        let (best, table) = loocv_select(&l, &grid, &d, Kernel::Epanechnikov).unwrap();
        let oracle = oracle_knn_table(&x, &x, &ks);
        for (a, b) in table.losses.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-12), "{name}: {a} vs {b}");
        }
        assert_eq!(best, grid[argmin(&oracle)], "{name}");
        if name == "even" {
            // symmetric neighbors cancel exactly for linear data
            assert_eq!(best, Family::Knn { k: 2 });
        }
    }
}

#[test]
fn loocv_nw_table_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 4.0).collect();
    let y: Vec<f64> = x.iter().map(|v| v.sin() + 0.1 * rng.random::<f64>()).collect();
    let feats: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let l = LabeledSet::new(&feats, y.iter().map(|&v| eu(v)).collect()).unwrap();
    let d = cv_distance_matrix(&l, None);
    let mut grid = default_bandwidth_grid(&d).unwrap();
    // the widest default bandwidth can still leave a fold empty
    grid.extend(bandwidth_grid(grid[9]));
    let fams: Vec<Family> = grid.iter().map(|&h| Family::Nw { bandwidth: h }).collect();
    let (best, table) = loocv_select(&l, &fams, &d, Kernel::Epanechnikov).unwrap();
    let oracle: Vec<f64> = grid
        .iter()
        .map(|&h| {
            let mut total = 0.0;
            for i in 0..80 {
                let (mut num, mut den) = (0.0, 0.0);
                for j in (0..80).filter(|&j| j != i) {
                    let w = epan((x[i] - x[j]).abs() / h);
                    num += w * y[j];
                    den += w;
                }
                if den == 0.0 {
                    return f64::INFINITY;
                }
                total += (num / den - y[i]).powi(2);
            }
            total / 80.0
        })
        .collect();
    for (a, b) in table.losses.iter().zip(&oracle) {
        assert!((a.is_infinite() && b.is_infinite()) || (a - b).abs() <= 1e-12);
    }
    assert_eq!(best, fams[argmin(&oracle)]);
}

#[test]
fn loocv_edge_cases() {
    let x: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 10.0].iter().map(|&v| vec![v]).collect();
    let l = LabeledSet::new(&x, vec![eu(0.0), eu(1.0), eu(2.0), eu(3.0)]).unwrap();
    let d = cv_distance_matrix(&l, None);
    let (best, _) = loocv_select(&l, &[Family::Knn { k: 2 }], &d, Kernel::Epanechnikov).unwrap();
    assert_eq!(best, Family::Knn { k: 2 });
    // h=1.5 leaves the fold at 10 empty; h=9 covers every fold
    let (best, table) =
        loocv_select(&l, &[Family::Nw { bandwidth: 1.5 }, Family::Nw { bandwidth: 9.0 }], &d, Kernel::Epanechnikov)
            .unwrap();
    assert!(table.losses[0].is_infinite());
    assert_eq!(best, Family::Nw { bandwidth: 9.0 });
    assert!(matches!(
        loocv_select(&l, &[Family::Nw { bandwidth: 0.5 }], &d, Kernel::Epanechnikov),
        Err(RegressionError::AllCandidatesFailed)
    ));
}

#[test]
fn loocv_keeps_held_out_point_in_the_graph() {
    // labeled at 0, 1, 2 with r = 1.2: removing vertex 1 would disconnect 0 and 2
    let x: Vec<Vec<f64>> = [0.0, 1.0, 2.0].iter().map(|&v| vec![v]).collect();
    let l = LabeledSet::new(&x, vec![eu(0.0), eu(1.0), eu(2.0)]).unwrap();
    let cfg = GraphConfig { rule: GraphChoice::Radius(Some(1.2)), fermat_s: 1.0 };
    let ctx = GraphContext::build(l.features(), &[], &cfg).unwrap();
    let d = cv_distance_matrix(&l, Some(&ctx));
    assert_eq!(d[(0, 2)], 2.0);
    let (_, table) = loocv_select(&l, &[Family::Knn { k: 2 }], &d, Kernel::Epanechnikov).unwrap();
    // folds: 0 -> mean(1,2), 1 -> mean(0,2), 2 -> mean(1,0)
    assert!((table.losses[0] - (2.25 + 0.0 + 2.25) / 3.0).abs() <= 1e-12);
}

#[test]
fn median_nn_distance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in [2, 3, 100, 101] {
        let x = roll(n, &mut rng);
        let l = LabeledSet::new(&x, (0..n).map(|i| eu(i as f64)).collect()).unwrap();
        let d = cv_distance_matrix(&l, None);
        let mut mins: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        mins.sort_by(f64::total_cmp);
        let want = if n % 2 == 1 { mins[n / 2] } else { (mins[n / 2 - 1] + mins[n / 2]) / 2.0 };
        assert!((median_nn_distance(&d).unwrap() - want).abs() <= 1e-12);
    }
    let d = cv_distance_matrix(
        &LabeledSet::new(&[vec![0.0], vec![1.0], vec![2.0]], vec![eu(0.0), eu(0.0), eu(0.0)]).unwrap(),
        None,
    );
    assert_eq!(median_nn_distance(&d).unwrap(), 1.0);
    let grid = bandwidth_grid(1.0);
    assert_eq!(grid.len(), 10);
    assert!((grid[0] - 5f64.powf(0.1)).abs() < 1e-15 && (grid[9] - 5.0).abs() < 1e-15);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn coincident_labels_give_degenerate_grid() {
    let l = LabeledSet::new(&[vec![1.0], vec![1.0]], vec![eu(0.0), eu(1.0)]).unwrap();
    let d = cv_distance_matrix(&l, None);
    assert!(matches!(default_bandwidth_grid(&d), Err(RegressionError::DegenerateDistances(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn euclidean_reduction_in_both_modes(seed in any::<u64>(), h in 0.8f64..3.0, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = roll(60, &mut rng);
        let unlabeled = roll(100, &mut rng);
        let y: Vec<[f64; 2]> = (0..60).map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() - 0.5]).collect();
        let l = LabeledSet::new(&x, y.iter().map(|v| MetricPoint::euclidean(v.to_vec()).unwrap()).collect()).unwrap();
        let q = roll(5, &mut rng);
        for mode in [Mode::Supervised, semi_default()] {
            let nw = FittedRegressor::fit(RegressorSpec::new(Family::Nw { bandwidth: h }, mode), l.clone(), &unlabeled).unwrap();
            let knn = FittedRegressor::fit(RegressorSpec::new(Family::Knn { k }, mode), l.clone(), &unlabeled).unwrap();
            for qi in &q {
                let d = nw.distances(qi).unwrap();
                let w: Vec<f64> = d.iter().map(|&di| if di.is_finite() { epan(di / h) } else { 0.0 }).collect();
                let sw: f64 = w.iter().sum();
                match nw.predict(qi) {
                    Ok(p) => {
                        let p = p.as_euclidean().unwrap();
                        for c in 0..2 {
                            let want = w.iter().zip(&y).map(|(w, y)| w * y[c]).sum::<f64>() / sw;
                            prop_assert!((p[c] - want).abs() <= 1e-12 * want.abs().max(1.0));
                        }
                    }
                    Err(_) => prop_assert_eq!(sw, 0.0),
                }
                let mut idx: Vec<usize> = (0..60).filter(|&i| d[i].is_finite()).collect();
                idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
                match knn.predict(qi) {
                    Ok(p) => {
                        let p = p.as_euclidean().unwrap();
                        for c in 0..2 {
                            let want = idx[..k].iter().map(|&i| y[i][c]).sum::<f64>() / k as f64;
                            prop_assert!((p[c] - want).abs() <= 1e-12 * want.abs().max(1.0));
                        }
                    }
                    Err(_) => prop_assert!(idx.len() < k),
                }
            }
        }
    }

    #[test]
    fn complete_graph_matches_supervised(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..70).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let c = random_unit(&mut rng);
        let y: Vec<MetricPoint> = (0..40).map(|_| MetricPoint::sphere(random_cap_point(c, 1.0, &mut rng)).unwrap()).collect();
        let l = LabeledSet::new(&pts[..40], y).unwrap();
        let semi = Mode::SemiSupervised(GraphConfig { rule: GraphChoice::Radius(Some(1.5)), fermat_s: 1.0 });
        for fam in [Family::Nw { bandwidth: 0.4 }, Family::Knn { k }] {
            let a = FittedRegressor::fit(RegressorSpec::new(fam, Mode::Supervised), l.clone(), &[]).unwrap();
            let b = FittedRegressor::fit(RegressorSpec::new(fam, semi), l.clone(), &pts[40..]).unwrap();
            for _ in 0..5 {
                let q = vec![rng.random::<f64>(), rng.random::<f64>()];
                prop_assert_eq!(a.distances(&q).unwrap(), b.distances(&q).unwrap());
                match (a.predict(&q), b.predict(&q)) {
                    (Ok(p1), Ok(p2)) => prop_assert!(distance(&p1, &p2).unwrap() <= 1e-10),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "modes disagree on failure"),
                }
            }
        }
    }

    #[test]
    fn nw_is_invariant_to_weight_scaling(seed in any::<u64>(), lambda in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<MetricPoint> = (0..10)
            .map(|_| {
                let a = random_spd(3, &mut rng);
                MetricPoint::spd(nalgebra::DMatrix::from_fn(3, 3, |i, j| a[i][j])).unwrap()
            })
            .collect();
        let d: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let p = nw_estimate(&d, &y, 0.9, Kernel::Epanechnikov).unwrap();
        let w: Vec<f64> = d.iter().map(|di| lambda * epan(di / 0.9)).collect();
        let q = frechet_mean(&WeightedSample::new(&y, w).unwrap()).unwrap();
        prop_assert!(distance(&p, &q).unwrap() <= 1e-10);
    }

    #[test]
    fn loocv_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = roll(40, &mut rng);
        let c = random_unit(&mut rng);
        let y: Vec<MetricPoint> = (0..40).map(|_| MetricPoint::sphere(random_cap_point(c, 1.0, &mut rng)).unwrap()).collect();
        let l = LabeledSet::new(&x, y).unwrap();
        let ctx = GraphContext::build(l.features(), &roll(60, &mut rng), &GraphConfig::default()).unwrap();
        let d = cv_distance_matrix(&l, Some(&ctx));
        let mut grid: Vec<Family> = default_knn_grid(40).into_iter().map(|k| Family::Knn { k }).collect();
        grid.extend(default_bandwidth_grid(&d).unwrap().into_iter().map(|h| Family::Nw { bandwidth: h }));
        let first = loocv_select(&l, &grid, &d, Kernel::Epanechnikov);
        let second = loocv_select(&l, &grid, &d, Kernel::Epanechnikov);
        prop_assert_eq!(format!("{first:?}"), format!("{second:?}"));
    }
}

mod common;

use common::gen::paired_table;
use common::{f_test_oracle, paired_cov_oracle};
use pairmn_core::estimate::{dm_theta_moment, paired_covariance, unpaired_covariance, CountMatrix, PairedCounts};
use pairmn_core::hypothesis::{paired_f_test, unpaired_dm_test};
use pairmn_core::Error;

fn max_rel(a: &pairmn_core::numkit::SymMatrix, b: &nalgebra::DMatrix<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            worst = worst.max((a.get(i, j) - b[(i, j)]).abs() / scale);
        }
    }
    worst
}

#[test]
fn covariance_matches_direct_formula() {
    for (seed, n, d, rho) in [(1, 8, 3, 0.0), (2, 30, 5, 0.5), (3, 100, 8, 0.8), (4, 12, 2, 0.3)] {
        let pc = paired_table(n, d, rho, 60.0, seed);
        let est = paired_covariance(&pc).unwrap();
        let o = paired_cov_oracle(&pc);
        assert!(max_rel(&est.sigma_hat, &o.sigma) < 1e-10, "seed {seed}");
        for t in 0..2 {
            let g = if t == 0 { &est.group1 } else { &est.group2 };
            assert!(max_rel(&g.s, &o.s[t]) < 1e-10);
            assert!(max_rel(&g.g, &o.g[t]) < 1e-10);
            assert!((g.n_c - o.n_c[t]).abs() < 1e-10 * o.n_c[t]);
        }
        let s12 = est.sigma12.as_ref().unwrap();
        for i in 0..d {
            for j in 0..d {
                assert!((s12.get(i, j) - o.sigma12[(i, j)]).abs() < 1e-10 * o.sigma12.amax().max(1e-300));
            }
        }
        for (a, b) in est.pi_diff().iter().zip(o.diff.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn f_test_matches_projection_oracle() {
    for (seed, n, d, rho) in [(5, 10, 3, 0.2), (6, 40, 4, 0.6), (7, 100, 6, 0.0), (8, 25, 2, 0.9)] {
        let pc = paired_table(n, d, rho, 80.0, seed);
        let ours = paired_f_test(&pc).unwrap();
        let (f, p) = f_test_oracle(&pc);
        assert!((ours.statistic - f).abs() < 1e-8 * f.max(1.0), "seed {seed}: {} vs {f}", ours.statistic);
        assert!((ours.p_value - p).abs() < 1e-8, "seed {seed}: {} vs {p}", ours.p_value);
        assert_eq!((ours.df1, ours.df2), (d - 1, Some(n - d + 1)));
    }
}

#[test]
fn n_c_is_common_total_for_equal_totals() {
    let rows1: Vec<Vec<u64>> = (0..6).map(|i| vec![10 + i, 20 - i, 10]).collect();
    let rows2: Vec<Vec<u64>> = (0..6).map(|i| vec![12, 18 - i, 10 + i]).collect();
    let pc = PairedCounts::from_rows(&rows1, &rows2).unwrap();
    let est = paired_covariance(&pc).unwrap();
    assert!((est.group1.n_c - 40.0).abs() < 1e-12);
    assert!((est.group2.n_c - 40.0).abs() < 1e-12);
}

#[test]
fn unpaired_covariance_omits_cross_term() {
    let pc = paired_table(20, 4, 0.5, 50.0, 9);
    let paired = paired_covariance(&pc).unwrap();
    let unpaired = unpaired_covariance(&pc.counts1, &pc.counts2).unwrap();
    let expected = paired.group1.variance_term().add(&paired.group2.variance_term());
    assert!(unpaired.sigma_hat.sub(&expected).max_abs() < 1e-15);
    assert!(unpaired.sigma12.is_none());
}

/// Identical rows give S = 0, so θ̂ clamps to 0; one-hot rows with very
/// different profiles push θ̂ towards 1.
#[test]
fn theta_moment_extremes() {
    let same = CountMatrix::from_rows(&vec![vec![5, 5, 10]; 6]).unwrap();
    assert_eq!(dm_theta_moment(&same).unwrap(), 0.0);
    let extreme = CountMatrix::from_rows(&[vec![20, 0, 0], vec![0, 20, 0], vec![0, 0, 20], vec![20, 0, 0]]).unwrap();
    assert!(dm_theta_moment(&extreme).unwrap() > 0.9);
}

#[test]
fn dm_statistic_matches_hand_formula() {
    let g1 = CountMatrix::from_rows(&[vec![10, 5, 5], vec![8, 8, 4], vec![12, 3, 5]]).unwrap();
    let g2 = CountMatrix::from_rows(&[vec![4, 10, 6], vec![6, 9, 5], vec![5, 5, 10], vec![3, 12, 5]]).unwrap();
    let r = unpaired_dm_test(&g1, &g2).unwrap();
    // Recompute from scratch.
    let part = |g: &CountMatrix| {
        let tot: Vec<f64> = g.totals().iter().map(|t| *t as f64).collect();
        let nd: f64 = tot.iter().sum();
        let sq: f64 = tot.iter().map(|t| t * t).sum();
        let pi: Vec<f64> = g.column_sums().iter().map(|c| *c as f64 / nd).collect();
        let theta = dm_theta_moment(g).unwrap();
        (pi, (theta * (sq - nd) + nd) / (nd * nd))
    };
    let (p1, c1) = part(&g1);
    let (p2, c2) = part(&g2);
    let stat: f64 = (0..3).map(|k| (p1[k] - p2[k]).powi(2) / (c1 * p1[k] + c2 * p2[k])).sum();
    assert!((r.statistic - stat).abs() < 1e-12 * stat);
    assert_eq!((r.df1, r.df2), (2, None));
    assert!((r.p_value - (-stat / 2.0).exp()).abs() < 1e-12);
}

#[test]
fn empty_categories_and_subjects_are_dropped() {
    let rows1 = vec![vec![5, 0, 3, 2], vec![0, 0, 0, 0], vec![4, 0, 4, 4], vec![3, 0, 6, 1], vec![7, 0, 1, 2], vec![2, 0, 2, 8]];
    let rows2 = vec![vec![4, 0, 4, 2], vec![1, 0, 1, 1], vec![5, 0, 3, 4], vec![2, 0, 7, 1], vec![6, 0, 2, 2], vec![3, 0, 3, 6]];
    let pc = PairedCounts::from_rows(&rows1, &rows2).unwrap();
    let r = paired_f_test(&pc).unwrap();
    assert_eq!((r.effective_n, r.effective_d), (5, 3));
    let (reduced, rows, cols) = pc.reduced();
    assert_eq!(rows, vec![true, false, true, true, true, true]);
    assert_eq!(cols, vec![true, false, true, true]);
    assert_eq!(paired_f_test(&reduced).unwrap(), r);
}

#[test]
fn single_category_is_degenerate() {
    let rows = vec![vec![5, 0], vec![3, 0], vec![6, 0], vec![2, 0]];
    let pc = PairedCounts::from_rows(&rows, &rows).unwrap();
    let e = paired_f_test(&pc).unwrap_err();
    assert!(matches!(e, Error::DegenerateInput(_)), "{e:?}");
    assert!(e.is_degeneracy());
}

#[test]
fn all_ones_totals_are_degenerate() {
    let rows1 = vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0], vec![0, 1, 0]];
    let rows2 = vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1], vec![0, 1, 0], vec![0, 0, 1]];
    let pc = PairedCounts::from_rows(&rows1, &rows2).unwrap();
    assert!(paired_f_test(&pc).unwrap_err().is_degeneracy());
}

#[test]
fn three_by_three_hand_dataset() {
    let rows1 = vec![vec![3, 1, 2], vec![0, 4, 4], vec![5, 2, 1]];
    let rows2 = vec![vec![2, 2, 2], vec![1, 3, 5], vec![4, 4, 0]];
    let pc = PairedCounts::from_rows(&rows1, &rows2).unwrap();
    let est = paired_covariance(&pc).unwrap();
    let o = paired_cov_oracle(&pc);
    assert!(max_rel(&est.sigma_hat, &o.sigma) < 1e-12);
    // N = (6, 8, 8): N_c = (22² − 164) / (2·22) = 320/44.
    assert!((est.group1.n_c - 320.0 / 44.0).abs() < 1e-12);
    assert!((o.n_c[0] - 320.0 / 44.0).abs() < 1e-12);
}

#[test]
fn ten_by_three_hand_dataset() {
    let rows1 = vec![
        vec![12, 5, 3],
        vec![8, 9, 6],
        vec![15, 2, 4],
        vec![7, 7, 7],
        vec![10, 3, 9],
        vec![4, 12, 2],
        vec![9, 6, 6],
        vec![11, 4, 1],
        vec![6, 8, 10],
        vec![13, 5, 5],
    ];
    let rows2 = vec![
        vec![9, 8, 3],
        vec![6, 10, 8],
        vec![12, 5, 4],
        vec![5, 9, 6],
        vec![8, 6, 10],
        vec![3, 13, 4],
        vec![7, 8, 5],
        vec![9, 6, 2],
        vec![4, 9, 12],
        vec![10, 7, 6],
    ];
    let pc = PairedCounts::from_rows(&rows1, &rows2).unwrap();
    let ours = paired_f_test(&pc).unwrap();
    let (f, p) = f_test_oracle(&pc);
    assert!((ours.statistic - f).abs() < 1e-8 * f.max(1.0));
    assert!((ours.p_value - p).abs() < 1e-8);
}

/// Unpaired estimate = paired estimate + cross term, with the pairing shuffled.
#[test]
fn paired_and_unpaired_differ_by_cross_term() {
    let pc = paired_table(15, 4, 0.4, 70.0, 10);
    let mut rows2: Vec<Vec<u64>> = pc.counts2.rows().map(<[u64]>::to_vec).collect();
    rows2.rotate_left(4);
    let rows1: Vec<Vec<u64>> = pc.counts1.rows().map(<[u64]>::to_vec).collect();
    let shuffled = PairedCounts::from_rows(&rows1, &rows2).unwrap();
    let paired = paired_covariance(&shuffled).unwrap();
    let unpaired = unpaired_covariance(&shuffled.counts1, &shuffled.counts2).unwrap();
    let s12 = paired.sigma12.as_ref().unwrap();
    let sym = pairmn_core::numkit::SymMatrix::symmetrize(&s12.add(&s12.transpose())).unwrap();
    let rebuilt = paired.sigma_hat.add(&sym.scale(paired.cross_weight));
    assert!(rebuilt.sub(&unpaired.sigma_hat).max_abs() < 1e-15);
}

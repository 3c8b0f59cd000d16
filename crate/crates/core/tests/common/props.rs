//! Strategies and checks for the structural invariants. Each check returns
//! a `TestCaseResult` so it can run under `proptest!` or a bare `TestRunner`.

use proptest::prelude::*;
use proptest::test_runner::TestCaseResult;

use pairmn_core::estimate::{paired_covariance, PairedCounts};
use pairmn_core::io::{
    read_counts, read_distances, read_node_table, tree_counts_from_records, tree_counts_to_records, write_counts, write_distances,
    write_node_table, LabelledDistances, ReportFile,
};
use pairmn_core::numkit::{pinv_truncated, sym_eig, SymMatrix};
use pairmn_core::tree::{aggregate_q, kr_distance, slice_subtree, subtree_tests, GlobalMethod, NodeSpec, SubtreeMethod, TaxTree, TreeCounts};

/// Symmetric `B Bᵀ` of rank at most `r`, optionally shifted by a negative
/// definite part so some eigenvalues are negative.
pub fn sym_matrix() -> impl Strategy<Value = SymMatrix> {
    (1usize..8)
        .prop_flat_map(|dim| (Just(dim), 1..=dim, prop::collection::vec(-3.0f64..3.0, dim * dim), prop::bool::ANY))
        .prop_map(|(dim, rank, b, negate_last)| {
            let m = SymMatrix::from_upper(dim, |i, j| (0..rank).map(|k| b[i * dim + k] * b[j * dim + k]).sum());
            if negate_last && rank < dim {
                let e: Vec<f64> = (0..dim).map(|i| b[i * dim + dim - 1]).collect();
                m.sub(&SymMatrix::from_upper(dim, |i, j| e[i] * e[j]))
            } else {
                m
            }
        })
}

fn max_abs(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect()).collect()
}

/// Truncated pseudoinverse: symmetric, PSD, `P A P = P`, and `A P A = A` on
/// the retained subspace.
pub fn check_pinv(a: &SymMatrix) -> TestCaseResult {
    let dim = a.dim();
    let Ok(p) = pinv_truncated(a, dim, 1e-9) else {
        // Only a matrix with no positive eigenvalue may fail.
        let eig = sym_eig(a).unwrap();
        prop_assert!(eig.values[0] <= 0.0);
        return Ok(());
    };
    let pm = rows(&p.matrix);
    let am = rows(a);
    for i in 0..dim {
        for j in 0..dim {
            prop_assert_eq!(pm[i][j], pm[j][i]);
        }
    }
    let peig = sym_eig(&p.matrix).unwrap();
    let pscale = max_abs(&pm).max(1e-300);
    prop_assert!(peig.values.iter().all(|v| *v >= -1e-8 * pscale));
    let pap = mul(&mul(&pm, &am), &pm);
    for i in 0..dim {
        for j in 0..dim {
            prop_assert!((pap[i][j] - pm[i][j]).abs() <= 1e-8 * pscale, "PAP != P");
        }
    }
    // Project A onto the kept eigenvectors and compare with A P A.
    let eig = sym_eig(a).unwrap();
    let cutoff = 1e-9 * eig.values[0];
    let kept = eig.reassemble((0..dim).filter(|&k| eig.values[k] > cutoff).map(|k| (k, eig.values[k])));
    let apa = mul(&mul(&am, &pm), &am);
    let ascale = max_abs(&am).max(1e-300);
    for i in 0..dim {
        for j in 0..dim {
            prop_assert!((apa[i][j] - kept.get(i, j)).abs() <= 1e-8 * ascale, "APA != A on kept subspace");
        }
    }
    Ok(())
}

/// Paired counts with every subject total positive in both conditions.
pub fn paired_counts() -> impl Strategy<Value = PairedCounts> {
    (3usize..25, 2usize..7)
        .prop_flat_map(|(n, d)| {
            let row = move || prop::collection::vec(0u64..60, d).prop_map(|mut r| {
                if r.iter().all(|v| *v == 0) {
                    r[0] = 1;
                }
                r
            });
            (prop::collection::vec(row(), n), prop::collection::vec(row(), n))
        })
        .prop_map(|(a, b)| PairedCounts::from_rows(&a, &b).unwrap())
}

pub fn check_annihilation(pc: &PairedCounts) -> TestCaseResult {
    let Ok(est) = paired_covariance(pc) else {
        return Ok(());
    };
    let sigma = est.sigma_hat.as_matrix();
    for v in sigma.row_sums().into_iter().chain(sigma.col_sums()) {
        prop_assert!(v.abs() <= 1e-10, "row/column sum {v}");
    }
    Ok(())
}

/// Random rooted tree: node `k > 0` hangs under a node `< k`; specs are
/// emitted in a shuffled order.
pub fn tree_specs() -> impl Strategy<Value = Vec<NodeSpec>> {
    (2usize..16)
        .prop_flat_map(|m| {
            let parents: Vec<BoxedStrategy<usize>> = (1..m).map(|k| (0..k).boxed()).collect();
            (parents, Just((0..m).collect::<Vec<usize>>()).prop_shuffle())
        })
        .prop_map(|(parents, order)| {
            order
                .into_iter()
                .map(|k| NodeSpec {
                    id: format!("n{k}"),
                    parent: if k == 0 { None } else { Some(format!("n{}", parents[k - 1])) },
                    rank: format!("r{}", k % 3),
                    name: format!("taxon {k}"),
                })
                .collect()
        })
}

/// A tree with `n` subjects of random assigned counts in both conditions.
pub fn tree_with_counts() -> impl Strategy<Value = (TaxTree, TreeCounts)> {
    (tree_specs(), 1usize..12)
        .prop_flat_map(|(specs, n)| {
            let m = specs.len();
            let counts = prop::collection::vec(prop::collection::vec(0u64..40, m), n);
            (Just(specs), counts.clone(), counts)
        })
        .prop_map(|(specs, a1, a2)| {
            let tree = TaxTree::new(specs).unwrap();
            let ids = (0..a1.len()).map(|i| format!("s{i}")).collect();
            let tc = TreeCounts::new(&tree, ids, a1, a2).unwrap();
            (tree, tc)
        })
}

pub fn check_tree_round_trip(tree: &TaxTree, tc: &TreeCounts) -> TestCaseResult {
    for t in 0..2 {
        for (w, q) in tc.assigned[t].iter().zip(&tc.cumulative[t]) {
            prop_assert_eq!(&aggregate_q(tree, w).unwrap(), q);
            prop_assert_eq!(q[tree.root()], w.iter().sum::<u64>());
            for k in 0..tree.len() {
                let below: u64 = tree.children(k).iter().map(|&c| q[c]).sum();
                prop_assert_eq!(q[k], w[k] + below);
            }
        }
    }
    for k in tree.internal_nodes() {
        let s = slice_subtree(tree, tc, k).unwrap();
        prop_assert_eq!(s.full.d(), tree.children(k).len() + 1);
        for i in 0..tc.n() {
            prop_assert_eq!(s.full.counts1.total(i), tc.cumulative[0][i][k]);
            prop_assert_eq!(s.full.counts2.total(i), tc.cumulative[1][i][k]);
        }
    }
    Ok(())
}

pub fn check_kr_pseudometric(tree: &TaxTree, tc: &TreeCounts) -> TestCaseResult {
    let qs: Vec<&[u64]> = tc.cumulative[0]
        .iter()
        .chain(&tc.cumulative[1])
        .filter(|q| q[tree.root()] > 0)
        .map(Vec::as_slice)
        .collect();
    let d = |a: &[u64], b: &[u64]| kr_distance(tree, a, b).unwrap();
    for a in &qs {
        prop_assert_eq!(d(a, a), 0.0);
        for b in &qs {
            let ab = d(a, b);
            prop_assert!(ab >= 0.0 && ab <= 2.0 + 1e-12);
            prop_assert_eq!(ab, d(b, a));
            for c in qs.iter().take(4) {
                prop_assert!(ab <= d(a, c) + d(c, b) + 1e-12);
            }
        }
    }
    Ok(())
}

/// Node table, counts, report JSON and distance matrix all survive a
/// write/read cycle.
pub fn check_formats(tree: &TaxTree, tc: &TreeCounts) -> TestCaseResult {
    let specs = tree.to_specs();
    let back = read_node_table(write_node_table(&specs).as_bytes()).unwrap();
    prop_assert_eq!(&back, &specs);

    let recs = tree_counts_to_records(tree, tc);
    let parsed = read_counts(write_counts(&recs).as_bytes()).unwrap();
    prop_assert_eq!(&parsed, &recs);
    let (tc2, warnings) = tree_counts_from_records(tree, &parsed).unwrap();
    prop_assert!(warnings.is_empty());
    prop_assert_eq!(&tc2, tc);

    if let Ok(report) = subtree_tests(tree, tc, 0.1, SubtreeMethod::Paired) {
        let file = ReportFile::from_report(tree, &report, GlobalMethod::SecondSmallest);
        let json = file.to_json();
        let again = ReportFile::from_json(&json).unwrap();
        prop_assert_eq!(&again, &file);
        prop_assert_eq!(again.to_json(), json);
    }

    let qs: Vec<&[u64]> = tc.cumulative[0]
        .iter()
        .chain(&tc.cumulative[1])
        .filter(|q| q[tree.root()] > 0)
        .map(Vec::as_slice)
        .collect();
    if !qs.is_empty() {
        let labels: Vec<String> = (0..qs.len()).map(|i| format!("x{i}")).collect();
        let matrix = pairmn_core::tree::kr_distance_matrix(tree, &qs).unwrap();
        let dist = LabelledDistances { labels, matrix };
        let back = read_distances(write_distances(&dist).as_bytes()).unwrap();
        prop_assert_eq!(back, dist);
    }
    Ok(())
}

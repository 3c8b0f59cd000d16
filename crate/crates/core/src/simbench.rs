//! Monte Carlo studies: size and power of the flat paired and unpaired
//! tests, and the tree-level resampling study with sparse or dense
//! perturbations.
//!
//! Every grid point draws from `root.substream(point)` and every replicate
//! from a further `substream(replicate)`, so tables do not depend on the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::PairedCounts;
use crate::hypothesis::{paired_f_test, unpaired_dm_test};
use crate::io::CountRecord;
use crate::model::{sample_pairmn_lognormal, sample_pairmn_mixed_dirichlet, LogNormalParams, MixedDirichletParams, ThetaScale};
use crate::numkit::sample::{binomial, dirichlet, multinomial, poisson, standard_normal};
use crate::numkit::RngStream;
use crate::tree::{
    global_test, kr_distance_matrix, permanova_paired, subtree_tests, GlobalMethod, NodeSpec, SubtreeMethod, SubtreeReport, TaxTree,
    TreeCounts,
};

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    /// `flat`, `tree`, or `tree_synthetic` when the built-in reference was used.
    pub study: String,
    /// Hypothesis (`null`/`alternative`) or perturbation pattern.
    pub setting: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub p_eps: Option<f64>,
    pub method: String,
    /// Node name for per-subtree discovery rates.
    pub node: Option<String>,
    pub rate: f64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTable {
    pub rows: Vec<SimRow>,
}

/// Monte Carlo standard error of a proportion.
pub fn rate_se(rate: f64, reps: usize) -> f64 {
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

fn rate_row(study: &str, setting: &str, n: usize, rho: Option<f64>, p_eps: Option<f64>, method: &str, hits: usize, reps: usize) -> SimRow {
    let rate = hits as f64 / reps as f64;
    SimRow {
        study: study.into(),
        setting: setting.into(),
        n,
        rho,
        p_eps,
        method: method.into(),
        node: None,
        rate,
        se: rate_se(rate, reps),
        replicates: reps,
    }
}

impl SimTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<SimRow>, _>>()
            .map_err(|e| invalid(e.to_string()))?;
        Ok(SimTable { rows })
    }

    /// First row matching `setting`, `n`, `method` and either `rho` or
    /// `p_eps` (whichever is given).
    pub fn find(&self, setting: &str, n: usize, x: f64, method: &str) -> Option<&SimRow> {
        self.rows.iter().find(|r| {
            r.setting == setting
                && r.n == n
                && r.method == method
                && r.node.is_none()
                && (r.rho == Some(x) || r.p_eps == Some(x))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

impl Hypothesis {
    fn name(self) -> &'static str {
        match self {
            Hypothesis::Null => "null",
            Hypothesis::Alternative => "alternative",
        }
    }
}

/// Latent-composition generator for the flat study. `pi2` / `mu2` are used
/// only under the alternative; under the null condition 2 reuses condition
/// 1's mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlatGenerator {
    MixedDirichlet {
        pi1: Vec<f64>,
        pi2: Vec<f64>,
        ell: Vec<f64>,
        theta_a1: f64,
        theta_a2: f64,
        theta_ell: f64,
        #[serde(default)]
        scale: ThetaScale,
    },
    #[serde(rename = "lognormal")]
    LogNormal {
        mu1: Vec<f64>,
        mu2: Vec<f64>,
        sd1: Vec<f64>,
        sd2: Vec<f64>,
    },
}

enum FlatModel {
    Dir(MixedDirichletParams),
    LogN(LogNormalParams),
}

impl FlatGenerator {
    fn name(&self) -> &'static str {
        match self {
            FlatGenerator::MixedDirichlet { .. } => "mixed_dirichlet",
            FlatGenerator::LogNormal { .. } => "lognormal",
        }
    }

    fn model(&self, rho: f64, h: Hypothesis) -> Result<FlatModel> {
        match self {
            FlatGenerator::MixedDirichlet {
                pi1,
                pi2,
                ell,
                theta_a1,
                theta_a2,
                theta_ell,
                scale,
            } => {
                let second = if h == Hypothesis::Null { pi1 } else { pi2 };
                Ok(FlatModel::Dir(MixedDirichletParams::from_means(
                    pi1, second, ell, *theta_a1, *theta_a2, *theta_ell, rho, *scale,
                )?))
            }
            FlatGenerator::LogNormal { mu1, mu2, sd1, sd2 } => {
                let p = LogNormalParams {
                    mu1: mu1.clone(),
                    mu2: if h == Hypothesis::Null { mu1.clone() } else { mu2.clone() },
                    sd1: sd1.clone(),
                    sd2: sd2.clone(),
                    rho,
                };
                p.validate()?;
                Ok(FlatModel::LogN(p))
            }
        }
    }
}

fn default_total_mean() -> f64 {
    1000.0
}
fn default_flat_reps() -> usize {
    2000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_seed() -> u64 {
    1
}
fn default_hypotheses() -> Vec<Hypothesis> {
    vec![Hypothesis::Null, Hypothesis::Alternative]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatSimConfig {
    pub generator: FlatGenerator,
    pub n_grid: Vec<usize>,
    pub rho_grid: Vec<f64>,
    /// Mean of the Poisson read totals.
    #[serde(default = "default_total_mean")]
    pub total_mean: f64,
    #[serde(default = "default_flat_reps")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_hypotheses")]
    pub hypotheses: Vec<Hypothesis>,
}

pub const DEFAULT_ELL: [f64; 8] = [0.12, 0.06, 0.08, 0.43, 0.02, 0.14, 0.1, 0.05];
pub const DEFAULT_PI1: [f64; 8] = [0.15, 0.05, 0.22, 0.3, 0.03, 0.1, 0.07, 0.08];
pub const DEFAULT_PI2: [f64; 8] = [0.1, 0.1, 0.22, 0.3, 0.03, 0.1, 0.07, 0.08];
pub const DEFAULT_MU1: [f64; 8] = [3.0, 1.0, 0.5, 1.0, 0.0, 1.0, 1.0, 0.0];
pub const DEFAULT_MU2: [f64; 8] = [3.0, 1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0];

impl FlatSimConfig {
    /// The eight-taxon mixed-Dirichlet design with θ read as Dirichlet
    /// concentrations.
    pub fn mixed_dirichlet_default() -> Self {
        FlatSimConfig {
            generator: FlatGenerator::MixedDirichlet {
                pi1: DEFAULT_PI1.to_vec(),
                pi2: DEFAULT_PI2.to_vec(),
                ell: DEFAULT_ELL.to_vec(),
                theta_a1: 3.0,
                theta_a2: 5.0,
                theta_ell: 1.0,
                scale: ThetaScale::Concentration,
            },
            n_grid: vec![20, 50, 100],
            rho_grid: vec![0.0, 0.2, 0.4, 0.6],
            total_mean: default_total_mean(),
            replicates: default_flat_reps(),
            alpha: default_alpha(),
            seed: default_seed(),
            hypotheses: default_hypotheses(),
        }
    }

    pub fn lognormal_default() -> Self {
        FlatSimConfig {
            generator: FlatGenerator::LogNormal {
                mu1: DEFAULT_MU1.to_vec(),
                mu2: DEFAULT_MU2.to_vec(),
                sd1: vec![1.0; 8],
                sd2: vec![1.0; 8],
            },
            ..Self::mixed_dirichlet_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.rho_grid.is_empty() || self.hypotheses.is_empty() {
            return Err(invalid("n, rho and hypothesis grids must be nonempty"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.n_grid.contains(&0) {
            return Err(invalid("n must be positive"));
        }
        if !(self.total_mean > 0.0 && self.total_mean.is_finite()) {
            return Err(invalid("total_mean must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        for &rho in &self.rho_grid {
            for &h in &self.hypotheses {
                self.generator.model(rho, h)?;
            }
        }
        Ok(())
    }
}

/// Outcome of one flat replicate: `(paired p, unpaired p)`; a test that
/// cannot be computed counts as not rejecting.
pub fn flat_replicate(model_cfg: &FlatSimConfig, n: usize, rho: f64, h: Hypothesis, rng: &mut RngStream) -> Result<(Option<f64>, Option<f64>)> {
    let model = model_cfg.generator.model(rho, h)?;
    let mut rows1 = Vec::with_capacity(n);
    let mut rows2 = Vec::with_capacity(n);
    for _ in 0..n {
        let totals = (poisson(model_cfg.total_mean, rng)?, poisson(model_cfg.total_mean, rng)?);
        let (x, y) = match &model {
            FlatModel::Dir(p) => sample_pairmn_mixed_dirichlet(p, totals, rng)?,
            FlatModel::LogN(p) => sample_pairmn_lognormal(p, totals, rng)?,
        };
        rows1.push(x);
        rows2.push(y);
    }
    let pc = PairedCounts::from_rows(&rows1, &rows2)?;
    let paired = ok_or_degenerate(paired_f_test(&pc).map(|t| t.p_value))?;
    let unpaired = ok_or_degenerate(unpaired_dm_test(&pc.counts1, &pc.counts2).map(|t| t.p_value))?;
    Ok((paired, unpaired))
}

fn ok_or_degenerate<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_degeneracy() => Ok(None),
        Err(e) => Err(e),
    }
}

fn rejects(p: Option<f64>, alpha: f64) -> bool {
    p.is_some_and(|p| p < alpha)
}

pub fn run_flat_sim(cfg: &FlatSimConfig) -> Result<SimTable> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut rows = Vec::new();
    let mut point = 0u64;
    for &h in &cfg.hypotheses {
        for &n in &cfg.n_grid {
            for &rho in &cfg.rho_grid {
                let stream = root.substream(point);
                point += 1;
                let out: Vec<(Option<f64>, Option<f64>)> = (0..cfg.replicates as u64)
                    .into_par_iter()
                    .map(|r| flat_replicate(cfg, n, rho, h, &mut stream.substream(r)))
                    .collect::<Result<_>>()?;
                let hits_p = out.iter().filter(|o| rejects(o.0, cfg.alpha)).count();
                let hits_u = out.iter().filter(|o| rejects(o.1, cfg.alpha)).count();
                let setting = format!("{}_{}", cfg.generator.name(), h.name());
                rows.push(rate_row("flat", &setting, n, Some(rho), None, "paired", hits_p, cfg.replicates));
                rows.push(rate_row("flat", &setting, n, Some(rho), None, "unpaired", hits_u, cfg.replicates));
            }
        }
    }
    Ok(SimTable { rows })
}

/// Resampling source for the tree study: per-sample node compositions P°
/// (remainder proportions, rows summing to 1) and read totals N°.
#[derive(Debug, Clone)]
pub struct TreeReference {
    pub tree: TaxTree,
    pub compositions: Vec<Vec<f64>>,
    pub totals: Vec<u64>,
    pub synthetic: bool,
}

/// `(id, parent, rank, name, mean share of reads assigned to the node itself in %)`.
const SYNTHETIC_TAXA: &[(&str, &str, &str, &str, f64)] = &[
    ("1", "", "kingdom", "k__Bacteria", 0.5),
    ("2", "1", "phylum", "p__Firmicutes", 0.5),
    ("3", "2", "class", "c__Bacilli", 0.02),
    ("4", "3", "order", "o__Lactobacillales", 0.05),
    ("5", "4", "family", "f__Streptococcaceae", 0.02),
    ("6", "5", "genus", "g__Streptococcus", 2.0),
    ("7", "6", "species", "s__Streptococcus_salivarius", 0.1),
    ("8", "5", "genus", "g__Lactococcus", 1.0),
    ("9", "4", "family", "f__Lactobacillaceae", 0.1),
    ("10", "9", "genus", "g__Lactobacillus", 0.9),
    ("11", "2", "class", "c__Clostridia", 1.0),
    ("12", "11", "order", "o__Clostridiales", 4.0),
    ("13", "12", "family", "f__Lachnospiraceae", 3.0),
    ("14", "13", "genus", "g__Blautia", 3.0),
    ("15", "13", "genus", "g__Roseburia", 2.0),
    ("16", "13", "genus", "g__Coprococcus", 1.5),
    ("17", "12", "family", "f__Ruminococcaceae", 3.0),
    ("18", "17", "genus", "g__Ruminococcus", 1.0),
    ("19", "18", "species", "s__Ruminococcus_bromii", 1.5),
    ("20", "17", "genus", "g__Faecalibacterium", 2.0),
    ("21", "20", "species", "s__Faecalibacterium_prausnitzii", 6.0),
    ("22", "12", "family", "f__Eubacteriaceae", 0.2),
    ("23", "22", "genus", "g__Eubacterium", 0.8),
    ("24", "23", "species", "s__Eubacterium_rectale", 2.0),
    ("25", "1", "phylum", "p__Bacteroidetes", 0.5),
    ("26", "25", "class", "c__Bacteroidia", 0.2),
    ("27", "26", "order", "o__Bacteroidales", 1.0),
    ("28", "27", "family", "f__Bacteroidaceae", 0.5),
    ("29", "28", "genus", "g__Bacteroides", 12.0),
    ("30", "29", "species", "s__Bacteroides_uniformis", 5.0),
    ("31", "29", "species", "s__Bacteroides_ovatus", 3.0),
    ("32", "27", "family", "f__Porphyromonadaceae", 0.3),
    ("33", "32", "genus", "g__Parabacteroides", 1.0),
    ("34", "33", "species", "s__Parabacteroides_distasonis", 1.5),
    ("35", "32", "genus", "g__Porphyromonas", 0.3),
    ("36", "27", "family", "f__Prevotellaceae", 0.3),
    ("37", "36", "genus", "g__Prevotella", 4.0),
    ("38", "1", "phylum", "p__Proteobacteria", 0.3),
    ("39", "38", "class", "c__Gammaproteobacteria", 0.3),
    ("40", "39", "order", "o__Pseudomonadales", 0.05),
    ("41", "40", "family", "f__Moraxellaceae", 0.05),
    ("42", "41", "genus", "g__Moraxella", 0.3),
    ("43", "39", "order", "o__Enterobacteriales", 0.1),
    ("44", "43", "family", "f__Enterobacteriaceae", 0.3),
    ("45", "44", "genus", "g__Escherichia", 1.5),
    ("46", "1", "phylum", "p__Actinobacteria", 0.2),
    ("47", "46", "class", "c__Actinobacteria", 0.1),
    ("48", "47", "order", "o__Bifidobacteriales", 0.1),
    ("49", "48", "family", "f__Bifidobacteriaceae", 0.1),
    ("50", "49", "genus", "g__Bifidobacterium", 2.5),
];

/// Shape of the synthetic reference. Each sample's node composition is
/// drawn as a Dirichlet tree: at every internal node the shares of
/// (children, remainder) are `Dir(c · base split)`, with `c` the default
/// `concentration` unless the node's name is in `node_concentration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub concentration: f64,
    #[serde(default)]
    pub node_concentration: std::collections::BTreeMap<String, f64>,
    /// Median read total; totals are log-normal with log-scale sd 0.5.
    pub median_total: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 200,
            concentration: 50.0,
            node_concentration: [("p__Firmicutes".to_string(), 3.0)].into_iter().collect(),
            median_total: 5000.0,
            seed: 20170101,
        }
    }
}

pub fn synthetic_tree() -> TaxTree {
    let specs = SYNTHETIC_TAXA
        .iter()
        .map(|&(id, parent, rank, name, _)| NodeSpec {
            id: id.into(),
            parent: (!parent.is_empty()).then(|| parent.into()),
            rank: rank.into(),
            name: name.into(),
        })
        .collect();
    TaxTree::new(specs).expect("built-in taxonomy is a valid tree")
}

impl TreeReference {
    pub fn new(tree: TaxTree, compositions: Vec<Vec<f64>>, totals: Vec<u64>) -> Result<Self> {
        if compositions.is_empty() || compositions.len() != totals.len() {
            return Err(invalid("reference needs matching, nonempty compositions and totals"));
        }
        for (i, c) in compositions.iter().enumerate() {
            if c.len() != tree.len() {
                return Err(invalid(format!("reference sample {i} has {} nodes, tree has {}", c.len(), tree.len())));
            }
            let s: f64 = c.iter().sum();
            if c.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("reference sample {i} is not a composition")));
            }
        }
        if totals.contains(&0) {
            return Err(invalid("reference totals must be positive"));
        }
        Ok(TreeReference {
            tree,
            compositions,
            totals,
            synthetic: false,
        })
    }

    /// Reference from directly-assigned counts, one row per sample.
    pub fn from_assigned(tree: TaxTree, rows: &[Vec<u64>]) -> Result<Self> {
        let mut comps = Vec::new();
        let mut totals = Vec::new();
        for r in rows {
            let t: u64 = r.iter().sum();
            if t == 0 {
                continue;
            }
            comps.push(r.iter().map(|&v| v as f64 / t as f64).collect());
            totals.push(t);
        }
        Self::new(tree, comps, totals)
    }

    /// Every (sample, condition) of a counts file is one reference sample.
    pub fn from_records(tree: TaxTree, recs: &[CountRecord]) -> Result<Self> {
        let mut keys: Vec<(String, u8)> = Vec::new();
        let mut rows: Vec<Vec<u64>> = Vec::new();
        let mut pos = std::collections::HashMap::new();
        for r in recs {
            let k = tree
                .index_of(&r.node_id)
                .ok_or_else(|| invalid(format!("counts refer to unknown node_id {:?}", r.node_id)))?;
            let key = (r.sample_id.clone(), r.condition);
            let i = *pos.entry(key.clone()).or_insert_with(|| {
                keys.push(key);
                rows.push(vec![0; tree.len()]);
                rows.len() - 1
            });
            rows[i][k] = r.count;
        }
        Self::from_assigned(tree, &rows)
    }

    /// Dirichlet-multinomial stand-in for a real cohort over a built-in
    /// 50-node gut-like taxonomy.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        if spec.samples == 0 || !(spec.concentration > 0.0) || !(spec.median_total >= 1.0) {
            return Err(invalid("synthetic reference needs samples > 0, concentration > 0, median_total >= 1"));
        }
        let tree = synthetic_tree();
        let mut conc = vec![spec.concentration; tree.len()];
        for (name, &c) in &spec.node_concentration {
            let k = tree
                .find_by_name(name)
                .ok_or_else(|| invalid(format!("node_concentration names unknown node {name:?}")))?;
            if !(c > 0.0) {
                return Err(invalid(format!("concentration for {name:?} must be positive")));
            }
            conc[k] = c;
        }
        // Mean share of each subtree, then each node's split into (children, remainder).
        let own: Vec<f64> = SYNTHETIC_TAXA.iter().map(|t| t.4).collect();
        let mut below = own.clone();
        for &k in tree.preorder().iter().rev() {
            if let Some(p) = tree.node(k).parent {
                below[p] += below[k];
            }
        }
        let split: Vec<Vec<f64>> = (0..tree.len())
            .map(|k| {
                let mut v: Vec<f64> = tree.children(k).iter().map(|&c| below[c]).collect();
                v.push(own[k]);
                v.into_iter().map(|x| conc[k] * x / below[k]).collect()
            })
            .collect();
        let mut rng = RngStream::new(spec.seed);
        let mut rows = Vec::with_capacity(spec.samples);
        for _ in 0..spec.samples {
            let mut mass = vec![0.0; tree.len()];
            let mut p = vec![0.0; tree.len()];
            mass[tree.root()] = 1.0;
            for &k in tree.preorder() {
                let kids = tree.children(k);
                let shares = if kids.is_empty() { vec![1.0] } else { dirichlet(&split[k], &mut rng)? };
                for (j, &c) in kids.iter().enumerate() {
                    mass[c] = mass[k] * shares[j];
                }
                p[k] = mass[k] * shares[kids.len()];
            }
            let total = (spec.median_total * (0.5 * standard_normal(&mut rng)).exp()).round().max(1.0) as u64;
            rows.push(multinomial(total, &p, &mut rng)?);
        }
        let mut r = Self::from_assigned(tree, &rows)?;
        r.synthetic = true;
        Ok(r)
    }
}

/// Where E₁ and E₂ put their binomial perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    Null,
    Sparse {
        #[serde(default = "default_sparse_target")]
        target: String,
    },
    Dense {
        #[serde(default = "default_dense_targets1")]
        targets1: Vec<String>,
        #[serde(default = "default_dense_targets2")]
        targets2: Vec<String>,
    },
}

fn default_sparse_target() -> String {
    "g__Streptococcus".into()
}
fn default_dense_targets1() -> Vec<String> {
    ["g__Streptococcus", "g__Eubacterium", "g__Parabacteroides"].map(String::from).to_vec()
}
fn default_dense_targets2() -> Vec<String> {
    ["g__Porphyromonas", "g__Moraxella", "g__Ruminococcus"].map(String::from).to_vec()
}

impl Pattern {
    pub fn sparse() -> Self {
        Pattern::Sparse {
            target: default_sparse_target(),
        }
    }

    pub fn dense() -> Self {
        Pattern::Dense {
            targets1: default_dense_targets1(),
            targets2: default_dense_targets2(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pattern::Null => "null",
            Pattern::Sparse { .. } => "sparse",
            Pattern::Dense { .. } => "dense",
        }
    }
}

/// Node indices perturbed in condition 1 and condition 2.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResolvedPattern {
    pub targets1: Vec<usize>,
    pub targets2: Vec<usize>,
}

impl ResolvedPattern {
    pub fn resolve(tree: &TaxTree, pattern: &Pattern) -> Result<Self> {
        let find = |name: &String| {
            tree.find_by_name(name)
                .or_else(|| tree.index_of(name))
                .ok_or_else(|| invalid(format!("target node {name:?} is not in the reference tree")))
        };
        let all = |v: &[String]| v.iter().map(find).collect::<Result<Vec<_>>>();
        Ok(match pattern {
            Pattern::Null => ResolvedPattern::default(),
            Pattern::Sparse { target } => ResolvedPattern {
                targets1: vec![],
                targets2: vec![find(target)?],
            },
            Pattern::Dense { targets1, targets2 } => ResolvedPattern {
                targets1: all(targets1)?,
                targets2: all(targets2)?,
            },
        })
    }

    /// Internal nodes whose subcomposition differs between conditions: the
    /// internal members of every target's lineage.
    pub fn differential_nodes(&self, tree: &TaxTree) -> Vec<bool> {
        let mut out = vec![false; tree.len()];
        for &t in self.targets1.iter().chain(&self.targets2) {
            for k in tree.lineage(t) {
                if tree.is_internal(k) {
                    out[k] = true;
                }
            }
        }
        out
    }
}

/// Directly-assigned counts `(W₁, W₂)` for one simulated subject:
/// `Wₜ ~ Mult(N°ₜ, (P°ₜ + P°₃)/2) + Eₜ` with binomial `Eₜ` at the targets.
/// E₁ uses N°₁ unless `e1_from_second_total` is set, in which case it uses N°₂.
pub fn gen_tree_pair(
    reference: &TreeReference,
    pattern: &ResolvedPattern,
    p_eps: f64,
    e1_from_second_total: bool,
    rng: &mut RngStream,
) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(0.0..=1.0).contains(&p_eps) {
        return Err(invalid(format!("p_eps = {p_eps} outside [0, 1]")));
    }
    let m = reference.compositions.len();
    let pick = |rng: &mut RngStream| (rng.uniform() * m as f64) as usize % m;
    let (a, b, c) = (pick(rng), pick(rng), pick(rng));
    let n1 = reference.totals[pick(rng)];
    let n2 = reference.totals[pick(rng)];
    let mix = |x: usize| -> Vec<f64> {
        reference.compositions[x]
            .iter()
            .zip(&reference.compositions[c])
            .map(|(u, v)| 0.5 * (u + v))
            .collect()
    };
    let mut w1 = multinomial(n1, &mix(a), rng)?;
    let mut w2 = multinomial(n2, &mix(b), rng)?;
    let base1 = if e1_from_second_total { n2 } else { n1 };
    if p_eps > 0.0 {
        for &k in &pattern.targets1 {
            w1[k] += binomial(base1, p_eps, rng)?;
        }
        for &k in &pattern.targets2 {
            w2[k] += binomial(n2, p_eps, rng)?;
        }
    }
    Ok((w1, w2))
}

/// `n` simulated subjects as tree counts.
pub fn gen_tree_counts(
    reference: &TreeReference,
    pattern: &ResolvedPattern,
    n: usize,
    p_eps: f64,
    e1_from_second_total: bool,
    rng: &mut RngStream,
) -> Result<TreeCounts> {
    let mut a1 = Vec::with_capacity(n);
    let mut a2 = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y) = gen_tree_pair(reference, pattern, p_eps, e1_from_second_total, rng)?;
        a1.push(x);
        a2.push(y);
    }
    let ids = (1..=n).map(|i| i.to_string()).collect();
    TreeCounts::new(&reference.tree, ids, a1, a2)
}

fn default_tree_reps() -> usize {
    100
}
fn default_fdr() -> f64 {
    0.05
}
fn default_nperm() -> usize {
    199
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSimConfig {
    pub pattern: Pattern,
    pub p_eps_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_tree_reps")]
    pub replicates: usize,
    #[serde(default = "default_fdr")]
    pub fdr: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_nperm")]
    pub n_perm: usize,
    /// Also run the PERMANOVA comparator (the slowest method).
    #[serde(default = "yes")]
    pub permanova: bool,
    /// Dense pattern: draw E₁ from Binomial(N°₂, p_ε) instead of Binomial(N°₁, p_ε).
    #[serde(default)]
    pub e1_from_second_total: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl TreeSimConfig {
    pub fn new(pattern: Pattern, n_grid: Vec<usize>, p_eps_grid: Vec<f64>) -> Self {
        TreeSimConfig {
            pattern,
            p_eps_grid,
            n_grid,
            replicates: default_tree_reps(),
            fdr: default_fdr(),
            alpha: default_alpha(),
            n_perm: default_nperm(),
            permanova: true,
            e1_from_second_total: false,
            seed: default_seed(),
        }
    }

    pub fn validate(&self, reference: &TreeReference) -> Result<ResolvedPattern> {
        if self.n_grid.is_empty() || self.p_eps_grid.is_empty() || self.replicates == 0 {
            return Err(invalid("grids must be nonempty and replicates at least 1"));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(invalid("n must be at least 2"));
        }
        if self.p_eps_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("p_eps must lie in [0, 1]"));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("fdr and alpha must lie in (0, 1)"));
        }
        if self.permanova && self.n_perm < 99 {
            return Err(invalid("n_perm must be at least 99"));
        }
        ResolvedPattern::resolve(&reference.tree, &self.pattern)
    }
}

/// Per-replicate outcome of the tree study.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeReplicate {
    pub pairmn_fisher: Option<f64>,
    pub pairmn_second: Option<f64>,
    pub dm_second: Option<f64>,
    pub permanova: Option<f64>,
    /// Internal nodes rejected by the paired subtree tests (preorder).
    pub rejected: Vec<usize>,
    pub false_discoveries: usize,
}

fn report_or_empty(r: Result<SubtreeReport>) -> Result<Option<SubtreeReport>> {
    match r {
        Ok(rep) => Ok(Some(rep)),
        Err(Error::EmptyReport) => Ok(None),
        Err(e) => Err(e),
    }
}

fn combined(rep: &Option<SubtreeReport>, m: GlobalMethod) -> Result<Option<f64>> {
    match rep {
        Some(r) => ok_or_degenerate(global_test(r, m)),
        None => Ok(None),
    }
}

pub fn tree_replicate(
    cfg: &TreeSimConfig,
    reference: &TreeReference,
    pattern: &ResolvedPattern,
    truth: &[bool],
    n: usize,
    p_eps: f64,
    rng: &mut RngStream,
) -> Result<TreeReplicate> {
    let tree = &reference.tree;
    let tc = gen_tree_counts(reference, pattern, n, p_eps, cfg.e1_from_second_total, rng)?;
    let paired = report_or_empty(subtree_tests(tree, &tc, cfg.fdr, SubtreeMethod::Paired))?;
    let dm = report_or_empty(subtree_tests(tree, &tc, cfg.fdr, SubtreeMethod::UnpairedDm))?;
    let permanova = if cfg.permanova {
        let samples: Vec<&[u64]> = tc.cumulative[0].iter().chain(&tc.cumulative[1]).map(Vec::as_slice).collect();
        let dist = kr_distance_matrix(tree, &samples)?;
        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, n + i)).collect();
        let perm_rng = rng.substream(u64::MAX);
        Some(permanova_paired(&dist, &pairs, cfg.n_perm, &perm_rng)?.p_value)
    } else {
        None
    };
    let rejected = paired.as_ref().map(|r| r.rejected_nodes()).unwrap_or_default();
    let false_discoveries = rejected.iter().filter(|&&k| !truth[k]).count();
    Ok(TreeReplicate {
        pairmn_fisher: combined(&paired, GlobalMethod::Fisher)?,
        pairmn_second: combined(&paired, GlobalMethod::SecondSmallest)?,
        dm_second: combined(&dm, GlobalMethod::SecondSmallest)?,
        permanova,
        rejected,
        false_discoveries,
    })
}

/// Global rejection rates per method, empirical FDR of the paired subtree
/// tests (mean of V / max(R, 1), with its sample standard error) and
/// per-node discovery rates.
pub fn run_tree_sim(cfg: &TreeSimConfig, reference: &TreeReference) -> Result<SimTable> {
    let pattern = cfg.validate(reference)?;
    let truth = pattern.differential_nodes(&reference.tree);
    let internal = reference.tree.internal_nodes();
    let root = RngStream::new(cfg.seed);
    let setting = cfg.pattern.name();
    let study = if reference.synthetic { "tree_synthetic" } else { "tree" };
    let reps = cfg.replicates;
    let mut rows = Vec::new();
    let mut point = 0u64;
    for &n in &cfg.n_grid {
        for &p_eps in &cfg.p_eps_grid {
            let stream = root.substream(point);
            point += 1;
            let out: Vec<TreeReplicate> = (0..reps as u64)
                .into_par_iter()
                .map(|r| tree_replicate(cfg, reference, &pattern, &truth, n, p_eps, &mut stream.substream(r)))
                .collect::<Result<_>>()?;
            let mut methods = vec![
                ("pairmn_fisher", out.iter().filter(|o| rejects(o.pairmn_fisher, cfg.alpha)).count()),
                ("pairmn_2nd", out.iter().filter(|o| rejects(o.pairmn_second, cfg.alpha)).count()),
                ("dm_2nd", out.iter().filter(|o| rejects(o.dm_second, cfg.alpha)).count()),
            ];
            if cfg.permanova {
                methods.push(("permanova", out.iter().filter(|o| rejects(o.permanova, cfg.alpha)).count()));
            }
            for (m, hits) in methods {
                rows.push(rate_row(study, setting, n, None, Some(p_eps), m, hits, reps));
            }
            let fdp: Vec<f64> = out
                .iter()
                .map(|o| o.false_discoveries as f64 / o.rejected.len().max(1) as f64)
                .collect();
            let mean = fdp.iter().sum::<f64>() / reps as f64;
            let var = if reps > 1 {
                fdp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
            } else {
                0.0
            };
            rows.push(SimRow {
                rate: mean,
                se: (var / reps as f64).sqrt(),
                ..rate_row(study, setting, n, None, Some(p_eps), "fdr", 0, reps)
            });
            for &k in &internal {
                let hits = out.iter().filter(|o| o.rejected.contains(&k)).count();
                let mut row = rate_row(study, setting, n, None, Some(p_eps), "discovery", hits, reps);
                row.node = Some(reference.tree.node(k).name.clone());
                rows.push(row);
            }
        }
    }
    Ok(SimTable { rows })
}

/// A simulation config file: `study = "flat"` or `study = "tree"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum SimConfig {
    Flat(FlatSimConfig),
    Tree {
        #[serde(flatten)]
        config: TreeSimConfig,
        /// Resampling source; the synthetic reference when absent.
        #[serde(default)]
        reference: Option<ReferenceSource>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSource {
    Synthetic(SyntheticSpec),
    /// Node table and long-format counts files; paths are resolved by the caller.
    Files { tree: String, counts: String },
}

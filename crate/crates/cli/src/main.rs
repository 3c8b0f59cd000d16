//! `pairmn`: paired-multinomial tests on flat count tables and taxonomic
//! trees, K-R distances, paired PERMANOVA and simulation studies.
//!
//! Exit codes: 0 success, 2 malformed or inconsistent input, 3 data that is
//! statistically unusable (too few subjects, zero rank, nothing testable).

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pairmn_core::hypothesis::{paired_f_test, unpaired_dm_test};
use pairmn_core::io::{self, LabelledDistances, ReportFile};
use pairmn_core::numkit::{RngStream, SymMatrix};
use pairmn_core::simbench::{run_flat_sim, run_tree_sim, ReferenceSource, SimConfig, SyntheticSpec, TreeReference};
use pairmn_core::tree::{kr_distance_matrix, permanova_paired, subtree_tests, GlobalMethod, SubtreeMethod, TaxTree, TreeCounts};

pub const THREADS_ENV: &str = "PAIRMN_THREADS";

#[derive(Parser)]
#[command(name = "pairmn", version, about = "Paired-multinomial tests for paired microbiome count data")]
struct Cli {
    /// Seed for randomised commands (simulate, permanova).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to $PAIRMN_THREADS, then the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Paired,
    Unpaired,
}

#[derive(Clone, Copy, ValueEnum)]
enum Global {
    Fisher,
    Second,
}

#[derive(Subcommand)]
enum Command {
    /// Paired test on two wide count tables (rows: subjects, columns: taxa).
    Test {
        #[arg(long)]
        counts1: PathBuf,
        #[arg(long)]
        counts2: PathBuf,
        #[arg(long, value_enum, default_value = "paired")]
        method: Method,
    },
    /// Per-subtree tests with BH control and a global combined test.
    Tree {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        fdr: f64,
        #[arg(long, value_enum, default_value = "second")]
        global: Global,
        #[arg(long, value_enum, default_value = "paired")]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study described by a TOML file; writes CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise K-R distances between all samples; writes CSV.
    Distance {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PERMANOVA with each subject's two samples as a stratum.
    Permanova {
        #[arg(long)]
        distances: PathBuf,
        /// Pairs file (`condition1\tcondition2`); inferred from `id:1`/`id:2` labels when absent.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value_t = 999)]
        nperm: usize,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn load_tree(path: &Path) -> Result<TaxTree> {
    let specs = io::read_node_table(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    TaxTree::new(specs).with_context(|| format!("reading {}", path.display()))
}

fn load_tree_counts(tree: &TaxTree, path: &Path) -> Result<TreeCounts> {
    let recs = io::read_counts(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let (tc, warnings) = io::tree_counts_from_records(tree, &recs).with_context(|| format!("reading {}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(tc)
}

fn cmd_test(counts1: &Path, counts2: &Path, method: Method) -> Result<String> {
    let c1 = io::read_wide_counts(open(counts1)?).with_context(|| format!("reading {}", counts1.display()))?;
    let c2 = io::read_wide_counts(open(counts2)?).with_context(|| format!("reading {}", counts2.display()))?;
    let pc = io::pair_wide(&c1, &c2)?;
    let result = match method {
        Method::Paired => paired_f_test(&pc)?,
        Method::Unpaired => unpaired_dm_test(&pc.counts1, &pc.counts2)?,
    };
    Ok(json(&result))
}

fn cmd_tree(tree: &Path, counts: &Path, fdr: f64, global: Global, method: Method) -> Result<String> {
    let t = load_tree(tree)?;
    let tc = load_tree_counts(&t, counts)?;
    let method = match method {
        Method::Paired => SubtreeMethod::Paired,
        Method::Unpaired => SubtreeMethod::UnpairedDm,
    };
    let report = subtree_tests(&t, &tc, fdr, method)?;
    let global = match global {
        Global::Fisher => GlobalMethod::Fisher,
        Global::Second => GlobalMethod::SecondSmallest,
    };
    Ok(ReportFile::from_report(&t, &report, global).to_json())
}

fn cmd_simulate(config: &Path, seed: Option<u64>) -> Result<String> {
    let text = std::fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    let cfg: SimConfig = toml::from_str(&text).map_err(|e| {
        pairmn_core::Error::InvalidInput(format!("{}: {e}", config.display()))
    })?;
    let table = match cfg {
        SimConfig::Flat(mut flat) => {
            if let Some(s) = seed {
                flat.seed = s;
            }
            run_flat_sim(&flat)?
        }
        SimConfig::Tree { config: mut tcfg, reference } => {
            if let Some(s) = seed {
                tcfg.seed = s;
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let reference = match reference {
                None => TreeReference::synthetic(&SyntheticSpec::default())?,
                Some(ReferenceSource::Synthetic(spec)) => TreeReference::synthetic(&spec)?,
                Some(ReferenceSource::Files { tree, counts }) => {
                    let t = load_tree(&base.join(tree))?;
                    let path = base.join(counts);
                    let recs = io::read_counts(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
                    TreeReference::from_records(t, &recs)?
                }
            };
            if reference.synthetic {
                eprintln!("note: resampling from the built-in synthetic reference (not real data)");
            }
            run_tree_sim(&tcfg, &reference)?
        }
    };
    Ok(table.to_csv())
}

fn cmd_distance(tree: &Path, counts: &Path) -> Result<String> {
    let t = load_tree(tree)?;
    let tc = load_tree_counts(&t, counts)?;
    let mut labels = Vec::with_capacity(2 * tc.n());
    let mut samples: Vec<&[u64]> = Vec::with_capacity(2 * tc.n());
    for (i, id) in tc.ids.iter().enumerate() {
        for c in 0..2 {
            labels.push(io::sample_label(id, c as u8 + 1));
            samples.push(&tc.cumulative[c][i]);
        }
    }
    let matrix = kr_distance_matrix(&t, &samples)?;
    Ok(io::write_distances(&LabelledDistances { labels, matrix }))
}

#[derive(Serialize)]
struct PermanovaOutput {
    statistic: f64,
    p_value: f64,
    n_perm: usize,
    n_pairs: usize,
    seed: u64,
}

fn cmd_permanova(distances: &Path, pairs: Option<&Path>, nperm: usize, seed: u64) -> Result<String> {
    let d = io::read_distances(open(distances)?).with_context(|| format!("reading {}", distances.display()))?;
    let pairs = match pairs {
        Some(p) => io::read_pairs(open(p)?, &d.labels).with_context(|| format!("reading {}", p.display()))?,
        None => io::pairs_from_labels(&d.labels)?,
    };
    let m: &SymMatrix = &d.matrix;
    let r = permanova_paired(m, &pairs, nperm, &RngStream::new(seed))?;
    Ok(json(&PermanovaOutput {
        statistic: r.statistic,
        p_value: r.p_value,
        n_perm: r.n_perm,
        n_pairs: pairs.len(),
        seed,
    }))
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| pairmn_core::Error::InvalidInput(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Test { counts1, counts2, method } => emit(None, &cmd_test(&counts1, &counts2, method)?),
        Command::Tree {
            tree,
            counts,
            fdr,
            global,
            method,
            out,
        } => emit(out.as_deref(), &cmd_tree(&tree, &counts, fdr, global, method)?),
        Command::Simulate { config, out } => emit(out.as_deref(), &cmd_simulate(&config, cli.seed)?),
        Command::Distance { tree, counts, out } => emit(out.as_deref(), &cmd_distance(&tree, &counts)?),
        Command::Permanova { distances, pairs, nperm } => {
            emit(None, &cmd_permanova(&distances, pairs.as_deref(), nperm, cli.seed.unwrap_or(1))?)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<pairmn_core::Error>()) {
        Some(core) if core.is_degeneracy() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

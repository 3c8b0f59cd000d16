//! Text formats: node tables, long-format counts, wide per-subject count
//! tables, JSON reports, labelled distance matrices and sample pairings.
//!
//! Tables are tab-separated with a header row. Parse errors carry the
//! 1-based line number of the offending record.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::{CountMatrix, PairedCounts};
use crate::hypothesis::TestResult;
use crate::numkit::SymMatrix;
use crate::tree::{global_test, GlobalMethod, NodeOutcome, NodeSpec, SubtreeReport, TaxTree, TreeCounts};

pub const NODE_HEADER: [&str; 4] = ["node_id", "parent_id", "rank", "name"];
pub const COUNTS_HEADER: [&str; 4] = ["sample_id", "condition", "node_id", "count"];

fn tsv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().delimiter(b'\t').has_headers(false).flexible(true).from_reader(r)
}

fn tsv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are valid UTF-8")
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => invalid(format!("line {}: {}", p.line(), e)),
        None => invalid(e.to_string()),
    }
}

/// Reads all records; returns `(line, record)` pairs after checking the
/// header and field counts.
fn records<R: Read>(r: R, header: Option<&[&str]>) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = tsv_reader(r);
    let mut iter = rdr.records();
    let head = match iter.next() {
        Some(rec) => rec.map_err(csv_err)?,
        None => return Err(invalid("line 1: empty file, expected a header row")),
    };
    let head: Vec<String> = head.iter().map(|s| s.trim().to_string()).collect();
    if let Some(h) = header {
        if head != h {
            return Err(invalid(format!("line 1: expected header {:?}, found {:?}", h.join("\t"), head.join("\t"))));
        }
    }
    let mut out = Vec::new();
    for rec in iter {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != head.len() {
            return Err(invalid(format!("line {line}: expected {} fields, found {}", head.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok((head, out))
}

fn parse_u64(s: &str, line: u64, what: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| invalid(format!("line {line}: {what} {s:?} is not a nonnegative integer")))
}

pub fn read_node_table<R: Read>(r: R) -> Result<Vec<NodeSpec>> {
    let (_, recs) = records(r, Some(&NODE_HEADER))?;
    Ok(recs
        .into_iter()
        .map(|(_, rec)| {
            let parent = rec[1].trim();
            NodeSpec {
                id: rec[0].trim().to_string(),
                parent: (!parent.is_empty()).then(|| parent.to_string()),
                rank: rec[2].to_string(),
                name: rec[3].to_string(),
            }
        })
        .collect())
}

pub fn write_node_table(specs: &[NodeSpec]) -> String {
    let mut w = tsv_writer();
    w.write_record(NODE_HEADER).expect("in-memory write");
    for s in specs {
        w.write_record([s.id.as_str(), s.parent.as_deref().unwrap_or(""), &s.rank, &s.name])
            .expect("in-memory write");
    }
    finish(w)
}

/// One `(sample, condition, node, count)` row of a long-format counts file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRecord {
    pub sample_id: String,
    pub condition: u8,
    pub node_id: String,
    pub count: u64,
}

pub fn read_counts<R: Read>(r: R) -> Result<Vec<CountRecord>> {
    let (_, recs) = records(r, Some(&COUNTS_HEADER))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(recs.len());
    for (line, rec) in recs {
        let condition = match rec[1].trim() {
            "1" => 1,
            "2" => 2,
            other => return Err(invalid(format!("line {line}: condition {other:?} must be 1 or 2"))),
        };
        let cr = CountRecord {
            sample_id: rec[0].trim().to_string(),
            condition,
            node_id: rec[2].trim().to_string(),
            count: parse_u64(&rec[3], line, "count")?,
        };
        if cr.sample_id.is_empty() || cr.node_id.is_empty() {
            return Err(invalid(format!("line {line}: empty sample_id or node_id")));
        }
        if !seen.insert((cr.sample_id.clone(), condition, cr.node_id.clone())) {
            return Err(invalid(format!(
                "line {line}: duplicate entry for sample {:?}, condition {condition}, node {:?}",
                cr.sample_id, cr.node_id
            )));
        }
        out.push(cr);
    }
    Ok(out)
}

pub fn write_counts(recs: &[CountRecord]) -> String {
    let mut w = tsv_writer();
    w.write_record(COUNTS_HEADER).expect("in-memory write");
    for r in recs {
        w.write_record([r.sample_id.as_str(), &r.condition.to_string(), &r.node_id, &r.count.to_string()])
            .expect("in-memory write");
    }
    finish(w)
}

/// Builds paired tree counts. Missing entries are zero; subjects observed in
/// only one condition are dropped and reported in the returned warnings.
/// Subjects keep their order of first appearance.
pub fn tree_counts_from_records(tree: &TaxTree, recs: &[CountRecord]) -> Result<(TreeCounts, Vec<String>)> {
    let mut order: Vec<&str> = Vec::new();
    let mut table: HashMap<&str, [Option<Vec<u64>>; 2]> = HashMap::new();
    for r in recs {
        let k = tree
            .index_of(&r.node_id)
            .ok_or_else(|| invalid(format!("counts refer to unknown node_id {:?}", r.node_id)))?;
        let slot = table.entry(&r.sample_id).or_insert_with(|| {
            order.push(&r.sample_id);
            [None, None]
        });
        let row = slot[(r.condition - 1) as usize].get_or_insert_with(|| vec![0; tree.len()]);
        row[k] = r.count;
    }
    let mut ids = Vec::new();
    let (mut a1, mut a2) = (Vec::new(), Vec::new());
    let mut warnings = Vec::new();
    for s in order {
        match table.remove(s).expect("recorded") {
            [Some(x), Some(y)] => {
                ids.push(s.to_string());
                a1.push(x);
                a2.push(y);
            }
            [_, None] => warnings.push(format!("subject {s:?} has no condition 2 sample; dropped")),
            [None, _] => warnings.push(format!("subject {s:?} has no condition 1 sample; dropped")),
        }
    }
    Ok((TreeCounts::new(tree, ids, a1, a2)?, warnings))
}

/// Inverse of [`tree_counts_from_records`]: nonzero entries in subject,
/// condition, node order. A sample with no reads gets an explicit zero row
/// at the root so the subject survives a round trip.
pub fn tree_counts_to_records(tree: &TaxTree, tc: &TreeCounts) -> Vec<CountRecord> {
    let mut out = Vec::new();
    for (i, id) in tc.ids.iter().enumerate() {
        for t in 0..2 {
            let row = &tc.assigned[t][i];
            let before = out.len();
            for (k, &c) in row.iter().enumerate() {
                if c > 0 {
                    out.push(CountRecord {
                        sample_id: id.clone(),
                        condition: t as u8 + 1,
                        node_id: tree.node(k).id.clone(),
                        count: c,
                    });
                }
            }
            if out.len() == before {
                out.push(CountRecord {
                    sample_id: id.clone(),
                    condition: t as u8 + 1,
                    node_id: tree.node(tree.root()).id.clone(),
                    count: 0,
                });
            }
        }
    }
    out
}

/// Wide table: `sample_id` then one column per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WideCounts {
    pub categories: Vec<String>,
    pub ids: Vec<String>,
    pub counts: CountMatrix,
}

pub fn read_wide_counts<R: Read>(r: R) -> Result<WideCounts> {
    let (head, recs) = records(r, None)?;
    if head.first().map(String::as_str) != Some("sample_id") || head.len() < 2 {
        return Err(invalid("line 1: header must be `sample_id` followed by category names"));
    }
    let categories = head[1..].to_vec();
    let mut ids = Vec::with_capacity(recs.len());
    let mut counts = CountMatrix::empty(categories.len());
    let mut seen = HashSet::new();
    for (line, rec) in recs {
        let id = rec[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(invalid(format!("line {line}: duplicate sample_id {id:?}")));
        }
        let row = (1..rec.len()).map(|j| parse_u64(&rec[j], line, "count")).collect::<Result<Vec<_>>>()?;
        counts.push_row(&row)?;
        ids.push(id);
    }
    Ok(WideCounts { categories, ids, counts })
}

pub fn write_wide_counts(w: &WideCounts) -> String {
    let mut out = tsv_writer();
    let mut head = vec!["sample_id".to_string()];
    head.extend(w.categories.iter().cloned());
    out.write_record(&head).expect("in-memory write");
    for (i, id) in w.ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(w.counts.row(i).iter().map(u64::to_string));
        out.write_record(&rec).expect("in-memory write");
    }
    finish(out)
}

/// Pairs two wide tables by subject id, in the first table's order.
pub fn pair_wide(c1: &WideCounts, c2: &WideCounts) -> Result<PairedCounts> {
    if c1.categories != c2.categories {
        return Err(invalid("the two count tables have different category columns"));
    }
    let pos2: HashMap<&str, usize> = c2.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let missing: Vec<&str> = c1.ids.iter().filter(|s| !pos2.contains_key(s.as_str())).map(String::as_str).collect();
    if !missing.is_empty() || c1.ids.len() != c2.ids.len() {
        let extra: Vec<&str> = c2.ids.iter().filter(|s| !c1.ids.contains(s)).map(String::as_str).collect();
        return Err(invalid(format!(
            "subject sets differ (only in first: {missing:?}; only in second: {extra:?})"
        )));
    }
    let mut m2 = CountMatrix::empty(c2.categories.len());
    for id in &c1.ids {
        m2.push_row(c2.counts.row(pos2[id.as_str()]))?;
    }
    PairedCounts::new(c1.ids.clone(), c1.counts.clone(), m2)
}

/// One internal node of a tree report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub node_id: String,
    pub name: String,
    pub rank: String,
    #[serde(rename = "F")]
    pub f: Option<f64>,
    pub df1: Option<usize>,
    pub df2: Option<usize>,
    pub p: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub rejected: bool,
    pub skip_reason: Option<String>,
    pub n_effective: Option<usize>,
    pub d_effective: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalBlock {
    pub fisher_p: Option<f64>,
    pub second_smallest_p: Option<f64>,
    #[serde(rename = "K_tested")]
    pub k_tested: usize,
    pub method: GlobalMethod,
    /// The combined p-value of `method`.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub fdr: f64,
    pub subtrees: Vec<ReportRecord>,
    pub global: GlobalBlock,
}

impl ReportFile {
    pub fn from_report(tree: &TaxTree, report: &SubtreeReport, method: GlobalMethod) -> Self {
        let subtrees = report
            .records
            .iter()
            .map(|r| {
                let node = tree.node(r.node);
                let tested: Option<&TestResult> = match &r.outcome {
                    NodeOutcome::Tested(t) => Some(t),
                    _ => None,
                };
                ReportRecord {
                    node_id: node.id.clone(),
                    name: node.name.clone(),
                    rank: node.rank.clone(),
                    f: tested.map(|t| t.statistic),
                    df1: tested.map(|t| t.df1),
                    df2: tested.and_then(|t| t.df2),
                    p: tested.map(|t| t.p_value),
                    p_adjusted: r.p_adjusted,
                    rejected: r.rejected,
                    skip_reason: r.outcome.skip_reason(),
                    n_effective: tested.map(|t| t.effective_n),
                    d_effective: tested.map(|t| t.effective_d),
                }
            })
            .collect();
        let fisher_p = global_test(report, GlobalMethod::Fisher).ok();
        let second_smallest_p = global_test(report, GlobalMethod::SecondSmallest).ok();
        let p = match method {
            GlobalMethod::Fisher => fisher_p,
            GlobalMethod::SecondSmallest => second_smallest_p,
        };
        ReportFile {
            fdr: report.fdr,
            subtrees,
            global: GlobalBlock {
                fisher_p,
                second_smallest_p,
                k_tested: report.tested_pvalues().len(),
                method,
                p,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("line {}: {e}", e.line())))
    }
}

/// Comma-separated square matrix; the first row and column hold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledDistances {
    pub labels: Vec<String>,
    pub matrix: SymMatrix,
}

pub fn write_distances(d: &LabelledDistances) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec![String::new()];
    head.extend(d.labels.iter().cloned());
    w.write_record(&head).expect("in-memory write");
    for (i, l) in d.labels.iter().enumerate() {
        let mut rec = vec![l.clone()];
        rec.extend((0..d.labels.len()).map(|j| d.matrix.get(i, j).to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

pub fn read_distances<R: Read>(r: R) -> Result<LabelledDistances> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows = rdr.records();
    let head = rows.next().ok_or_else(|| invalid("line 1: empty distance file"))?.map_err(csv_err)?;
    let labels: Vec<String> = head.iter().skip(1).map(str::to_string).collect();
    let m = labels.len();
    let mut vals = vec![0.0; m * m];
    let mut count = 0;
    for rec in rows {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if count >= m {
            return Err(invalid(format!("line {line}: more rows than labels")));
        }
        if rec[0] != labels[count] {
            return Err(invalid(format!("line {line}: row label {:?} does not match column {:?}", &rec[0], labels[count])));
        }
        for j in 0..m {
            vals[count * m + j] = rec[j + 1]
                .trim()
                .parse()
                .map_err(|_| invalid(format!("line {line}: {:?} is not a number", &rec[j + 1])))?;
        }
        count += 1;
    }
    if count != m {
        return Err(invalid(format!("distance matrix has {count} rows for {m} labels")));
    }
    for i in 0..m {
        for j in 0..i {
            if vals[i * m + j] != vals[j * m + i] {
                return Err(invalid(format!("distance matrix is not symmetric at ({}, {})", i + 1, j + 1)));
            }
        }
    }
    Ok(LabelledDistances {
        labels,
        matrix: SymMatrix::from_upper(m, |i, j| vals[i * m + j]),
    })
}

/// Label used for sample `id` under `condition` in distance files.
pub fn sample_label(id: &str, condition: u8) -> String {
    format!("{id}:{condition}")
}

/// Index pairs `(condition 1, condition 2)` inferred from `id:1` / `id:2`
/// labels.
pub fn pairs_from_labels(labels: &[String]) -> Result<Vec<(usize, usize)>> {
    let mut by_id: BTreeMap<&str, [Option<usize>; 2]> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let (id, cond) = l
            .rsplit_once(':')
            .ok_or_else(|| invalid(format!("label {l:?} is not of the form id:condition")))?;
        let t = match cond {
            "1" => 0,
            "2" => 1,
            _ => return Err(invalid(format!("label {l:?}: condition must be 1 or 2"))),
        };
        let slot = by_id.entry(id).or_insert_with(|| {
            order.push(id);
            [None, None]
        });
        if slot[t].replace(i).is_some() {
            return Err(invalid(format!("label {l:?} appears twice")));
        }
    }
    order
        .into_iter()
        .map(|id| match by_id[id] {
            [Some(a), Some(b)] => Ok((a, b)),
            _ => Err(invalid(format!("subject {id:?} lacks one of its two conditions"))),
        })
        .collect()
}

/// Pairs file: header `condition1\tcondition2`, one row of distance-matrix
/// labels per subject.
pub fn read_pairs<R: Read>(r: R, labels: &[String]) -> Result<Vec<(usize, usize)>> {
    let (_, recs) = records(r, Some(&["condition1", "condition2"]))?;
    let pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    recs.iter()
        .map(|(line, rec)| {
            let find = |s: &str| {
                pos.get(s.trim())
                    .copied()
                    .ok_or_else(|| invalid(format!("line {line}: label {s:?} is not in the distance matrix")))
            };
            Ok((find(&rec[0])?, find(&rec[1])?))
        })
        .collect()
}

pub fn write_pairs(labels: &[String], pairs: &[(usize, usize)]) -> String {
    let mut w = tsv_writer();
    w.write_record(["condition1", "condition2"]).expect("in-memory write");
    for &(a, b) in pairs {
        w.write_record([&labels[a], &labels[b]]).expect("in-memory write");
    }
    finish(w)
}

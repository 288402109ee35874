//! Scoring parser output against generated ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgram::HEAD_ROLE;
use crate::detector::Provenance;
use crate::parser::{rank_solutions, SolutionFile, SolutionGraph, SolutionNode};
use crate::synth::GroundTruth;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("solution refers to occurrence {0}, which the ground truth does not list")]
    UnknownOccurrence(String),
    #[error("solution node {0} has no resolvable head occurrence")]
    Headless(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no solutions file for {0}")]
    MissingSolutions(String),
}

type Edge = (String, String, String);

fn head_occurrence<'g>(g: &'g SolutionGraph, node: &'g SolutionNode) -> Option<&'g str> {
    if node.provenance != Provenance::Inferred {
        return Some(&node.id);
    }
    let kids: Vec<(&str, &SolutionNode)> = g.children(&node.id).collect();
    if let Some((_, h)) = kids.iter().find(|(r, _)| *r == HEAD_ROLE) {
        return head_occurrence(g, h);
    }
    match kids.as_slice() {
        [(role, only)] if role.starts_with("option[") => head_occurrence(g, only),
        _ => None,
    }
}

/// Dependency edges of a solution as (head occurrence, dependent occurrence,
/// role). Alternative choices and rule identities are projected away.
pub fn dependency_edges(g: &SolutionGraph) -> Result<BTreeSet<Edge>, EvalError> {
    let mut out = BTreeSet::new();
    for e in &g.edges {
        if e.role == HEAD_ROLE || e.role.starts_with("option[") {
            continue;
        }
        let from = g.node(&e.from).ok_or_else(|| EvalError::Headless(e.from.clone()))?;
        let to = g.node(&e.to).ok_or_else(|| EvalError::Headless(e.to.clone()))?;
        let h = head_occurrence(g, from).ok_or_else(|| EvalError::Headless(from.id.clone()))?;
        let d = head_occurrence(g, to).ok_or_else(|| EvalError::Headless(to.id.clone()))?;
        out.insert((h.to_string(), d.to_string(), e.role.clone()));
    }
    Ok(out)
}

/// Edge-set equality plus exact coverage of the truth's occurrences.
pub fn match_solution(sol: &SolutionGraph, truth: &GroundTruth) -> Result<bool, EvalError> {
    let known: BTreeSet<&str> = truth.occurrence_ids.iter().map(String::as_str).collect();
    let covered: BTreeSet<&str> = sol.occurrence_ids().into_iter().collect();
    if let Some(stray) = covered.difference(&known).next() {
        return Err(EvalError::UnknownOccurrence(stray.to_string()));
    }
    if covered != known {
        return Ok(false);
    }
    let want: BTreeSet<Edge> =
        truth.edges.iter().map(|e| (e.head_id.clone(), e.dep_id.clone(), e.role.clone())).collect();
    Ok(dependency_edges(sol)? == want)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub phrase_id: String,
    pub size: usize,
    pub n_solutions: usize,
    pub n_matching: usize,
    pub ground_truth_found: bool,
    pub n_false_positives: usize,
    /// 1-based position of the first matching solution after ranking.
    pub rank_of_truth: Option<usize>,
    pub truncated: bool,
}

pub fn score_phrase(phrase_id: &str, solutions: Vec<SolutionGraph>, truth: &GroundTruth) -> Result<MatchReport, EvalError> {
    let truncated = solutions.iter().any(|s| s.truncated);
    let ranked = rank_solutions(solutions);
    let mut n_matching = 0;
    let mut rank = None;
    for (i, s) in ranked.iter().enumerate() {
        if match_solution(s, truth)? {
            n_matching += 1;
            rank.get_or_insert(i + 1);
        }
    }
    Ok(MatchReport {
        phrase_id: phrase_id.to_string(),
        size: truth.size(),
        n_solutions: ranked.len(),
        n_matching,
        ground_truth_found: rank.is_some(),
        n_false_positives: ranked.len() - n_matching,
        rank_of_truth: rank,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketStats {
    pub lo: usize,
    pub hi: usize,
    pub n_phrases: usize,
    pub n_found: usize,
    pub n_solutions: usize,
    pub n_matching: usize,
    pub n_false_positives: usize,
}

impl BucketStats {
    pub fn label(&self) -> String {
        if self.lo == self.hi {
            self.lo.to_string()
        } else {
            format!("{}-{}", self.lo, self.hi)
        }
    }

    pub fn recall(&self) -> f64 {
        ratio(self.n_found, self.n_phrases)
    }

    /// Matching solutions over emitted solutions; 0 when nothing was emitted.
    pub fn precision(&self) -> f64 {
        ratio(self.n_matching, self.n_solutions)
    }

    pub fn mean_fp(&self) -> f64 {
        ratio(self.n_false_positives, self.n_phrases)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub bucket_width: usize,
    pub buckets: Vec<BucketStats>,
}

#[derive(Serialize)]
struct CsvRow {
    size_bucket: String,
    n_phrases: usize,
    recall: String,
    precision: String,
    mean_fp: String,
}

impl EvalSummary {
    pub fn total_phrases(&self) -> usize {
        self.buckets.iter().map(|b| b.n_phrases).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.buckets {
            w.serialize(CsvRow {
                size_bucket: b.label(),
                n_phrases: b.n_phrases,
                recall: format!("{:.4}", b.recall()),
                precision: format!("{:.4}", b.precision()),
                mean_fp: format!("{:.4}", b.mean_fp()),
            })
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Buckets of `width` sizes: 1..=width, width+1..=2*width, ...
pub fn summarize(reports: &[MatchReport], width: usize) -> EvalSummary {
    let width = width.max(1);
    let mut buckets: BTreeMap<usize, BucketStats> = BTreeMap::new();
    for r in reports {
        let k = r.size.saturating_sub(1) / width;
        let b = buckets.entry(k).or_insert_with(|| BucketStats {
            lo: k * width + 1,
            hi: (k + 1) * width,
            n_phrases: 0,
            n_found: 0,
            n_solutions: 0,
            n_matching: 0,
            n_false_positives: 0,
        });
        b.n_phrases += 1;
        b.n_found += usize::from(r.ground_truth_found);
        b.n_solutions += r.n_solutions;
        b.n_matching += r.n_matching;
        b.n_false_positives += r.n_false_positives;
    }
    EvalSummary { bucket_width: width, buckets: buckets.into_values().collect() }
}

fn read(path: &Path) -> Result<String, EvalError> {
    fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.into(), source })
}

pub fn load_truth(path: &Path) -> Result<GroundTruth, EvalError> {
    GroundTruth::from_json(&read(path)?).map_err(|e| EvalError::Format { path: path.into(), message: e.to_string() })
}

pub fn load_solutions(path: &Path) -> Result<Vec<SolutionGraph>, EvalError> {
    SolutionFile::from_json(&read(path)?)
        .map(|f| f.solutions)
        .map_err(|e| EvalError::Format { path: path.into(), message: e.to_string() })
}

/// Scores every `*.json` truth file against the same-named solutions file.
pub fn evaluate_dirs(solutions_dir: &Path, truth_dir: &Path) -> Result<Vec<MatchReport>, EvalError> {
    let entries = fs::read_dir(truth_dir).map_err(|source| EvalError::Io { path: truth_dir.into(), source })?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|source| EvalError::Io { path: truth_dir.into(), source })?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") {
            names.push(name);
        }
    }
    names.sort();
    names
        .par_iter()
        .map(|name| {
            let truth = load_truth(&truth_dir.join(name))?;
            let sol_path = solutions_dir.join(name);
            if !sol_path.exists() {
                return Err(EvalError::MissingSolutions(name.clone()));
            }
            score_phrase(name.trim_end_matches(".json"), load_solutions(&sol_path)?, &truth)
        })
        .collect()
}

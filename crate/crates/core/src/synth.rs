//! Random dependency grammars and timed phrases that follow them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgram::{Category, Channel, DepGrammar, DepGrammarError, DepRule};
use crate::detector::{AnnotationDoc, Occurrence};
use crate::temporal::Interval;

/// Inclusive integer range, serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds(pub i64, pub i64);

impl Bounds {
    fn draw(self, rng: &mut impl Rng) -> i64 {
        rng.gen_range(self.0..=self.1)
    }

    pub fn contains(self, v: i64) -> bool {
        self.0 <= v && v <= self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n_categories: usize,
    pub rules_per_category: Bounds,
    pub mg_dependents: Bounds,
    pub nmg_dependents: usize,
    pub mg_fraction: f64,
    pub max_depth: usize,
    pub mg_duration: Bounds,
    pub gap: Bounds,
    pub nmg_duration: Bounds,
    /// Target range for the number of head occurrences per phrase.
    pub phrase_size: Bounds,
    /// Derivations drawn per phrase while looking for the target size.
    pub size_retries: usize,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_categories: 20,
            rules_per_category: Bounds(3, 4),
            mg_dependents: Bounds(0, 4),
            nmg_dependents: 1,
            mg_fraction: 0.5,
            max_depth: 4,
            mg_duration: Bounds(300, 900),
            gap: Bounds(0, 200),
            nmg_duration: Bounds(400, 1500),
            phrase_size: Bounds(2, 20),
            size_retries: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation parameters: {0}")]
    Params(String),
    #[error("category {0} has no derivation that terminates")]
    NonTerminating(String),
    #[error("no derivation from category {0} fits the phrase size range")]
    SizeUnreachable(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Grammar(#[from] DepGrammarError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl GenParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Params(m.to_string()));
        if self.n_categories == 0 {
            return bad("n_categories must be positive");
        }
        for (name, b, min) in [
            ("rules_per_category", self.rules_per_category, 1),
            ("mg_dependents", self.mg_dependents, 0),
            ("mg_duration", self.mg_duration, 1),
            ("gap", self.gap, 0),
            ("nmg_duration", self.nmg_duration, 1),
            ("phrase_size", self.phrase_size, 1),
        ] {
            if b.0 > b.1 || b.0 < min {
                return Err(SynthError::Params(format!("{name} must be a non-empty range with minimum >= {min}")));
            }
        }
        if !(self.mg_fraction > 0.0 && self.mg_fraction < 1.0) {
            return bad("mg_fraction must lie strictly between 0 and 1");
        }
        if self.nmg_dependents != 1 {
            return bad("non-manual rules take exactly one dependent");
        }
        if self.size_retries == 0 {
            return bad("size_retries must be positive");
        }
        Ok(())
    }
}

fn category_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("C{i:0width$}")
}

pub fn generate_grammar(params: &GenParams) -> Result<DepGrammar, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n_categories;
    let n_mg = ((n as f64 * params.mg_fraction).round() as usize).clamp(1, n);
    let mut channels: Vec<Channel> =
        (0..n).map(|i| if i < n_mg { Channel::Manual } else { Channel::NonManual }).collect();
    channels.shuffle(&mut rng);
    let names: Vec<String> = (0..n).map(|i| category_name(i, n)).collect();

    let mut g = DepGrammar::default();
    for (name, channel) in names.iter().zip(&channels) {
        g.categories.push(Category { name: name.clone(), channel: *channel });
    }
    for (name, channel) in names.iter().zip(&channels) {
        let n_rules = params.rules_per_category.draw(&mut rng) as usize;
        let mut rules = Vec::with_capacity(n_rules);
        for _ in 0..n_rules {
            let n_deps = match channel {
                Channel::Manual => params.mg_dependents.draw(&mut rng) as usize,
                Channel::NonManual => params.nmg_dependents,
            };
            let deps: Vec<String> = (0..n_deps).map(|_| names.choose(&mut rng).unwrap().clone()).collect();
            let star = match channel {
                Channel::Manual => rng.gen_range(0..=n_deps),
                Channel::NonManual => 0,
            };
            rules.push(DepRule { left: deps[..star].to_vec(), right: deps[star..].to_vec() });
        }
        g.rules.insert(name.clone(), rules);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEdge {
    pub head_id: String,
    pub dep_id: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub grammar_id: String,
    pub root_category: String,
    pub occurrence_ids: Vec<String>,
    pub edges: Vec<TruthEdge>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn size(&self) -> usize {
        self.occurrence_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPhrase {
    pub annotation: AnnotationDoc,
    pub truth: GroundTruth,
}

/// Minimal derivation height per category; `None` when no derivation ends.
fn termination_heights(g: &DepGrammar) -> BTreeMap<String, Option<usize>> {
    let mut h: BTreeMap<String, Option<usize>> = g.categories.iter().map(|c| (c.name.clone(), None)).collect();
    loop {
        let mut changed = false;
        for c in &g.categories {
            let best = g.effective_rules(&c.name).iter().filter_map(|r| rule_height(&h, r)).min();
            if best.is_some() && best < h[&c.name].or(Some(usize::MAX)) {
                h.insert(c.name.clone(), best);
                changed = true;
            }
        }
        if !changed {
            return h;
        }
    }
}

fn rule_height(h: &BTreeMap<String, Option<usize>>, r: &DepRule) -> Option<usize> {
    r.dependents().try_fold(0, |acc, (_, d)| h.get(d).copied().flatten().map(|x| acc.max(x + 1)))
}

struct Deriv {
    category: String,
    channel: Channel,
    rule: DepRule,
    children: Vec<(String, Deriv)>,
    head: Option<Interval>,
    hull: Option<Interval>,
}

impl Deriv {
    fn size(&self) -> usize {
        1 + self.children.iter().map(|(_, c)| c.size()).sum::<usize>()
    }
}

struct Sampler<'g> {
    g: &'g DepGrammar,
    params: &'g GenParams,
    heights: BTreeMap<String, Option<usize>>,
    cap: usize,
}

impl Sampler<'_> {
    /// Past `max_depth`, or once `target` nodes exist, only rules of minimal
    /// height are drawn. `None` when the derivation outgrows the size cap.
    fn derive(&self, cat: &str, depth: usize, made: &mut usize, target: usize, rng: &mut ChaCha8Rng) -> Option<Deriv> {
        if *made >= self.cap {
            return None;
        }
        *made += 1;
        let rules = self.g.effective_rules(cat);
        let heights: Vec<Option<usize>> = rules.iter().map(|r| rule_height(&self.heights, r)).collect();
        let candidates: Vec<usize> = if depth >= self.params.max_depth || *made >= target {
            let min = heights.iter().flatten().min().copied();
            (0..rules.len()).filter(|i| heights[*i].is_some() && heights[*i] == min).collect()
        } else {
            (0..rules.len()).filter(|i| heights[*i].is_some()).collect()
        };
        let rule = rules[*candidates.choose(rng).expect("caller checked termination")].clone();
        let mut children = Vec::with_capacity(rule.n_dependents());
        for (role, dep) in rule.dependents() {
            children.push((role, self.derive(dep, depth + 1, made, target, rng)?));
        }
        let channel = self.g.category(cat).expect("checked grammar").channel;
        Some(Deriv { category: cat.to_string(), channel, rule, children, head: None, hull: None })
    }

    fn layout(&self, d: &mut Deriv, cursor: i64, anchor: Option<Interval>, rng: &mut ChaCha8Rng) -> Interval {
        let hull = match d.channel {
            Channel::Manual => self.layout_manual(d, cursor, rng),
            Channel::NonManual => self.layout_non_manual(d, cursor, anchor, rng),
        };
        d.hull = Some(hull);
        hull
    }

    fn layout_manual(&self, d: &mut Deriv, cursor: i64, rng: &mut ChaCha8Rng) -> Interval {
        let p = self.params;
        let n_left = d.rule.left.len();
        let manual: Vec<bool> = d.children.iter().map(|(_, c)| c.channel == Channel::Manual).collect();
        let mut cur = cursor;
        let mut hull: Option<Interval> = None;
        let mut place = |iv: Interval, cur: &mut i64, rng: &mut ChaCha8Rng| {
            hull = Some(hull.map_or(iv, |h: Interval| h.hull(&iv)));
            *cur = iv.end() + p.gap.draw(rng);
        };
        for i in (0..n_left).filter(|i| manual[*i]) {
            let iv = self.layout(&mut d.children[i].1, cur, None, rng);
            place(iv, &mut cur, rng);
        }
        let head = Interval::new(cur, cur + p.mg_duration.draw(rng)).expect("positive duration");
        d.head = Some(head);
        place(head, &mut cur, rng);
        for i in (0..d.children.len()).filter(|i| !manual[*i]) {
            let iv = self.layout(&mut d.children[i].1, cur, Some(head), rng);
            place(iv, &mut cur, rng);
        }
        for i in (n_left..d.children.len()).filter(|i| manual[*i]) {
            let iv = self.layout(&mut d.children[i].1, cur, None, rng);
            place(iv, &mut cur, rng);
        }
        hull.expect("head placed")
    }

    /// The dependent goes at the cursor; the head starts inside the governor's
    /// head when there is one, otherwise inside the dependent, and always ends
    /// strictly inside the dependent's span. A non-manual dependent's own head
    /// is overlapped as well.
    fn layout_non_manual(
        &self,
        d: &mut Deriv,
        cursor: i64,
        anchor: Option<Interval>,
        rng: &mut ChaCha8Rng,
    ) -> Interval {
        let (_, child) = d.children.first_mut().expect("non-manual rules have one dependent");
        let dep = self.layout(child, cursor, None, rng);
        let touch = match child.channel {
            Channel::NonManual => child.head.expect("laid out"),
            Channel::Manual => dep,
        };
        let host = anchor.unwrap_or(dep);
        let start = rng.gen_range(host.start()..host.end().min(touch.end()));
        let lo = (touch.start() + 1).max(start + 1);
        let end = (start + self.params.nmg_duration.draw(rng)).clamp(lo, dep.end());
        let head = Interval::new(start, end).expect("ordered by construction");
        d.head = Some(head);
        head.hull(&dep)
    }
}

/// True when some category node sits below another with the same hull.
fn repeats_hull(d: &Deriv) -> bool {
    fn below(d: &Deriv, cat: &str, hull: Option<Interval>) -> bool {
        d.children.iter().any(|(_, c)| (c.category == cat && c.hull == hull) || below(c, cat, hull))
    }
    below(d, &d.category, d.hull) || d.children.iter().any(|(_, c)| repeats_hull(c))
}

fn emit(g: &DepGrammar, d: &Deriv, ids: &mut usize, occs: &mut Vec<Occurrence>, edges: &mut Vec<TruthEdge>) -> String {
    let id = format!("h{}", *ids);
    *ids += 1;
    occs.push(Occurrence::detected(id.clone(), g.terminal(&d.category), d.head.expect("laid out")));
    for (role, c) in &d.children {
        let dep_id = emit(g, c, ids, occs, edges);
        edges.push(TruthEdge { head_id: id.clone(), dep_id, role: role.clone() });
    }
    id
}

/// Categories with at least one terminating derivation.
pub fn terminating_categories(g: &DepGrammar) -> Vec<String> {
    termination_heights(g).into_iter().filter(|(_, h)| h.is_some()).map(|(c, _)| c).collect()
}

/// Samples a phrase rooted at `root`. A target size is drawn from
/// `phrase_size`; derivations larger than its maximum are abandoned, and up
/// to `size_retries` draws are made keeping the one closest to the target.
pub fn generate_phrase(
    g: &DepGrammar,
    grammar_id: &str,
    root: &str,
    params: &GenParams,
    seed: u64,
) -> Result<GroundTruthPhrase, SynthError> {
    params.validate()?;
    g.check()?;
    let heights = termination_heights(g);
    match heights.get(root) {
        None => return Err(SynthError::Params(format!("unknown root category {root}"))),
        Some(None) => return Err(SynthError::NonTerminating(root.to_string())),
        Some(Some(_)) => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = params.phrase_size.draw(&mut rng) as usize;
    let cap = params.phrase_size.1 as usize;
    let sampler = Sampler { g, params, heights, cap };
    let mut best: Option<Deriv> = None;
    for _ in 0..params.size_retries {
        let Some(mut d) = sampler.derive(root, 0, &mut 0, target, &mut rng) else { continue };
        sampler.layout(&mut d, 0, None, &mut rng);
        if repeats_hull(&d) {
            continue;
        }
        let dist = |x: &Deriv| x.size().abs_diff(target);
        if best.as_ref().map_or(true, |b| dist(&d) < dist(b)) {
            best = Some(d);
        }
        if best.as_ref().is_some_and(|b| dist(b) == 0) {
            break;
        }
    }
    let Some(d) = best else { return Err(SynthError::SizeUnreachable(root.to_string())) };
    let mut occs = Vec::new();
    let mut edges = Vec::new();
    emit(g, &d, &mut 0, &mut occs, &mut edges);
    let occurrence_ids = occs.iter().map(|o| o.id.clone()).collect();
    let span = d.hull.expect("laid out");
    let span = Interval::new(0.min(span.start()), span.end()).expect("ordered");
    let annotation = AnnotationDoc::new(span, occs).expect("fresh ids inside the hull");
    let truth = GroundTruth { grammar_id: grammar_id.to_string(), root_category: root.to_string(), occurrence_ids, edges };
    Ok(GroundTruthPhrase { annotation, truth })
}

/// Tries terminating root categories in a seeded order until one yields a
/// phrase within the size range.
pub fn sample_phrase(g: &DepGrammar, grammar_id: &str, params: &GenParams, seed: u64) -> Result<GroundTruthPhrase, SynthError> {
    let mut roots = terminating_categories(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    roots.shuffle(&mut rng);
    let phrase_seed = rng.next_u64();
    let mut last = SynthError::NonTerminating(g.categories.first().map_or_else(String::new, |c| c.name.clone()));
    for root in &roots {
        match generate_phrase(g, grammar_id, root, params, phrase_seed) {
            Err(e @ SynthError::SizeUnreachable(_)) => last = e,
            other => return other,
        }
    }
    Err(last)
}

/// Seed for item `index` of a stream rooted at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub grammar_path: String,
    pub phrase_path: String,
    pub truth_path: String,
    pub grammar_seed: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: GenParams,
    pub n_grammars: usize,
    pub phrases_per_grammar: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| SynthError::Format { path: path.into(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn write(path: &Path, text: &str) -> Result<(), SynthError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| SynthError::Io { path: path.into(), source })
}

pub fn grammar_id(index: usize) -> String {
    format!("g{index:05}")
}

const GRAMMAR_REDRAWS: usize = 1000;

struct GrammarFiles {
    grammar_path: String,
    grammar: String,
    phrases: Vec<(ManifestEntry, String, String)>,
}

fn build_grammar(index: usize, grammar_seed: u64, params: &GenParams, phrases: usize) -> Result<GrammarFiles, SynthError> {
    let gid = grammar_id(index);
    let g = generate_grammar(&GenParams { seed: grammar_seed, ..params.clone() })?;
    let grammar_path = format!("grammars/{gid}.json");
    let mut out = Vec::with_capacity(phrases);
    for p in 0..phrases {
        let seed = derive_seed(grammar_seed, p as u64 + 1);
        let phrase = sample_phrase(&g, &gid, params, seed)?;
        let entry = ManifestEntry {
            grammar_path: grammar_path.clone(),
            phrase_path: format!("phrases/{gid}_p{p}.json"),
            truth_path: format!("truth/{gid}_p{p}.json"),
            grammar_seed,
            seed,
        };
        out.push((entry, phrase.annotation.to_json(), phrase.truth.to_json()));
    }
    Ok(GrammarFiles { grammar_path, grammar: g.to_json(), phrases: out })
}

/// Follows the redraw chain from `seed` until the grammar yields every
/// requested phrase.
fn build_usable_grammar(index: usize, mut seed: u64, params: &GenParams, phrases: usize) -> Result<GrammarFiles, SynthError> {
    let mut last = None;
    for _ in 0..GRAMMAR_REDRAWS {
        match build_grammar(index, seed, params, phrases) {
            Err(e @ (SynthError::NonTerminating(_) | SynthError::SizeUnreachable(_))) => last = Some(e),
            other => return other,
        }
        seed = derive_seed(seed, 0);
    }
    Err(last.expect("at least one draw"))
}

fn write_grammar(out: &Path, files: GrammarFiles) -> Result<Vec<ManifestEntry>, SynthError> {
    write(&out.join(&files.grammar_path), &files.grammar)?;
    let mut entries = Vec::with_capacity(files.phrases.len());
    for (entry, phrase, truth) in files.phrases {
        write(&out.join(&entry.phrase_path), &phrase)?;
        write(&out.join(&entry.truth_path), &truth)?;
        entries.push(entry);
    }
    Ok(entries)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, SynthError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| SynthError::Pool(e.to_string()))
}

/// Writes grammars, phrase annotations, ground truth and `manifest.json`
/// under `out`. Grammar `i` is seeded from stream `i` of `params.seed`;
/// grammars that cannot produce the requested phrases are redrawn.
pub fn generate_corpus(
    params: &GenParams,
    n_grammars: usize,
    phrases_per_grammar: usize,
    out: &Path,
    jobs: Option<usize>,
) -> Result<Manifest, SynthError> {
    params.validate()?;
    let per_grammar: Vec<Vec<ManifestEntry>> = pool(jobs)?.install(|| {
        (0..n_grammars)
            .into_par_iter()
            .map(|i| {
                let files = build_usable_grammar(i, derive_seed(params.seed, i as u64), params, phrases_per_grammar)?;
                write_grammar(out, files)
            })
            .collect::<Result<_, _>>()
    })?;
    let manifest = Manifest {
        params: params.clone(),
        n_grammars,
        phrases_per_grammar,
        entries: per_grammar.into_iter().flatten().collect(),
    };
    write(&out.join(MANIFEST_FILE), &manifest.to_json())?;
    Ok(manifest)
}

/// Rebuilds every file listed in a manifest from its recorded seeds.
pub fn regenerate_from_manifest(manifest: &Manifest, out: &Path, jobs: Option<usize>) -> Result<(), SynthError> {
    let grammars: BTreeMap<&str, u64> =
        manifest.entries.iter().map(|e| (e.grammar_path.as_str(), e.grammar_seed)).collect();
    let grammars: Vec<u64> = grammars.into_values().collect();
    pool(jobs)?.install(|| {
        grammars.par_iter().enumerate().try_for_each(|(i, seed)| {
            write_grammar(out, build_grammar(i, *seed, &manifest.params, manifest.phrases_per_grammar)?).map(|_| ())
        })
    })?;
    write(&out.join(MANIFEST_FILE), &manifest.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgram::compile_dep_grammar;
    use crate::temporal::{eval_allen, Relation};

    fn small(seed: u64) -> GenParams {
        GenParams { n_categories: 4, phrase_size: Bounds(1, 6), seed, ..Default::default() }
    }

    #[test]
    fn default_shape_grammar() {
        let g = generate_grammar(&GenParams { seed: 7, ..Default::default() }).unwrap();
        assert_eq!(g.categories.len(), 20);
        assert_eq!(g.categories.iter().filter(|c| c.channel == Channel::Manual).count(), 10);
        for c in &g.categories {
            let rules = g.rules_of(&c.name);
            assert!((3..=4).contains(&rules.len()));
            for r in rules {
                match c.channel {
                    Channel::Manual => assert!(r.n_dependents() <= 4),
                    Channel::NonManual => assert!(r.left.is_empty() && r.right.len() == 1),
                }
            }
        }
        g.check().unwrap();
    }

    #[test]
    fn trivial_grammar_compiles_to_one_of_each() {
        let p = GenParams {
            n_categories: 1,
            rules_per_category: Bounds(1, 1),
            mg_dependents: Bounds(0, 0),
            ..Default::default()
        };
        let m = compile_dep_grammar(&generate_grammar(&p).unwrap()).unwrap();
        assert_eq!((m.alternatives.len(), m.patterns.len(), m.detectable.len()), (1, 1, 1));
        let phrase = generate_phrase(&generate_grammar(&p).unwrap(), "g", "C0", &p, 3).unwrap();
        assert_eq!(phrase.annotation.occurrences.len(), 1);
        assert!(phrase.truth.edges.is_empty());
    }

    #[test]
    fn same_seed_same_grammar() {
        let a = generate_grammar(&GenParams { seed: 11, ..Default::default() }).unwrap().to_json();
        let b = generate_grammar(&GenParams { seed: 11, ..Default::default() }).unwrap().to_json();
        let c = generate_grammar(&GenParams { seed: 12, ..Default::default() }).unwrap().to_json();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn hays_order_is_temporal_order() {
        let mut g = DepGrammar {
            categories: ["X", "A", "B"].map(|n| Category { name: n.into(), channel: Channel::Manual }).to_vec(),
            ..Default::default()
        };
        g.rules.insert("X".into(), vec![DepRule::new(&["A"], &["B"])]);
        for seed in 0..20 {
            let ph = generate_phrase(&g, "g", "X", &GenParams::default(), seed).unwrap();
            let at = |unit: &str| ph.annotation.occurrences.iter().find(|o| o.unit == unit).unwrap().interval();
            let (a, x, b) = (at("term:A"), at("term:X"), at("term:B"));
            assert!(a.end() <= x.start() && x.end() <= b.start());
        }
    }

    #[test]
    fn non_terminating_root_is_named() {
        let mut g = DepGrammar {
            categories: vec![Category { name: "Loop".into(), channel: Channel::Manual }],
            ..Default::default()
        };
        g.rules.insert("Loop".into(), vec![DepRule::new(&[], &["Loop"])]);
        let err = generate_phrase(&g, "g", "Loop", &GenParams::default(), 0).unwrap_err();
        assert!(err.to_string().contains("Loop"));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(GenParams { mg_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(GenParams { gap: Bounds(5, 1), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn corpus_regenerates_byte_identically() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_corpus(&small(5), 3, 2, a.path(), Some(2)).unwrap();
        assert_eq!(m.entries.len(), 6);
        regenerate_from_manifest(&Manifest::load(a.path().join(MANIFEST_FILE)).unwrap(), b.path(), Some(1)).unwrap();
        for e in &m.entries {
            for f in [&e.grammar_path, &e.phrase_path, &e.truth_path] {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
            }
        }
        assert_eq!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn phrases_respect_channel_timing(seed in any::<u64>()) {
                let p = GenParams { seed, ..Default::default() };
                let g = generate_grammar(&p).unwrap();
                let ph = sample_phrase(&g, "g", &p, seed ^ 1).unwrap();
                let by_id: BTreeMap<&str, &Occurrence> =
                    ph.annotation.occurrences.iter().map(|o| (o.id.as_str(), o)).collect();
                let channel = |o: &Occurrence| {
                    g.category(o.unit.trim_start_matches("term:")).unwrap().channel
                };
                let manual: Vec<Interval> = ph.annotation.occurrences.iter()
                    .filter(|o| channel(o) == Channel::Manual).map(|o| o.interval()).collect();
                for (i, a) in manual.iter().enumerate() {
                    for b in &manual[i + 1..] {
                        prop_assert!(eval_allen(Relation::NoOverlapOrdered, *a, *b)
                            || eval_allen(Relation::NoOverlapOrdered, *b, *a));
                    }
                }
                for e in &ph.truth.edges {
                    let (h, d) = (by_id[e.head_id.as_str()], by_id[e.dep_id.as_str()]);
                    if channel(d) == Channel::NonManual {
                        prop_assert!(eval_allen(Relation::SharesTime, d.interval(), h.interval()));
                    }
                }
                prop_assert_eq!(ph.truth.edges.len() + 1, ph.truth.size());
            }
        }
    }
}

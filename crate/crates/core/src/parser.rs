//! Top-down construction of solution graphs from the implicit AND/OR graph.
//!
//! The search is a depth-first enumeration written in continuation-passing
//! style: every expansion hands each derivation it finds to a continuation,
//! then backtracks. Instance nodes live in an arena that is truncated on
//! backtrack, and detected occurrences are marked used while bound so that a
//! derivation never consumes one occurrence twice.
//!
//! Roots are seeded from detector answers. A detectable root unit is seeded by
//! its own occurrences; any other root is seeded by the occurrences of the
//! first detectable leaf of each pattern it reaches through alternatives (the
//! lexical head of a compiled dependency rule). A solution is a set of
//! occurrence-disjoint seed trees covering every seed occurrence: a seed whose
//! occurrence is consumed inside another seed's tree is merged into it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{AnnotationDoc, Detector, DetectorError, DetectorQuery, Occurrence, Provenance};
use crate::model::{build_implicit_graph, ImplicitGraph, Model, ModelError, NodeKind, UnitId, ValidationReport};
use crate::temporal::{
    infer_parent_interval, AttributeSet, ConstraintExpr, FlagValue, Interval, Relation, SELF_ROLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_expansions: u64,
    pub max_solutions: usize,
}

impl SearchBudget {
    pub const DEFAULT_EXPANSIONS: u64 = 100_000;
    pub const DEFAULT_SOLUTIONS: usize = 10_000;

    pub fn unlimited() -> Self {
        Self { max_expansions: u64::MAX, max_solutions: usize::MAX }
    }

    pub fn expansions(max_expansions: u64) -> Self {
        Self { max_expansions, ..Self::default() }
    }
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { max_expansions: Self::DEFAULT_EXPANSIONS, max_solutions: Self::DEFAULT_SOLUTIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootSpec {
    pub unit: UnitId,
    pub window: Interval,
}

impl RootSpec {
    pub fn new(unit: impl Into<String>) -> Self {
        Self { unit: unit.into(), window: Interval::unbounded() }
    }

    pub fn within(unit: impl Into<String>, window: Interval) -> Self {
        Self { unit: unit.into(), window }
    }
}

pub struct ParseRequest<'a> {
    pub model: &'a Model,
    pub roots: Vec<RootSpec>,
    pub detector: &'a dyn Detector,
    pub budget: SearchBudget,
    /// Keep derivations where some pattern child could not be filled.
    pub emit_partial: bool,
}

impl<'a> ParseRequest<'a> {
    pub fn new(model: &'a Model, roots: Vec<RootSpec>, detector: &'a dyn Detector) -> Self {
        Self { model, roots, detector, budget: SearchBudget::default(), emit_partial: false }
    }

    pub fn budget(mut self, budget: SearchBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn emit_partial(mut self, yes: bool) -> Self {
        self.emit_partial = yes;
        self
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("model is invalid:\n{0}")]
    InvalidModel(ValidationReport),
    #[error("root unit {0} is not declared in the model")]
    UnknownRoot(UnitId),
    #[error("root unit {0} is neither detectable nor anchored by a detectable head")]
    UnanchoredRoot(UnitId),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionNode {
    pub id: String,
    pub unit: UnitId,
    pub start: i64,
    pub end: i64,
    pub provenance: Provenance,
}

impl SolutionNode {
    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end).expect("solution intervals are well formed")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionEdge {
    pub from: String,
    pub role: String,
    pub to: String,
}

/// One parse result: instance nodes in pre-order per component, and
/// constituency/dependency edges labelled by role (`option[k]` for the
/// choice taken at an alternative).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionGraph {
    pub score: usize,
    pub truncated: bool,
    pub nodes: Vec<SolutionNode>,
    pub edges: Vec<SolutionEdge>,
    #[serde(skip)]
    pub partial: bool,
}

pub fn option_role(k: usize) -> String {
    format!("option[{k}]")
}

impl SolutionGraph {
    pub fn empty() -> Self {
        Self { score: 0, truncated: false, nodes: Vec::new(), edges: Vec::new(), partial: false }
    }

    pub fn node(&self, id: &str) -> Option<&SolutionNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn children<'s>(&'s self, id: &'s str) -> impl Iterator<Item = (&'s str, &'s SolutionNode)> + 's {
        self.edges
            .iter()
            .filter(move |e| e.from == id)
            .filter_map(move |e| self.node(&e.to).map(|n| (e.role.as_str(), n)))
    }

    /// Nodes without a parent: one per connected component.
    pub fn roots(&self) -> Vec<&SolutionNode> {
        let targets: HashSet<&str> = self.edges.iter().map(|e| e.to.as_str()).collect();
        self.nodes.iter().filter(|n| !targets.contains(n.id.as_str())).collect()
    }

    pub fn hull(&self) -> Option<Interval> {
        self.nodes.iter().map(SolutionNode::interval).reduce(|a, b| a.hull(&b))
    }

    pub fn detected_hull(&self) -> Option<Interval> {
        self.nodes
            .iter()
            .filter(|n| n.provenance == Provenance::Detected)
            .map(SolutionNode::interval)
            .reduce(|a, b| a.hull(&b))
    }

    /// Ids of detected and external nodes, in node order.
    pub fn occurrence_ids(&self) -> Vec<&str> {
        self.nodes.iter().filter(|n| n.provenance != Provenance::Inferred).map(|n| n.id.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub solutions: Vec<SolutionGraph>,
    pub truncated: bool,
    pub expansions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Applied {
    Leaf,
    Pattern,
    Alternative(usize),
}

#[derive(Debug, Clone)]
struct Node {
    unit: usize,
    occ: Option<usize>,
    attrs: AttributeSet,
    applied: Applied,
    /// `None` marks a pattern child left unfilled in partial mode.
    children: Vec<(usize, Option<usize>)>,
}

struct CompiledConstraint {
    expr: ConstraintExpr,
    /// Number of bound children after which the constraint is decidable.
    stage: usize,
}

struct CompiledPattern {
    roles: Vec<String>,
    units: Vec<usize>,
    constraints: Vec<CompiledConstraint>,
    /// First child that is a detectable leaf; anchors lexical seeds.
    anchor_child: Option<usize>,
}

struct Rules<'m> {
    model: &'m Model,
    graph: ImplicitGraph,
    queried: Vec<bool>,
    patterns: Vec<CompiledPattern>,
}

impl<'m> Rules<'m> {
    fn new(model: &'m Model) -> Result<Self, ParseError> {
        let graph = build_implicit_graph(model).map_err(|e| match e {
            ModelError::Invalid(r) => ParseError::InvalidModel(r),
            other => unreachable!("graph construction only fails on validation: {other}"),
        })?;
        let queried: Vec<bool> = graph.nodes.iter().map(|n| n.detectable || n.external).collect();
        let patterns = model
            .patterns
            .iter()
            .map(|p| {
                let root = graph.node_index(&p.root).expect("validated");
                let self_known = queried[root];
                let roles: Vec<String> = p.children.iter().map(|c| c.role.clone()).collect();
                let units: Vec<usize> =
                    p.children.iter().map(|c| graph.node_index(&c.unit).expect("validated")).collect();
                let n = roles.len();
                let constraints = p
                    .constraints
                    .iter()
                    .map(|c| {
                        let uses_self = c.roles().contains(&SELF_ROLE);
                        let last = c.roles().iter().filter_map(|r| roles.iter().position(|x| x == r)).max();
                        let stage = if uses_self && !self_known { n } else { last.map_or(0, |i| i + 1) };
                        CompiledConstraint { expr: c.clone(), stage }
                    })
                    .collect();
                let anchor_child = units
                    .iter()
                    .position(|u| queried[*u] && matches!(graph.nodes[*u].kind, NodeKind::Leaf));
                CompiledPattern { roles, units, constraints, anchor_child }
            })
            .collect();
        Ok(Self { model, graph, queried, patterns })
    }

    fn unit_name(&self, u: usize) -> &str {
        &self.graph.nodes[u].unit
    }

    fn kind(&self, u: usize) -> NodeKind {
        self.graph.nodes[u].kind
    }

    /// Units whose occurrences seed trees of `root`.
    fn anchor_units(&self, root: usize) -> Vec<usize> {
        if self.queried[root] {
            return vec![root];
        }
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            if !seen.insert(u) {
                continue;
            }
            match self.kind(u) {
                NodeKind::Or(a) => {
                    for o in self.model.alternatives[a].options.iter().rev() {
                        stack.push(self.graph.node_index(o).expect("validated"));
                    }
                }
                NodeKind::And(p) => {
                    if self.queried[u] {
                        out.push(u);
                    } else if let Some(c) = self.patterns[p].anchor_child {
                        out.push(self.patterns[p].units[c]);
                    }
                }
                NodeKind::Leaf => {
                    if self.queried[u] {
                        out.push(u);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

struct Interned {
    occ: Occurrence,
    unit: usize,
}

#[derive(Debug, Clone, Copy)]
struct Seed {
    unit: usize,
    occ: usize,
    window: Interval,
}

type Cont<'c, 'a> = dyn FnMut(&mut Search<'a>, usize) -> bool + 'c;

struct Search<'a> {
    rules: &'a Rules<'a>,
    detector: &'a dyn Detector,
    occs: Vec<Interned>,
    occ_index: HashMap<String, usize>,
    used: Vec<bool>,
    used_count: usize,
    cache: HashMap<(usize, Interval), Rc<[usize]>>,
    nodes: Vec<Node>,
    /// (unit, used_count at entry) for each inferred rule node being expanded.
    stack: Vec<(usize, usize)>,
    seed_window: Interval,
    occurrence_bound: usize,
    expansions: u64,
    budget: SearchBudget,
    exhausted: bool,
    emit_partial: bool,
    error: Option<DetectorError>,
}

impl<'a> Search<'a> {
    fn tick(&mut self) -> bool {
        if self.exhausted {
            return false;
        }
        if self.expansions >= self.budget.max_expansions {
            self.exhausted = true;
            return false;
        }
        self.expansions += 1;
        true
    }

    fn candidates(&mut self, unit: usize, window: Interval) -> Option<Rc<[usize]>> {
        if let Some(c) = self.cache.get(&(unit, window)) {
            return Some(c.clone());
        }
        let q = DetectorQuery::new(self.rules.unit_name(unit), window);
        let answer = match self.detector.query(&q) {
            Ok(a) => a,
            Err(e) => {
                self.error = Some(e);
                return None;
            }
        };
        let mut ids = Vec::with_capacity(answer.len());
        for occ in answer {
            if !window.contains(&occ.interval()) {
                continue;
            }
            let idx = match self.occ_index.get(&occ.id) {
                Some(i) => *i,
                None => {
                    let i = self.occs.len();
                    self.occ_index.insert(occ.id.clone(), i);
                    self.occs.push(Interned { occ, unit });
                    self.used.push(false);
                    i
                }
            };
            ids.push(idx);
        }
        let ids: Rc<[usize]> = ids.into();
        self.cache.insert((unit, window), ids.clone());
        Some(ids)
    }

    fn mark(&mut self, occ: usize, on: bool) {
        self.used[occ] = on;
        if on {
            self.used_count += 1;
        } else {
            self.used_count -= 1;
        }
    }

    /// Bounds nested re-entry of one unit: each nested instance must cover
    /// strictly fewer occurrences than the one enclosing it.
    fn may_reenter(&self, unit: usize) -> bool {
        let mut same = self.stack.iter().filter(|(u, _)| *u == unit);
        match same.next() {
            None => true,
            Some(&(_, used_at_entry)) => {
                let depth = 1 + same.count();
                depth < self.occurrence_bound.saturating_sub(used_at_entry)
            }
        }
    }

    fn push_node(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn emit(&mut self, node: Node, k: &mut Cont<'_, 'a>) -> bool {
        let mark = self.nodes.len();
        let idx = self.push_node(node);
        let cont = k(self, idx);
        self.nodes.truncate(mark);
        cont
    }

    /// A (unit, interval) pair may not recur below itself.
    fn repeats_below(&self, unit: usize, interval: Interval, children: &[(usize, Option<usize>)]) -> bool {
        let mut stack: Vec<usize> = children.iter().filter_map(|(_, c)| *c).collect();
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if n.unit == unit && n.attrs.interval == interval {
                return true;
            }
            stack.extend(n.children.iter().filter_map(|(_, c)| *c));
        }
        false
    }

    fn expand(&mut self, unit: usize, window: Interval, anchor: Option<usize>, k: &mut Cont<'_, 'a>) -> bool {
        if !self.tick() {
            return false;
        }
        let kind = self.rules.kind(unit);
        if self.rules.queried[unit] {
            let Some(cands) = self.candidates(unit, window) else { return false };
            for &c in cands.iter() {
                if self.used[c] || anchor.is_some_and(|a| a != c) {
                    continue;
                }
                if !self.tick() {
                    return false;
                }
                self.mark(c, true);
                let cont = match kind {
                    NodeKind::Leaf => {
                        let node = Node {
                            unit,
                            occ: Some(c),
                            attrs: self.occs[c].occ.attrs.clone(),
                            applied: Applied::Leaf,
                            children: Vec::new(),
                        };
                        self.emit(node, k)
                    }
                    // Nothing ties the constituents of a detected unit to
                    // its own interval, so they are sought in the seed window.
                    NodeKind::And(p) => self.expand_pattern(unit, p, self.seed_window, Some(c), None, k),
                    NodeKind::Or(a) => self.expand_options(unit, a, self.seed_window, Some(c), None, k),
                };
                self.mark(c, false);
                if !cont {
                    return false;
                }
            }
            return true;
        }
        if !self.may_reenter(unit) {
            return true;
        }
        self.stack.push((unit, self.used_count));
        let cont = match kind {
            NodeKind::And(p) => self.expand_pattern(unit, p, window, None, anchor, k),
            NodeKind::Or(a) => self.expand_options(unit, a, window, None, anchor, k),
            // Undetectable leaves are rejected by validation.
            NodeKind::Leaf => true,
        };
        self.stack.pop();
        cont
    }

    fn expand_options(
        &mut self,
        unit: usize,
        alt: usize,
        window: Interval,
        own: Option<usize>,
        anchor: Option<usize>,
        k: &mut Cont<'_, 'a>,
    ) -> bool {
        let options = &self.rules.model.alternatives[alt].options;
        for (i, opt) in options.iter().enumerate() {
            let opt = self.rules.graph.node_index(opt).expect("validated");
            let cont = self.expand(opt, window, anchor, &mut |s: &mut Search<'a>, child: usize| {
                let attrs = match own {
                    Some(c) => s.occs[c].occ.attrs.clone(),
                    None => AttributeSet::new(s.nodes[child].attrs.interval),
                };
                let children = vec![(i, Some(child))];
                if s.repeats_below(unit, attrs.interval, &children) {
                    return true;
                }
                let node = Node { unit, occ: own, attrs, applied: Applied::Alternative(i), children };
                s.emit(node, k)
            });
            if !cont {
                return false;
            }
        }
        true
    }

    fn expand_pattern(
        &mut self,
        unit: usize,
        p: usize,
        window: Interval,
        own: Option<usize>,
        anchor: Option<usize>,
        k: &mut Cont<'_, 'a>,
    ) -> bool {
        let pat = &self.rules.patterns[p];
        let pin = match anchor {
            None => None,
            Some(a) => {
                let want = self.occs[a].unit;
                match pat.units.iter().position(|u| *u == want && self.rules.kind(*u) == NodeKind::Leaf) {
                    Some(i) => Some((i, a)),
                    None => return true,
                }
            }
        };
        let mut bound = vec![None; pat.units.len()];
        if !self.check_stage(p, 0, &bound, own.map(|c| &self.occs[c].occ.attrs)) {
            return true;
        }
        self.bind_child(unit, p, 0, &mut bound, window, own, pin, k)
    }

    fn attrs_of(&self, node: Option<usize>) -> Option<&AttributeSet> {
        node.map(|n| &self.nodes[n].attrs)
    }

    /// Checks the constraints that become decidable once `stage` children are
    /// bound. Constraints touching an unfilled child are skipped.
    fn check_stage(&self, p: usize, stage: usize, bound: &[Option<usize>], root: Option<&AttributeSet>) -> bool {
        let pat = &self.rules.patterns[p];
        pat.constraints.iter().filter(|c| c.stage == stage).all(|c| {
            let lookup = |role: &str| -> Option<&AttributeSet> {
                if role == SELF_ROLE {
                    root
                } else {
                    let i = pat.roles.iter().position(|r| r == role)?;
                    self.attrs_of(bound[i])
                }
            };
            if c.expr.roles().iter().any(|r| lookup(r).is_none()) {
                return true;
            }
            c.expr.eval_with(lookup).expect("roles resolved above")
        })
    }

    /// Window for child `i` implied by Allen constraints against bound siblings
    /// (and a detected root). `None` when the constraints leave no room.
    fn child_window(
        &self,
        p: usize,
        i: usize,
        bound: &[Option<usize>],
        root: Option<&AttributeSet>,
        window: Interval,
    ) -> Option<Interval> {
        let pat = &self.rules.patterns[p];
        let me = pat.roles[i].as_str();
        let other_iv = |role: &str| -> Option<Interval> {
            if role == SELF_ROLE {
                root.map(|a| a.interval)
            } else {
                let j = pat.roles.iter().position(|r| r == role)?;
                if j >= i {
                    return None;
                }
                self.attrs_of(bound[j]).map(|a| a.interval)
            }
        };
        let mut lo = window.start();
        let mut hi = window.end();
        for c in &pat.constraints {
            let ConstraintExpr::Allen { rel, a, b } = &c.expr else { continue };
            // Normalise to `me rel other`.
            let (rel, other, flipped) = if a == me && b != me {
                (*rel, b.as_str(), false)
            } else if b == me && a != me {
                (*rel, a.as_str(), true)
            } else {
                continue;
            };
            let Some(o) = other_iv(other) else { continue };
            let (os, oe) = (o.start(), o.end());
            match (rel, flipped) {
                (Relation::NoOverlapOrdered, false) => hi = hi.min(os),
                (Relation::NoOverlapOrdered, true) => lo = lo.max(oe),
                (Relation::SharesTime, _) => {}
                (r, f) => {
                    let r = if f { r.inverse() } else { r };
                    match r {
                        Relation::Before => hi = hi.min(os - 1),
                        Relation::Meets => hi = hi.min(os),
                        Relation::After => lo = lo.max(oe + 1),
                        Relation::MetBy => lo = lo.max(oe),
                        Relation::During | Relation::Starts | Relation::Finishes | Relation::Equal => {
                            lo = lo.max(os);
                            hi = hi.min(oe);
                        }
                        Relation::Overlaps => hi = hi.min(oe - 1),
                        Relation::OverlappedBy => lo = lo.max(os + 1),
                        Relation::StartedBy => lo = lo.max(os),
                        Relation::FinishedBy => hi = hi.min(oe),
                        _ => {}
                    }
                }
            }
        }
        Interval::new(lo, hi).ok()
    }

    #[allow(clippy::too_many_arguments)]
    fn bind_child(
        &mut self,
        unit: usize,
        p: usize,
        i: usize,
        bound: &mut Vec<Option<usize>>,
        window: Interval,
        own: Option<usize>,
        pin: Option<(usize, usize)>,
        k: &mut Cont<'_, 'a>,
    ) -> bool {
        let pat = &self.rules.patterns[p];
        let n = pat.units.len();
        if i == n {
            return self.finish_pattern(unit, p, bound, own, k);
        }
        let child_unit = pat.units[i];
        let root = own.map(|c| self.occs[c].occ.attrs.clone());
        let child_anchor = pin.filter(|(j, _)| *j == i).map(|(_, a)| a);
        let mut found = false;
        if let Some(w) = self.child_window(p, i, bound, root.as_ref(), window) {
            let cont = self.expand(child_unit, w, child_anchor, &mut |s: &mut Search<'a>, node: usize| {
                found = true;
                bound[i] = Some(node);
                let ok = s.check_stage(p, i + 1, bound, root.as_ref());
                let cont = !ok || s.bind_child(unit, p, i + 1, bound, window, own, pin, k);
                bound[i] = None;
                cont
            });
            if !cont {
                return false;
            }
        }
        if !found && self.emit_partial && child_anchor.is_none() && !self.exhausted {
            bound[i] = None;
            if self.check_stage(p, i + 1, bound, root.as_ref()) {
                return self.bind_child(unit, p, i + 1, bound, window, own, pin, k);
            }
        }
        true
    }

    fn finish_pattern(
        &mut self,
        unit: usize,
        p: usize,
        bound: &[Option<usize>],
        own: Option<usize>,
        k: &mut Cont<'_, 'a>,
    ) -> bool {
        let attrs = match own {
            Some(c) => self.occs[c].occ.attrs.clone(),
            None => {
                let ivs: Vec<Interval> = bound.iter().flatten().map(|n| self.nodes[*n].attrs.interval).collect();
                match infer_parent_interval(&ivs) {
                    Ok(h) => AttributeSet::new(h),
                    Err(_) => return true,
                }
            }
        };
        let n = bound.len();
        if !self.check_stage(p, n, bound, Some(&attrs)) {
            return true;
        }
        let children: Vec<(usize, Option<usize>)> = bound.iter().copied().enumerate().collect();
        if self.repeats_below(unit, attrs.interval, &children) {
            return true;
        }
        let node = Node { unit, occ: own, attrs, applied: Applied::Pattern, children };
        self.emit(node, k)
    }

    fn build_solution(&self, comps: &[usize]) -> SolutionGraph {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut partial = false;
        let mut inferred = 0usize;
        for &root in comps {
            let mut stack = vec![(root, None::<(String, String)>)];
            while let Some((i, parent)) = stack.pop() {
                let n = &self.nodes[i];
                let (id, provenance) = match n.occ {
                    Some(c) => (self.occs[c].occ.id.clone(), self.occs[c].occ.provenance),
                    None => {
                        inferred += 1;
                        (format!("#{inferred}"), Provenance::Inferred)
                    }
                };
                if let Some((from, role)) = parent {
                    edges.push(SolutionEdge { from, role, to: id.clone() });
                }
                nodes.push(SolutionNode {
                    id: id.clone(),
                    unit: self.rules.unit_name(n.unit).to_string(),
                    start: n.attrs.interval.start(),
                    end: n.attrs.interval.end(),
                    provenance,
                });
                for (slot, child) in n.children.iter().rev() {
                    let role = match n.applied {
                        Applied::Alternative(k) => option_role(k),
                        _ => {
                            let NodeKind::And(p) = self.rules.kind(n.unit) else { unreachable!() };
                            self.rules.patterns[p].roles[*slot].clone()
                        }
                    };
                    match child {
                        Some(c) => stack.push((*c, Some((id.clone(), role)))),
                        None => partial = true,
                    }
                }
            }
        }
        SolutionGraph { score: nodes.len(), truncated: false, nodes, edges, partial }
    }

    fn forests(&mut self, seeds: &[Seed], comps: &mut Vec<usize>, out: &mut Vec<SolutionGraph>) -> bool {
        let Some(first) = seeds.iter().position(|s| !self.used[s.occ]) else {
            out.push(self.build_solution(comps));
            if out.len() >= self.budget.max_solutions {
                self.exhausted = true;
                return false;
            }
            return true;
        };
        let target = seeds[first].occ;
        for r in first..seeds.len() {
            let seed = seeds[r];
            if self.used[seed.occ] {
                continue;
            }
            let outer = std::mem::replace(&mut self.seed_window, seed.window);
            let cont = self.expand(seed.unit, seed.window, Some(seed.occ), &mut |s: &mut Search<'a>, node| {
                if !s.used[target] {
                    return true;
                }
                comps.push(node);
                let cont = s.forests(seeds, comps, out);
                comps.pop();
                cont
            });
            self.seed_window = outer;
            if !cont {
                return false;
            }
        }
        true
    }
}

pub fn parse(req: &ParseRequest<'_>) -> Result<ParseOutcome, ParseError> {
    let rules = Rules::new(req.model)?;
    let mut search = Search {
        rules: &rules,
        detector: req.detector,
        occs: Vec::new(),
        occ_index: HashMap::new(),
        used: Vec::new(),
        used_count: 0,
        cache: HashMap::new(),
        nodes: Vec::new(),
        stack: Vec::new(),
        seed_window: Interval::unbounded(),
        occurrence_bound: req.detector.occurrence_bound(),
        expansions: 0,
        budget: req.budget,
        exhausted: false,
        emit_partial: req.emit_partial,
        error: None,
    };

    let mut seeds = Vec::new();
    for root in &req.roots {
        let unit = rules.graph.node_index(&root.unit).ok_or_else(|| ParseError::UnknownRoot(root.unit.clone()))?;
        let anchors = rules.anchor_units(unit);
        if anchors.is_empty() {
            return Err(ParseError::UnanchoredRoot(root.unit.clone()));
        }
        for a in anchors {
            let cands = search.candidates(a, root.window);
            if let Some(e) = search.error.take() {
                return Err(e.into());
            }
            for c in cands.into_iter().flat_map(|c| c.to_vec()) {
                seeds.push(Seed { unit, occ: c, window: root.window });
            }
        }
    }
    seeds.sort_by(|x, y| {
        search.occs[x.occ].occ.sort_key().cmp(&search.occs[y.occ].occ.sort_key()).then(x.unit.cmp(&y.unit))
    });
    seeds.dedup_by(|x, y| x.unit == y.unit && x.occ == y.occ);

    let mut solutions = Vec::new();
    if !seeds.is_empty() {
        let mut comps = Vec::new();
        search.forests(&seeds, &mut comps, &mut solutions);
    }
    if let Some(e) = search.error.take() {
        return Err(e.into());
    }
    let truncated = search.exhausted;
    for s in &mut solutions {
        s.truncated = truncated;
    }
    Ok(ParseOutcome { solutions, truncated, expansions: search.expansions })
}

/// Resolves root names against the model. A trailing `*` matches every unit
/// with that prefix, in declaration order.
pub fn expand_roots(model: &Model, names: &[String]) -> Result<Vec<RootSpec>, ParseError> {
    let mut out = Vec::new();
    for name in names {
        match name.strip_suffix('*') {
            Some(prefix) => {
                let before = out.len();
                out.extend(model.units.iter().filter(|u| u.starts_with(prefix)).map(RootSpec::new));
                if out.len() == before {
                    return Err(ParseError::UnknownRoot(name.clone()));
                }
            }
            None if model.has_unit(name) => out.push(RootSpec::new(name.clone())),
            None => return Err(ParseError::UnknownRoot(name.clone())),
        }
    }
    Ok(out)
}

fn rank_key(s: &SolutionGraph) -> (i64, Vec<&str>) {
    (s.hull().map_or(i64::MAX, |h| h.start()), s.occurrence_ids())
}

/// Larger solutions first; ties by earlier hull start, then by the
/// occurrence-id sequence.
pub fn rank_solutions(mut solutions: Vec<SolutionGraph>) -> Vec<SolutionGraph> {
    solutions.sort_by(|a, b| match b.score.cmp(&a.score) {
        Ordering::Equal => rank_key(a).cmp(&rank_key(b)),
        o => o,
    });
    solutions
}

/// One annotation row per solution node, provenance preserved.
pub fn solution_to_annotation(g: &SolutionGraph) -> AnnotationDoc {
    let occurrences: Vec<Occurrence> = g
        .nodes
        .iter()
        .map(|n| Occurrence {
            id: n.id.clone(),
            unit: n.unit.clone(),
            attrs: AttributeSet::new(n.interval()),
            provenance: n.provenance,
        })
        .collect();
    let span = g.hull().unwrap_or_else(|| Interval::new(0, 0).expect("point interval"));
    AnnotationDoc::new(span, occurrences).expect("solution node ids are unique and inside their hull")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub solutions: Vec<SolutionGraph>,
}

impl SolutionFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solutions serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Re-checks every instantiated pattern and alternative of a solution against
/// the model, independently of the search: constraints must hold on the
/// node's bound roles, inferred pattern intervals must be the hull of their
/// children, and alternatives must pass their option's interval through.
/// Flags of detected nodes are looked up in `annotation` by id.
pub fn recheck_solution(model: &Model, g: &SolutionGraph, annotation: &AnnotationDoc) -> Vec<String> {
    let flags: BTreeMap<&str, &BTreeMap<String, FlagValue>> =
        annotation.occurrences.iter().map(|o| (o.id.as_str(), &o.attrs.flags)).collect();
    let attrs = |n: &SolutionNode| AttributeSet {
        interval: n.interval(),
        flags: flags.get(n.id.as_str()).map(|f| (*f).clone()).unwrap_or_default(),
    };
    let mut problems = Vec::new();
    for n in &g.nodes {
        let kids: Vec<(&str, &SolutionNode)> = g.children(&n.id).collect();
        if let Some(p) = model.pattern(&n.unit) {
            let mut binding = BTreeMap::new();
            binding.insert(SELF_ROLE.to_string(), attrs(n));
            for (role, child) in &kids {
                if p.role_unit(role) != Some(child.unit.as_str()) {
                    problems.push(format!("{}: role {role} bound to unit {}", n.id, child.unit));
                }
                binding.insert(role.to_string(), attrs(child));
            }
            for c in &p.constraints {
                if c.roles().iter().any(|r| !binding.contains_key(*r)) {
                    if !g.partial {
                        problems.push(format!("{}: constraint over unbound role", n.id));
                    }
                    continue;
                }
                if !c.eval_with(|r| binding.get(r)).unwrap_or(false) {
                    problems.push(format!("{}: constraint {c:?} violated", n.id));
                }
            }
            if n.provenance == Provenance::Inferred {
                let ivs: Vec<Interval> = kids.iter().map(|(_, c)| c.interval()).collect();
                if infer_parent_interval(&ivs).ok() != Some(n.interval()) {
                    problems.push(format!("{}: interval is not the hull of its children", n.id));
                }
            }
        } else if model.alternative(&n.unit).is_some() {
            if kids.len() != 1 {
                problems.push(format!("{}: alternative with {} children", n.id, kids.len()));
            } else if n.provenance == Provenance::Inferred && kids[0].1.interval() != n.interval() {
                problems.push(format!("{}: alternative interval differs from its option", n.id));
            }
        } else if n.provenance == Provenance::Inferred {
            problems.push(format!("{}: inferred leaf", n.id));
        }
    }
    problems
}

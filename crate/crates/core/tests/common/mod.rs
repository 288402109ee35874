//! Brute-force reference enumerator shared by the integration tests.
//!
//! Trees are built bottom-up to a fixpoint over every occurrence of the
//! annotation, filtered by constraints and the rule that a (unit, interval)
//! pair never recurs below itself. Forests are then assembled from anchored
//! trees exactly as the parser's contract describes, and everything is
//! compared as canonical strings.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use signgram::depgram::DepGrammar;
use signgram::detector::{AnnotationDoc, Occurrence};
use signgram::parser::{SolutionGraph, SolutionNode};
use signgram::temporal::{check_constraints, AttributeSet, Interval, SELF_ROLE};
use signgram::synth::{derive_seed, generate_grammar, sample_phrase, Bounds, GenParams, SynthError};
use signgram::Model;

#[derive(Debug, Clone)]
pub struct Tree {
    pub unit: String,
    pub occ: Option<String>,
    pub attrs: AttributeSet,
    pub children: Vec<(String, Tree)>,
    pub used: BTreeSet<String>,
}

impl Tree {
    pub fn canon(&self) -> String {
        let label = match &self.occ {
            Some(id) => format!("{}#{}", self.unit, id),
            None => format!("{}{}", self.unit, self.attrs.interval),
        };
        let mut kids: Vec<String> = self.children.iter().map(|(r, c)| format!("{r}={}", c.canon())).collect();
        kids.sort();
        format!("{label}({})", kids.join(","))
    }

    fn has_below(&self, unit: &str, interval: Interval) -> bool {
        self.children
            .iter()
            .any(|(_, c)| (c.unit == unit && c.attrs.interval == interval) || c.has_below(unit, interval))
    }
}

fn is_queried(model: &Model, unit: &str) -> bool {
    model.is_detectable(unit) || model.is_external(unit)
}

fn is_leaf(model: &Model, unit: &str) -> bool {
    model.pattern(unit).is_none() && model.alternative(unit).is_none()
}

/// Every combination of child trees with pairwise disjoint occurrences.
fn products<'t>(
    choices: &[Vec<&'t Tree>],
    taken: &BTreeSet<String>,
    acc: &mut Vec<&'t Tree>,
    out: &mut Vec<Vec<&'t Tree>>,
) {
    let i = acc.len();
    if i == choices.len() {
        out.push(acc.clone());
        return;
    }
    for t in &choices[i] {
        if t.used.iter().any(|o| taken.contains(o)) {
            continue;
        }
        let mut next = taken.clone();
        next.extend(t.used.iter().cloned());
        acc.push(t);
        products(choices, &next, acc, out);
        acc.pop();
    }
}

pub struct Oracle<'m> {
    model: &'m Model,
    occs: Vec<Occurrence>,
    pub trees: BTreeMap<String, BTreeMap<String, Tree>>,
}

impl<'m> Oracle<'m> {
    pub fn new(model: &'m Model, doc: &AnnotationDoc) -> Self {
        let occs: Vec<Occurrence> = doc.occurrences.iter().filter(|o| is_queried(model, &o.unit)).cloned().collect();
        let mut me = Oracle { model, occs, trees: BTreeMap::new() };
        me.saturate();
        me
    }

    fn occurrences_of(&self, unit: &str) -> Vec<&Occurrence> {
        self.occs.iter().filter(|o| o.unit == unit).collect()
    }

    fn derive(&self, unit: &str) -> Vec<Tree> {
        let model = self.model;
        let mut out = Vec::new();
        let owners: Vec<Option<&Occurrence>> = if is_queried(model, unit) {
            self.occurrences_of(unit).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        for own in owners {
            let base: BTreeSet<String> = own.iter().map(|o| o.id.clone()).collect();
            if is_leaf(model, unit) {
                let o = own.expect("leaves are queried");
                out.push(Tree {
                    unit: unit.into(),
                    occ: Some(o.id.clone()),
                    attrs: o.attrs.clone(),
                    children: vec![],
                    used: base,
                });
            } else if let Some(p) = model.pattern(unit) {
                let empty = BTreeMap::new();
                let choices: Vec<Vec<&Tree>> =
                    p.children.iter().map(|c| self.trees.get(&c.unit).unwrap_or(&empty).values().collect()).collect();
                let mut combos = Vec::new();
                products(&choices, &base, &mut Vec::new(), &mut combos);
                for combo in combos {
                    let attrs = match own {
                        Some(o) => o.attrs.clone(),
                        None => {
                            let iv = combo.iter().map(|t| t.attrs.interval).reduce(|a, b| a.hull(&b));
                            match iv {
                                Some(iv) => AttributeSet::new(iv),
                                None => continue,
                            }
                        }
                    };
                    let mut binding = BTreeMap::new();
                    binding.insert(SELF_ROLE.to_string(), attrs.clone());
                    for (c, t) in p.children.iter().zip(&combo) {
                        binding.insert(c.role.clone(), t.attrs.clone());
                    }
                    if !check_constraints(&p.constraints, &binding).unwrap() {
                        continue;
                    }
                    let mut used = base.clone();
                    for t in &combo {
                        used.extend(t.used.iter().cloned());
                    }
                    let tree = Tree {
                        unit: unit.into(),
                        occ: own.map(|o| o.id.clone()),
                        attrs,
                        children: p.children.iter().map(|c| c.role.clone()).zip(combo.into_iter().cloned()).collect(),
                        used,
                    };
                    if !tree.has_below(unit, tree.attrs.interval) {
                        out.push(tree);
                    }
                }
            } else if let Some(a) = model.alternative(unit) {
                for (k, opt) in a.options.iter().enumerate() {
                    for t in self.trees.get(opt).map(|m| m.values().collect::<Vec<_>>()).unwrap_or_default() {
                        if t.used.iter().any(|o| base.contains(o)) {
                            continue;
                        }
                        let attrs = own.map_or_else(|| AttributeSet::new(t.attrs.interval), |o| o.attrs.clone());
                        let mut used = base.clone();
                        used.extend(t.used.iter().cloned());
                        let tree = Tree {
                            unit: unit.into(),
                            occ: own.map(|o| o.id.clone()),
                            attrs,
                            children: vec![(format!("option[{k}]"), t.clone())],
                            used,
                        };
                        if !tree.has_below(unit, tree.attrs.interval) {
                            out.push(tree);
                        }
                    }
                }
            }
        }
        out
    }

    fn saturate(&mut self) {
        loop {
            let mut grew = false;
            for unit in self.model.units.clone() {
                for t in self.derive(&unit) {
                    let slot = self.trees.entry(unit.clone()).or_default();
                    if !slot.contains_key(&t.canon()) {
                        slot.insert(t.canon(), t);
                        grew = true;
                    }
                }
            }
            if !grew {
                return;
            }
        }
    }

    /// Occurrence a tree of a root unit is pinned to, if any.
    fn anchor_of(&self, t: &Tree) -> Option<String> {
        if is_queried(self.model, &t.unit) {
            return t.occ.clone();
        }
        if self.model.alternative(&t.unit).is_some() {
            return self.anchor_of(&t.children[0].1);
        }
        let p = self.model.pattern(&t.unit)?;
        let first_leaf = p.children.iter().position(|c| is_queried(self.model, &c.unit) && is_leaf(self.model, &c.unit))?;
        let want = &p.children[first_leaf].unit;
        // The pinned slot is the first leaf child of the anchor's unit.
        let slot = p.children.iter().position(|c| &c.unit == want && is_leaf(self.model, &c.unit))?;
        t.children[slot].1.occ.clone()
    }

    fn anchor_units(&self, root: &str, seen: &mut BTreeSet<String>, out: &mut BTreeSet<String>) {
        if !seen.insert(root.to_string()) {
            return;
        }
        if is_queried(self.model, root) {
            out.insert(root.to_string());
        } else if let Some(a) = self.model.alternative(root) {
            for o in &a.options {
                self.anchor_units(o, seen, out);
            }
        } else if let Some(p) = self.model.pattern(root) {
            if let Some(c) = p.children.iter().find(|c| is_queried(self.model, &c.unit) && is_leaf(self.model, &c.unit)) {
                out.insert(c.unit.clone());
            }
        }
    }

    /// All occurrence-disjoint sets of anchored root trees covering every
    /// seed occurrence.
    pub fn forests(&self, roots: &[String]) -> BTreeSet<String> {
        let mut seeds: BTreeSet<String> = BTreeSet::new();
        let mut candidates: Vec<&Tree> = Vec::new();
        for r in roots {
            let mut units = BTreeSet::new();
            self.anchor_units(r, &mut BTreeSet::new(), &mut units);
            let seed_ids: BTreeSet<String> =
                self.occs.iter().filter(|o| units.contains(&o.unit)).map(|o| o.id.clone()).collect();
            for t in self.trees.get(r).map(|m| m.values().collect::<Vec<_>>()).unwrap_or_default() {
                if self.anchor_of(t).is_some_and(|a| seed_ids.contains(&a)) {
                    candidates.push(t);
                }
            }
            seeds.extend(seed_ids);
        }
        let mut out = BTreeSet::new();
        if seeds.is_empty() {
            return out;
        }
        let seeds: Vec<String> = seeds.into_iter().collect();
        self.cover(&seeds, &candidates, &BTreeSet::new(), &mut Vec::new(), &mut out);
        out
    }

    fn cover(
        &self,
        seeds: &[String],
        candidates: &[&Tree],
        used: &BTreeSet<String>,
        chosen: &mut Vec<String>,
        out: &mut BTreeSet<String>,
    ) {
        let Some(first) = seeds.iter().find(|s| !used.contains(*s)) else {
            let mut parts = chosen.clone();
            parts.sort();
            out.insert(parts.join(" | "));
            return;
        };
        for t in candidates {
            if !t.used.contains(first) || t.used.iter().any(|o| used.contains(o)) {
                continue;
            }
            let mut next = used.clone();
            next.extend(t.used.iter().cloned());
            chosen.push(t.canon());
            self.cover(seeds, candidates, &next, chosen, out);
            chosen.pop();
        }
    }
}

/// Canonical form of a parser solution, comparable with oracle forests.
pub fn canon_solution(g: &SolutionGraph) -> String {
    fn canon(g: &SolutionGraph, n: &SolutionNode) -> String {
        let label = match n.provenance {
            signgram::detector::Provenance::Inferred => format!("{}{}", n.unit, n.interval()),
            _ => format!("{}#{}", n.unit, n.id),
        };
        let mut kids: Vec<String> = g.children(&n.id).map(|(r, c)| format!("{r}={}", canon(g, c))).collect();
        kids.sort();
        format!("{label}({})", kids.join(","))
    }
    let mut parts: Vec<String> = g.roots().into_iter().map(|r| canon(g, r)).collect();
    parts.sort();
    parts.join(" | ")
}

/// A generated grammar with up to four categories and a phrase of at most six
/// heads. Seeds that cannot produce such a phrase are redrawn.
pub fn small_case(seed: u64) -> (DepGrammar, AnnotationDoc) {
    let mut s = seed;
    loop {
        let n = 1 + (s % 4) as usize;
        let params = GenParams { n_categories: n, phrase_size: Bounds(1, 6), seed: s, ..Default::default() };
        let g = generate_grammar(&params).unwrap();
        match sample_phrase(&g, "g", &params, derive_seed(s, 1)) {
            Ok(p) => return (g, p.annotation),
            Err(SynthError::NonTerminating(_) | SynthError::SizeUnreachable(_)) => s = derive_seed(s, 0),
            Err(e) => panic!("{e}"),
        }
    }
}

pub fn all_categories(g: &DepGrammar) -> Vec<String> {
    g.categories.iter().map(|c| format!("cat:{}", c.name)).collect()
}

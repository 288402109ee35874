//! Extended Hays dependency grammars over manual (MG) and non-manual (NMG)
//! categories, and their compilation into constrained AND/OR rules.
//!
//! Each category `C` becomes an alternative `cat:C` over its rules; rule `k`
//! becomes a pattern `rule:C:k` with one detectable `head` child and one
//! `cat:D` child per dependent. Roles are `dep[-n]..dep[-1]` for the left
//! dependents and `dep[+1]..dep[+m]` for the right ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Alternative, Child, Model, Pattern};
use crate::temporal::{ConstraintExpr, Relation};

pub const HEAD_ROLE: &str = "head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "MG")]
    Manual,
    #[serde(rename = "NMG")]
    NonManual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub channel: Channel,
}

/// `X(left.., *, right..)`; the head category is the key it is filed under.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepRule {
    #[serde(default)]
    pub left: Vec<String>,
    #[serde(default)]
    pub right: Vec<String>,
}

impl DepRule {
    pub fn new(left: &[&str], right: &[&str]) -> Self {
        Self {
            left: left.iter().map(|s| s.to_string()).collect(),
            right: right.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_dependents(&self) -> usize {
        self.left.len() + self.right.len()
    }

    /// Dependents with their role names, left to right.
    pub fn dependents(&self) -> impl Iterator<Item = (String, &str)> {
        let n = self.left.len();
        let left = self.left.iter().enumerate().map(move |(i, c)| (dep_role(-((n - i) as i64)), c.as_str()));
        let right = self.right.iter().enumerate().map(|(j, c)| (dep_role(j as i64 + 1), c.as_str()));
        left.chain(right)
    }
}

/// `dep[-2]`, `dep[+1]`, ...
pub fn dep_role(position: i64) -> String {
    if position < 0 {
        format!("dep[{position}]")
    } else {
        format!("dep[+{position}]")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepGrammar {
    pub categories: Vec<Category>,
    #[serde(default)]
    pub rules: BTreeMap<String, Vec<DepRule>>,
    #[serde(default)]
    pub terminals: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum DepGrammarError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: at `{field}`: {message}")]
    Schema { path: String, field: String, message: String },
    #[error("duplicate category {0}")]
    DuplicateCategory(String),
    #[error("category {from} references undeclared category {to}")]
    DanglingCategory { from: String, to: String },
    #[error("non-manual category {0} has a rule not of the form X(Y)")]
    NonManualShape(String),
}

pub fn category_unit(name: &str) -> String {
    format!("cat:{name}")
}

pub fn rule_unit(name: &str, k: usize) -> String {
    format!("rule:{name}:{k}")
}

pub fn default_terminal(name: &str) -> String {
    format!("term:{name}")
}

impl DepGrammar {
    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn terminal(&self, name: &str) -> String {
        self.terminals.get(name).cloned().unwrap_or_else(|| default_terminal(name))
    }

    pub fn rules_of(&self, name: &str) -> &[DepRule] {
        self.rules.get(name).map_or(&[], Vec::as_slice)
    }

    /// Rules of a category as compiled: terminal-only categories get the
    /// single dependent-free rule.
    pub fn effective_rules(&self, name: &str) -> Vec<DepRule> {
        match self.rules.get(name) {
            Some(r) if !r.is_empty() => r.clone(),
            _ => vec![DepRule::default()],
        }
    }

    pub fn check(&self) -> Result<(), DepGrammarError> {
        let mut names = BTreeSet::new();
        for c in &self.categories {
            if !names.insert(c.name.as_str()) {
                return Err(DepGrammarError::DuplicateCategory(c.name.clone()));
            }
        }
        for (head, rules) in &self.rules {
            let cat = self.category(head).ok_or_else(|| DepGrammarError::DanglingCategory {
                from: head.clone(),
                to: head.clone(),
            })?;
            for r in rules {
                if cat.channel == Channel::NonManual && !(r.left.is_empty() && r.right.len() == 1) {
                    return Err(DepGrammarError::NonManualShape(head.clone()));
                }
                for (_, d) in r.dependents() {
                    if !names.contains(d) {
                        return Err(DepGrammarError::DanglingCategory { from: head.clone(), to: d.to_string() });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<DepGrammar, DepGrammarError> {
        Self::parse(text, "<input>")
    }

    fn parse(text: &str, path: &str) -> Result<DepGrammar, DepGrammarError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| DepGrammarError::Schema {
            path: path.to_string(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serializes")
    }
}

pub fn load_dep_grammar(path: impl AsRef<Path>) -> Result<DepGrammar, DepGrammarError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DepGrammarError::Io { path: path.display().to_string(), source })?;
    DepGrammar::parse(&text, &path.display().to_string())
}

pub fn serialize_dep_grammar(g: &DepGrammar, path: impl AsRef<Path>) -> Result<(), DepGrammarError> {
    let path = path.as_ref();
    std::fs::write(path, g.to_json() + "\n")
        .map_err(|source| DepGrammarError::Io { path: path.display().to_string(), source })
}

pub fn compile_dep_grammar(g: &DepGrammar) -> Result<Model, DepGrammarError> {
    g.check()?;
    let mut model = Model::default();
    let mut terminals = Vec::new();
    for cat in &g.categories {
        let cat_unit = category_unit(&cat.name);
        let term = g.terminal(&cat.name);
        model.units.push(cat_unit.clone());
        let rules = g.effective_rules(&cat.name);
        let mut options = Vec::with_capacity(rules.len());
        for (k, rule) in rules.iter().enumerate() {
            let unit = rule_unit(&cat.name, k);
            model.units.push(unit.clone());
            options.push(unit.clone());
            model.patterns.push(compile_rule(g, cat, &unit, &term, rule));
        }
        model.alternatives.push(Alternative { root: cat_unit, options });
        if !terminals.contains(&term) {
            terminals.push(term);
        }
    }
    for t in terminals {
        model.units.push(t.clone());
        model.detectable.push(t);
    }
    Ok(model)
}

fn compile_rule(g: &DepGrammar, cat: &Category, unit: &str, term: &str, rule: &DepRule) -> Pattern {
    let mut children = vec![Child::new(HEAD_ROLE, term)];
    let mut constraints = Vec::new();
    let is_manual = |name: &str| g.category(name).map(|c| c.channel) == Some(Channel::Manual);

    match cat.channel {
        Channel::Manual => {
            // Manual dependents sit in Hays order around the head; non-manual
            // ones only need to share time with it.
            let mut sequence = Vec::new();
            let n_left = rule.left.len();
            for (i, (role, dep)) in rule.dependents().enumerate() {
                children.push(Child::new(role.clone(), category_unit(dep)));
                if i == n_left {
                    sequence.push(HEAD_ROLE.to_string());
                }
                if is_manual(dep) {
                    sequence.push(role);
                } else {
                    constraints.push(ConstraintExpr::allen(Relation::SharesTime, role, HEAD_ROLE));
                }
            }
            if rule.right.is_empty() {
                sequence.push(HEAD_ROLE.to_string());
            }
            for pair in sequence.windows(2) {
                constraints.push(ConstraintExpr::allen(Relation::NoOverlapOrdered, &pair[0], &pair[1]));
            }
        }
        Channel::NonManual => {
            for (role, dep) in rule.dependents() {
                children.push(Child::new(role.clone(), category_unit(dep)));
                constraints.push(ConstraintExpr::allen(Relation::SharesTime, role, HEAD_ROLE));
            }
        }
    }
    Pattern { root: unit.to_string(), children, constraints }
}

impl fmt::Display for DepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = self.left.iter().map(String::as_str).collect();
        parts.push("*");
        parts.extend(self.right.iter().map(String::as_str));
        write!(f, "({})", parts.join(","))
    }
}

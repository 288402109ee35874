//! Grammar models: units, patterns (AND rules), alternatives (OR rules),
//! validation, and the implicit AND/OR graph the parser walks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::temporal::{ConstraintExpr, FlagValue, SELF_ROLE};

pub type UnitId = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Child {
    pub role: String,
    pub unit: UnitId,
}

impl Child {
    pub fn new(role: impl Into<String>, unit: impl Into<String>) -> Self {
        Self { role: role.into(), unit: unit.into() }
    }
}

/// A set-valued production: the root unit is composed of role-named children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub root: UnitId,
    pub children: Vec<Child>,
    #[serde(default)]
    pub constraints: Vec<ConstraintExpr>,
}

impl Pattern {
    pub fn role_unit(&self, role: &str) -> Option<&str> {
        self.children.iter().find(|c| c.role == role).map(|c| c.unit.as_str())
    }
}

/// Interchangeable realizations of one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternative {
    pub root: UnitId,
    pub options: Vec<UnitId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrKind {
    TimeInterval,
    Boolean,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrDecl {
    pub name: String,
    pub kind: AttrKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub units: Vec<UnitId>,
    #[serde(default)]
    pub patterns: Vec<Pattern>,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
    #[serde(default)]
    pub detectable: Vec<UnitId>,
    #[serde(default)]
    pub external: Vec<UnitId>,
    #[serde(default, rename = "attributes")]
    pub attribute_schema: Vec<AttrDecl>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("model is invalid:\n{0}")]
    Invalid(ValidationReport),
}

impl Model {
    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ModelError::Format {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Model::from_json(&text).map_err(|e| match e {
            ModelError::Format { path: field, message } => ModelError::Format {
                path: path.display().to_string(),
                message: format!("at `{field}`: {message}"),
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn pattern(&self, root: &str) -> Option<&Pattern> {
        self.patterns.iter().find(|p| p.root == root)
    }

    pub fn alternative(&self, root: &str) -> Option<&Alternative> {
        self.alternatives.iter().find(|a| a.root == root)
    }

    pub fn is_detectable(&self, unit: &str) -> bool {
        self.detectable.iter().any(|u| u == unit)
    }

    pub fn is_external(&self, unit: &str) -> bool {
        self.external.iter().any(|u| u == unit)
    }

    pub fn has_unit(&self, unit: &str) -> bool {
        self.units.iter().any(|u| u == unit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyUnitName,
    DuplicateUnit(UnitId),
    DuplicateRuleRoot(UnitId),
    UndeclaredUnit { rule: UnitId, unit: UnitId },
    DuplicateRole { pattern: UnitId, role: String },
    ReservedRole { pattern: UnitId },
    EmptyPattern(UnitId),
    EmptyAlternative(UnitId),
    UnknownRole { pattern: UnitId, role: String },
    UnknownAttribute { pattern: UnitId, attr: String },
    AttributeKindMismatch { pattern: UnitId, attr: String },
    UndeclaredDetectable(UnitId),
    Uninstantiable(UnitId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptyUnitName => write!(f, "empty unit name"),
            DuplicateUnit(u) => write!(f, "duplicate unit {u}"),
            DuplicateRuleRoot(u) => write!(f, "duplicate rule root {u}"),
            UndeclaredUnit { rule, unit } => write!(f, "undeclared unit {unit} in rule {rule}"),
            DuplicateRole { pattern, role } => write!(f, "duplicate role {role} in pattern {pattern}"),
            ReservedRole { pattern } => write!(f, "pattern {pattern} uses reserved role name self"),
            EmptyPattern(u) => write!(f, "empty pattern {u}"),
            EmptyAlternative(u) => write!(f, "empty alternative {u}"),
            UnknownRole { pattern, role } => write!(f, "unknown role {role} in pattern {pattern}"),
            UnknownAttribute { pattern, attr } => write!(f, "unknown attribute {attr} in pattern {pattern}"),
            AttributeKindMismatch { pattern, attr } => {
                write!(f, "literal kind does not match attribute {attr} in pattern {pattern}")
            }
            UndeclaredDetectable(u) => write!(f, "detectable or external unit {u} is not declared"),
            Uninstantiable(u) => write!(f, "unit {u} roots no rule and is neither detectable nor external"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "valid: 0 violations");
        }
        writeln!(f, "invalid: {} violation(s)", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

pub fn validate_model(model: &Model) -> ValidationReport {
    let mut out = Vec::new();
    let mut declared = BTreeSet::new();
    for u in &model.units {
        if u.is_empty() {
            out.push(Violation::EmptyUnitName);
        } else if !declared.insert(u.as_str()) {
            out.push(Violation::DuplicateUnit(u.clone()));
        }
    }

    let mut roots: BTreeMap<&str, usize> = BTreeMap::new();
    for root in model.patterns.iter().map(|p| &p.root).chain(model.alternatives.iter().map(|a| &a.root)) {
        *roots.entry(root.as_str()).or_default() += 1;
    }
    for (root, n) in &roots {
        if *n > 1 {
            out.push(Violation::DuplicateRuleRoot(root.to_string()));
        }
        if !declared.contains(root) {
            out.push(Violation::UndeclaredUnit { rule: root.to_string(), unit: root.to_string() });
        }
    }

    let schema: HashMap<&str, AttrKind> =
        model.attribute_schema.iter().map(|d| (d.name.as_str(), d.kind)).collect();

    for p in &model.patterns {
        if p.children.is_empty() {
            out.push(Violation::EmptyPattern(p.root.clone()));
        }
        let mut roles = BTreeSet::new();
        for c in &p.children {
            if c.role == SELF_ROLE {
                out.push(Violation::ReservedRole { pattern: p.root.clone() });
            } else if !roles.insert(c.role.as_str()) {
                out.push(Violation::DuplicateRole { pattern: p.root.clone(), role: c.role.clone() });
            }
            if !declared.contains(c.unit.as_str()) {
                out.push(Violation::UndeclaredUnit { rule: p.root.clone(), unit: c.unit.clone() });
            }
        }
        for con in &p.constraints {
            for role in con.roles() {
                if role != SELF_ROLE && !roles.contains(role) {
                    out.push(Violation::UnknownRole { pattern: p.root.clone(), role: role.to_string() });
                }
            }
            if let ConstraintExpr::Attr { attr, value, .. } = con {
                match schema.get(attr.as_str()) {
                    None => out.push(Violation::UnknownAttribute { pattern: p.root.clone(), attr: attr.clone() }),
                    Some(kind) => {
                        let ok = matches!(
                            (kind, value),
                            (AttrKind::Boolean, FlagValue::Bool(_)) | (AttrKind::Symbol, FlagValue::Symbol(_))
                        );
                        if !ok {
                            out.push(Violation::AttributeKindMismatch {
                                pattern: p.root.clone(),
                                attr: attr.clone(),
                            });
                        }
                    }
                }
            }
        }
    }

    for a in &model.alternatives {
        if a.options.is_empty() {
            out.push(Violation::EmptyAlternative(a.root.clone()));
        }
        for o in &a.options {
            if !declared.contains(o.as_str()) {
                out.push(Violation::UndeclaredUnit { rule: a.root.clone(), unit: o.clone() });
            }
        }
    }

    for u in model.detectable.iter().chain(&model.external) {
        if !declared.contains(u.as_str()) {
            out.push(Violation::UndeclaredDetectable(u.clone()));
        }
    }

    for u in &model.units {
        if !roots.contains_key(u.as_str()) && !model.is_detectable(u) && !model.is_external(u) {
            out.push(Violation::Uninstantiable(u.clone()));
        }
    }

    ValidationReport { violations: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Roots a pattern; holds its index in `Model::patterns`.
    And(usize),
    /// Roots an alternative; holds its index in `Model::alternatives`.
    Or(usize),
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplicitNode {
    pub unit: UnitId,
    pub kind: NodeKind,
    pub detectable: bool,
    pub external: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EdgeLabel {
    Role(String),
    Option(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplicitEdge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
}

/// AND/OR graph over unit kinds. Nodes are indexed in model declaration order.
#[derive(Debug, Clone)]
pub struct ImplicitGraph {
    pub nodes: Vec<ImplicitNode>,
    pub edges: Vec<ImplicitEdge>,
    index: HashMap<UnitId, usize>,
    out: Vec<Vec<usize>>,
}

impl ImplicitGraph {
    pub fn node_index(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    pub fn node(&self, unit: &str) -> Option<&ImplicitNode> {
        self.node_index(unit).map(|i| &self.nodes[i])
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &ImplicitEdge> {
        self.out[node].iter().map(move |e| &self.edges[*e])
    }

    pub fn out_degree(&self, unit: &str) -> usize {
        self.node_index(unit).map_or(0, |i| self.out[i].len())
    }
}

pub fn build_implicit_graph(model: &Model) -> Result<ImplicitGraph, ModelError> {
    let report = validate_model(model);
    if !report.is_valid() {
        return Err(ModelError::Invalid(report));
    }
    let index: HashMap<UnitId, usize> =
        model.units.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
    let mut nodes: Vec<ImplicitNode> = model
        .units
        .iter()
        .map(|u| ImplicitNode {
            unit: u.clone(),
            kind: NodeKind::Leaf,
            detectable: model.is_detectable(u),
            external: model.is_external(u),
        })
        .collect();
    let mut edges = Vec::new();
    for (pi, p) in model.patterns.iter().enumerate() {
        let from = index[&p.root];
        nodes[from].kind = NodeKind::And(pi);
        for c in &p.children {
            edges.push(ImplicitEdge { from, to: index[&c.unit], label: EdgeLabel::Role(c.role.clone()) });
        }
    }
    for (ai, a) in model.alternatives.iter().enumerate() {
        let from = index[&a.root];
        nodes[from].kind = NodeKind::Or(ai);
        for (k, o) in a.options.iter().enumerate() {
            edges.push(ImplicitEdge { from, to: index[o], label: EdgeLabel::Option(k) });
        }
    }
    let mut out = vec![Vec::new(); nodes.len()];
    for (ei, e) in edges.iter().enumerate() {
        out[e.from].push(ei);
    }
    Ok(ImplicitGraph { nodes, edges, index, out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::Relation;

    fn leaf_model() -> Model {
        Model { units: vec!["Sign".into()], detectable: vec!["Sign".into()], ..Default::default() }
    }

    #[test]
    fn atomic_detectable_unit_is_a_leaf() {
        let m = leaf_model();
        assert!(validate_model(&m).is_valid());
        let g = build_implicit_graph(&m).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].kind, NodeKind::Leaf);
        assert!(g.nodes[0].detectable);
        assert_eq!(g.out_degree("Sign"), 0);
    }

    #[test]
    fn duplicate_rule_root_across_kinds() {
        let mut m = leaf_model();
        m.units.push("Q".into());
        m.patterns.push(Pattern { root: "Q".into(), children: vec![Child::new("s", "Sign")], constraints: vec![] });
        m.alternatives.push(Alternative { root: "Q".into(), options: vec!["Sign".into()] });
        let r = validate_model(&m);
        assert_eq!(r.violations, vec![Violation::DuplicateRuleRoot("Q".into())]);
        assert_eq!(r.violations[0].to_string(), "duplicate rule root Q");
        assert!(build_implicit_graph(&m).is_err());
    }

    #[test]
    fn unknown_role_in_constraint() {
        let mut m = leaf_model();
        m.units.push("P".into());
        m.patterns.push(Pattern {
            root: "P".into(),
            children: vec![Child::new("s", "Sign")],
            constraints: vec![ConstraintExpr::allen(Relation::Before, "s", "xyz")],
        });
        let r = validate_model(&m);
        assert_eq!(r.violations, vec![Violation::UnknownRole { pattern: "P".into(), role: "xyz".into() }]);
        assert!(r.violations[0].to_string().starts_with("unknown role xyz"));
    }

    #[test]
    fn other_violations_are_reported() {
        let m = Model {
            units: vec!["A".into(), "B".into(), "A".into(), "Orphan".into()],
            patterns: vec![Pattern {
                root: "A".into(),
                children: vec![Child::new("x", "B"), Child::new("x", "Ghost"), Child::new("self", "B")],
                constraints: vec![ConstraintExpr::attr(
                    "x",
                    "colour",
                    crate::temporal::AttrOp::Eq,
                    FlagValue::Bool(true),
                )],
            }],
            alternatives: vec![],
            detectable: vec!["B".into(), "Nope".into()],
            external: vec![],
            attribute_schema: vec![],
        };
        let r = validate_model(&m);
        assert!(r.violations.contains(&Violation::DuplicateUnit("A".into())));
        assert!(r.violations.contains(&Violation::DuplicateRole { pattern: "A".into(), role: "x".into() }));
        assert!(r.violations.contains(&Violation::UndeclaredUnit { rule: "A".into(), unit: "Ghost".into() }));
        assert!(r.violations.contains(&Violation::ReservedRole { pattern: "A".into() }));
        assert!(r.violations.contains(&Violation::UnknownAttribute { pattern: "A".into(), attr: "colour".into() }));
        assert!(r.violations.contains(&Violation::UndeclaredDetectable("Nope".into())));
        assert!(r.violations.contains(&Violation::Uninstantiable("Orphan".into())));
    }

    #[test]
    fn self_recursive_pattern_has_self_loop() {
        let mut m = leaf_model();
        m.units.push("P".into());
        m.units.push("L".into());
        m.alternatives.push(Alternative { root: "L".into(), options: vec!["P".into(), "Sign".into()] });
        m.patterns.push(Pattern {
            root: "P".into(),
            children: vec![Child::new("inner", "P"), Child::new("s", "Sign")],
            constraints: vec![],
        });
        let g = build_implicit_graph(&m).unwrap();
        let p = g.node_index("P").unwrap();
        assert!(matches!(g.nodes[p].kind, NodeKind::And(_)));
        assert!(g.out_edges(p).any(|e| e.to == p && e.label == EdgeLabel::Role("inner".into())));
        assert_eq!(g.nodes.len(), m.units.len());
    }

    #[test]
    fn malformed_json_names_the_field() {
        let err = Model::from_json(r#"{"units":["A"],"patterns":[{"root":"A","children":[{"role":"x"}]}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("patterns[0].children[0]"), "{err}");
    }
}

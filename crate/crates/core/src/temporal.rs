//! Interval attributes, Allen relations and constraint checking over role bindings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved role name that designates the pattern root inside its own constraints.
pub const SELF_ROLE: &str = "self";

/// A closed time extent in integer milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(i64, i64)", into = "(i64, i64)")]
pub struct Interval {
    start: i64,
    end: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntervalError {
    #[error("interval start {start} is after end {end}")]
    Reversed { start: i64, end: i64 },
}

impl Interval {
    pub fn new(start: i64, end: i64) -> Result<Self, IntervalError> {
        if start > end {
            return Err(IntervalError::Reversed { start, end });
        }
        Ok(Self { start, end })
    }

    /// Interval wide enough to contain every timestamp an annotation can carry.
    pub fn unbounded() -> Self {
        Self { start: i64::MIN / 4, end: i64::MAX / 4 }
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn duration(&self) -> i64 {
        self.end - self.start
    }

    pub fn is_point(&self) -> bool {
        self.start == self.end
    }

    /// Closed-interval intersection test; touching endpoints count.
    pub fn intersects(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(Interval { start, end })
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { start: self.start.min(other.start), end: self.end.max(other.end) }
    }
}

impl TryFrom<(i64, i64)> for Interval {
    type Error = IntervalError;

    fn try_from((start, end): (i64, i64)) -> Result<Self, Self::Error> {
        Interval::new(start, end)
    }
}

impl From<Interval> for (i64, i64) {
    fn from(iv: Interval) -> Self {
        (iv.start, iv.end)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// Temporal hull of a non-empty set of intervals.
pub fn infer_parent_interval(children: &[Interval]) -> Result<Interval, ConstraintError> {
    let (first, rest) = children.split_first().ok_or(ConstraintError::EmptyHull)?;
    Ok(rest.iter().fold(*first, |acc, iv| acc.hull(iv)))
}

/// The thirteen Allen relations plus two fixed disjunctions used by compiled
/// dependency models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Before,
    Meets,
    Overlaps,
    Starts,
    During,
    Finishes,
    Equal,
    After,
    MetBy,
    OverlappedBy,
    StartedBy,
    Contains,
    FinishedBy,
    /// `before` or `meets`.
    NoOverlapOrdered,
    /// Any relation other than `before`, `meets`, `after`, `met-by`.
    SharesTime,
}

impl Relation {
    /// The thirteen base relations, in a fixed order.
    pub const BASE: [Relation; 13] = [
        Relation::Before,
        Relation::Meets,
        Relation::Overlaps,
        Relation::Starts,
        Relation::During,
        Relation::Finishes,
        Relation::Equal,
        Relation::After,
        Relation::MetBy,
        Relation::OverlappedBy,
        Relation::StartedBy,
        Relation::Contains,
        Relation::FinishedBy,
    ];

    pub fn inverse(self) -> Relation {
        use Relation::*;
        match self {
            Before => After,
            Meets => MetBy,
            Overlaps => OverlappedBy,
            Starts => StartedBy,
            During => Contains,
            Finishes => FinishedBy,
            Equal => Equal,
            After => Before,
            MetBy => Meets,
            OverlappedBy => Overlaps,
            StartedBy => Starts,
            Contains => During,
            FinishedBy => Finishes,
            // The converse of a before-or-meets ordering is not itself
            // expressible as a named relation; callers swap operands instead.
            NoOverlapOrdered => NoOverlapOrdered,
            SharesTime => SharesTime,
        }
    }

    pub fn name(self) -> &'static str {
        use Relation::*;
        match self {
            Before => "before",
            Meets => "meets",
            Overlaps => "overlaps",
            Starts => "starts",
            During => "during",
            Finishes => "finishes",
            Equal => "equal",
            After => "after",
            MetBy => "met-by",
            OverlappedBy => "overlapped-by",
            StartedBy => "started-by",
            Contains => "contains",
            FinishedBy => "finished-by",
            NoOverlapOrdered => "no-overlap-ordered",
            SharesTime => "shares-time",
        }
    }

    pub fn is_base(self) -> bool {
        !matches!(self, Relation::NoOverlapOrdered | Relation::SharesTime)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Evaluates `a rel b`.
///
/// `meets`/`met-by` require both intervals to have non-zero length; with that
/// refinement the base relations stay mutually exclusive even for point
/// intervals (`[2,2]` against `[2,5]` is `starts`, not `meets`).
pub fn eval_allen(rel: Relation, a: Interval, b: Interval) -> bool {
    use Relation::*;
    let proper = !a.is_point() && !b.is_point();
    match rel {
        Before => a.end < b.start,
        Meets => proper && a.end == b.start,
        Overlaps => a.start < b.start && b.start < a.end && a.end < b.end,
        Starts => a.start == b.start && a.end < b.end,
        During => b.start < a.start && a.end < b.end,
        Finishes => a.end == b.end && a.start > b.start,
        Equal => a == b,
        After | MetBy | OverlappedBy | StartedBy | Contains | FinishedBy => {
            eval_allen(rel.inverse(), b, a)
        }
        NoOverlapOrdered => eval_allen(Before, a, b) || eval_allen(Meets, a, b),
        SharesTime => ![Before, Meets, After, MetBy].iter().any(|r| eval_allen(*r, a, b)),
    }
}

/// The unique base relation holding between `a` and `b`.
pub fn relate(a: Interval, b: Interval) -> Relation {
    Relation::BASE
        .into_iter()
        .find(|r| eval_allen(*r, a, b))
        .expect("base Allen relations are exhaustive")
}

/// Non-temporal attribute value carried by an occurrence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlagValue {
    Bool(bool),
    Symbol(String),
}

impl fmt::Display for FlagValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlagValue::Bool(b) => write!(f, "{b}"),
            FlagValue::Symbol(s) => f.write_str(s),
        }
    }
}

/// Interval plus articulatory flags of one occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub interval: Interval,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, FlagValue>,
}

impl AttributeSet {
    pub fn new(interval: Interval) -> Self {
        Self { interval, flags: BTreeMap::new() }
    }

    pub fn with_flag(mut self, name: impl Into<String>, value: FlagValue) -> Self {
        self.flags.insert(name.into(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrOp {
    Eq,
    Ne,
}

/// A constraint between the roles of one pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstraintExpr {
    Allen { rel: Relation, a: String, b: String },
    Attr { role: String, attr: String, op: AttrOp, value: FlagValue },
}

impl ConstraintExpr {
    pub fn allen(rel: Relation, a: impl Into<String>, b: impl Into<String>) -> Self {
        ConstraintExpr::Allen { rel, a: a.into(), b: b.into() }
    }

    pub fn attr(role: impl Into<String>, attr: impl Into<String>, op: AttrOp, value: FlagValue) -> Self {
        ConstraintExpr::Attr { role: role.into(), attr: attr.into(), op, value }
    }

    pub fn roles(&self) -> Vec<&str> {
        match self {
            ConstraintExpr::Allen { a, b, .. } => vec![a.as_str(), b.as_str()],
            ConstraintExpr::Attr { role, .. } => vec![role.as_str()],
        }
    }

    /// Evaluates the constraint given role lookups.
    pub fn eval_with<'a, F>(&self, lookup: F) -> Result<bool, ConstraintError>
    where
        F: Fn(&str) -> Option<&'a AttributeSet>,
    {
        let get = |role: &str| lookup(role).ok_or_else(|| ConstraintError::MissingRole(role.to_string()));
        Ok(match self {
            ConstraintExpr::Allen { rel, a, b } => eval_allen(*rel, get(a)?.interval, get(b)?.interval),
            ConstraintExpr::Attr { role, attr, op, value } => {
                let actual = get(role)?.flags.get(attr);
                // An absent flag never equals a literal.
                match op {
                    AttrOp::Eq => actual == Some(value),
                    AttrOp::Ne => actual != Some(value),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("binding has no value for role `{0}`")]
    MissingRole(String),
    #[error("cannot take the hull of zero intervals")]
    EmptyHull,
}

/// True iff every constraint holds on `binding`.
pub fn check_constraints(
    constraints: &[ConstraintExpr],
    binding: &BTreeMap<String, AttributeSet>,
) -> Result<bool, ConstraintError> {
    for c in constraints {
        if !c.eval_with(|role| binding.get(role))? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True iff every constraint of `pattern` holds on `binding`.
pub fn check_binding(
    pattern: &crate::model::Pattern,
    binding: &BTreeMap<String, AttributeSet>,
) -> Result<bool, ConstraintError> {
    check_constraints(&pattern.constraints, binding)
}

//! Detector contract and the annotation-backed detectors used to simulate it.
//!
//! The parser never reads annotations directly: it asks a [`Detector`] for
//! occurrences of one detectable unit inside a time window. Batch parsing is
//! just a detector pre-loaded with a whole annotation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, UnitId};
use crate::parser::SolutionGraph;
use crate::temporal::{AttributeSet, FlagValue, Interval};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Detected,
    Inferred,
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Detected => "detected",
            Provenance::Inferred => "inferred",
            Provenance::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub id: String,
    pub unit: UnitId,
    pub attrs: AttributeSet,
    pub provenance: Provenance,
}

impl Occurrence {
    pub fn detected(id: impl Into<String>, unit: impl Into<String>, interval: Interval) -> Self {
        Self {
            id: id.into(),
            unit: unit.into(),
            attrs: AttributeSet::new(interval),
            provenance: Provenance::Detected,
        }
    }

    pub fn with_flag(mut self, name: &str, value: FlagValue) -> Self {
        self.attrs.flags.insert(name.to_string(), value);
        self
    }

    pub fn interval(&self) -> Interval {
        self.attrs.interval
    }

    /// Deterministic result order: (start, end, id).
    pub fn sort_key(&self) -> (i64, i64, &str) {
        (self.attrs.interval.start(), self.attrs.interval.end(), self.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorQuery {
    pub unit: UnitId,
    pub window: Interval,
}

impl DetectorQuery {
    pub fn new(unit: impl Into<String>, window: Interval) -> Self {
        Self { unit: unit.into(), window }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectorError {
    #[error("no detector answers for unit {0}")]
    NotDetectable(UnitId),
}

pub trait Detector: Send + Sync {
    fn handles(&self, unit: &str) -> bool;

    /// Occurrences of `q.unit` intersecting `q.window` (closed on both ends),
    /// sorted by (start, end, id), without duplicates.
    fn query(&self, q: &DetectorQuery) -> Result<Vec<Occurrence>, DetectorError>;

    /// Upper bound on the number of distinct occurrences this detector can
    /// ever return. The parser uses it to bound recursive derivations.
    fn occurrence_bound(&self) -> usize;
}

/// Row layout shared by annotation files and solution-to-annotation output.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    id: String,
    unit: String,
    start: i64,
    end: i64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    flags: BTreeMap<String, FlagValue>,
    #[serde(default, skip_serializing_if = "is_detected")]
    provenance: Provenance,
}

fn is_detected(p: &Provenance) -> bool {
    *p == Provenance::Detected
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocFile {
    span: Interval,
    #[serde(default)]
    occurrences: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationDoc {
    pub span: Interval,
    pub occurrences: Vec<Occurrence>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("duplicate occurrence id {0}")]
    DuplicateId(String),
    #[error("occurrence {id} {interval} lies outside the annotation span {span}")]
    OutsideSpan { id: String, interval: Interval, span: Interval },
    #[error("unknown units: {}", .0.iter().map(|(u, line)| format!("{u} (line {line})")).collect::<Vec<_>>().join(", "))]
    UnknownUnits(Vec<(String, usize)>),
}

impl AnnotationDoc {
    pub fn new(span: Interval, mut occurrences: Vec<Occurrence>) -> Result<Self, AnnotationError> {
        let mut seen = HashSet::new();
        for o in &occurrences {
            if !seen.insert(o.id.as_str()) {
                return Err(AnnotationError::DuplicateId(o.id.clone()));
            }
            if !span.contains(&o.interval()) {
                return Err(AnnotationError::OutsideSpan { id: o.id.clone(), interval: o.interval(), span });
            }
        }
        occurrences.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(Self { span, occurrences })
    }

    pub fn empty() -> Self {
        Self { span: Interval::new(0, 0).expect("point interval"), occurrences: Vec::new() }
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        Self::parse_json(text, "<input>")
    }

    fn parse_json(text: &str, path: &str) -> Result<Self, AnnotationError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: DocFile = serde_path_to_error::deserialize(de).map_err(|e| AnnotationError::Format {
            path: path.to_string(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
        let mut occs = Vec::with_capacity(file.occurrences.len());
        for r in file.occurrences {
            let interval = Interval::new(r.start, r.end)
                .map_err(|e| AnnotationError::Format { path: path.to_string(), message: format!("{}: {e}", r.id) })?;
            occs.push(Occurrence {
                id: r.id,
                unit: r.unit,
                attrs: AttributeSet { interval, flags: r.flags },
                provenance: r.provenance,
            });
        }
        Self::new(file.span, occs)
    }

    pub fn to_json(&self) -> String {
        let file = DocFile {
            span: self.span,
            occurrences: self
                .occurrences
                .iter()
                .map(|o| Row {
                    id: o.id.clone(),
                    unit: o.unit.clone(),
                    start: o.interval().start(),
                    end: o.interval().end(),
                    flags: o.attrs.flags.clone(),
                    provenance: o.provenance,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("annotation serializes")
    }

    /// Reads `id,unit,start,end` rows; the span is the hull of all rows.
    pub fn from_csv(text: &str) -> Result<Self, AnnotationError> {
        Self::parse_csv(text, "<input>").map(|(doc, _)| doc)
    }

    fn parse_csv(text: &str, path: &str) -> Result<(Self, Vec<usize>), AnnotationError> {
        #[derive(Deserialize)]
        struct CsvRow {
            id: String,
            unit: String,
            start: i64,
            end: i64,
        }
        let fmt_err = |message: String| AnnotationError::Format { path: path.to_string(), message };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| fmt_err(e.to_string()))?.clone();
        let mut occs = Vec::new();
        let mut line_of = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row: CsvRow = rec.deserialize(Some(&headers)).map_err(|e| fmt_err(format!("line {line}: {e}")))?;
            let interval = Interval::new(row.start, row.end).map_err(|e| fmt_err(format!("line {line}: {e}")))?;
            line_of.insert(row.id.clone(), line);
            occs.push(Occurrence::detected(row.id, row.unit, interval));
        }
        let span = occs
            .iter()
            .map(Occurrence::interval)
            .reduce(|a, b| a.hull(&b))
            .unwrap_or_else(|| Interval::new(0, 0).expect("point interval"));
        let doc = Self::new(span, occs)?;
        let lines = doc.occurrences.iter().map(|o| line_of[&o.id]).collect();
        Ok((doc, lines))
    }

    /// Units in the document that the model does not declare, with the line of
    /// each offending row in `source`.
    fn unknown_units(&self, model: &Model, lines: &[usize]) -> Vec<(String, usize)> {
        self.occurrences
            .iter()
            .zip(lines)
            .filter(|(o, _)| !model.has_unit(&o.unit))
            .map(|(o, l)| (o.unit.clone(), *l))
            .collect()
    }
}

/// Line number (1-based) of each occurrence's `"id"` value in a JSON
/// annotation, in document order.
fn json_row_lines(text: &str, ids: &[&str]) -> Vec<usize> {
    let mut cursor = text.find("\"occurrences\"").unwrap_or(0);
    ids.iter()
        .map(|id| {
            let needle = serde_json::to_string(id).expect("string serializes");
            match text[cursor..].find(&needle) {
                Some(off) => {
                    cursor += off;
                    text[..cursor].matches('\n').count() + 1
                }
                None => 0,
            }
        })
        .collect()
}

/// Loads a JSON or CSV (by extension) annotation and resolves its units
/// against `model`.
pub fn load_annotation(path: impl AsRef<Path>, model: &Model) -> Result<AnnotationDoc, AnnotationError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|source| AnnotationError::Io { path: shown.clone(), source })?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (doc, lines) = if is_csv {
        AnnotationDoc::parse_csv(&text, &shown)?
    } else {
        let doc = AnnotationDoc::parse_json(&text, &shown)?;
        // Document order, not sorted order, drives the line search.
        let file: DocFile = serde_json::from_str(&text).expect("already parsed");
        let raw_ids: Vec<&str> = file.occurrences.iter().map(|r| r.id.as_str()).collect();
        let raw_lines = json_row_lines(&text, &raw_ids);
        let by_id: BTreeMap<&str, usize> = raw_ids.iter().copied().zip(raw_lines).collect();
        let lines = doc.occurrences.iter().map(|o| by_id[o.id.as_str()]).collect();
        (doc, lines)
    };
    let unknown = doc.unknown_units(model, &lines);
    if !unknown.is_empty() {
        return Err(AnnotationError::UnknownUnits(unknown));
    }
    Ok(doc)
}

/// Answers queries from a fixed list of occurrences.
#[derive(Debug, Clone)]
pub struct AnnotationDetector {
    handled: BTreeSet<UnitId>,
    by_unit: BTreeMap<UnitId, Vec<Occurrence>>,
    total: usize,
}

impl AnnotationDetector {
    pub fn new(occurrences: &[Occurrence], handled: impl IntoIterator<Item = UnitId>) -> Self {
        let handled: BTreeSet<UnitId> = handled.into_iter().collect();
        let mut by_unit: BTreeMap<UnitId, Vec<Occurrence>> = BTreeMap::new();
        for o in occurrences.iter().filter(|o| handled.contains(&o.unit)) {
            by_unit.entry(o.unit.clone()).or_default().push(o.clone());
        }
        for v in by_unit.values_mut() {
            v.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
            v.dedup_by(|a, b| a.id == b.id);
        }
        let total = by_unit.values().map(Vec::len).sum();
        Self { handled, by_unit, total }
    }
}

impl Detector for AnnotationDetector {
    fn handles(&self, unit: &str) -> bool {
        self.handled.contains(unit)
    }

    fn query(&self, q: &DetectorQuery) -> Result<Vec<Occurrence>, DetectorError> {
        if !self.handles(&q.unit) {
            return Err(DetectorError::NotDetectable(q.unit.clone()));
        }
        Ok(self
            .by_unit
            .get(&q.unit)
            .map(|v| v.iter().filter(|o| o.interval().intersects(&q.window)).cloned().collect())
            .unwrap_or_default())
    }

    fn occurrence_bound(&self) -> usize {
        self.total
    }
}

/// Simulated detector for the model's detectable units.
pub fn annotation_detector(doc: &AnnotationDoc, model: &Model) -> AnnotationDetector {
    AnnotationDetector::new(&doc.occurrences, model.detectable.iter().cloned())
}

/// Exposes each solution as one external occurrence of `unit` spanning the
/// hull of the solution's detected nodes.
pub fn solutions_as_detector(solutions: &[SolutionGraph], unit: &str) -> AnnotationDetector {
    let occs: Vec<Occurrence> = solutions
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            s.detected_hull().map(|interval| Occurrence {
                id: format!("{unit}#{i}"),
                unit: unit.to_string(),
                attrs: AttributeSet::new(interval),
                provenance: Provenance::External,
            })
        })
        .collect();
    AnnotationDetector::new(&occs, [unit.to_string()])
}

/// Routes each query to the first detector that handles its unit.
#[derive(Default)]
pub struct CompositeDetector {
    parts: Vec<Box<dyn Detector>>,
}

impl CompositeDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, d: impl Detector + 'static) -> Self {
        self.parts.push(Box::new(d));
        self
    }
}

impl Detector for CompositeDetector {
    fn handles(&self, unit: &str) -> bool {
        self.parts.iter().any(|d| d.handles(unit))
    }

    fn query(&self, q: &DetectorQuery) -> Result<Vec<Occurrence>, DetectorError> {
        self.parts
            .iter()
            .find(|d| d.handles(&q.unit))
            .ok_or_else(|| DetectorError::NotDetectable(q.unit.clone()))?
            .query(q)
    }

    fn occurrence_bound(&self) -> usize {
        self.parts.iter().map(|d| d.occurrence_bound()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: i64, e: i64) -> Interval {
        Interval::new(s, e).unwrap()
    }

    fn detector(occs: &[Occurrence]) -> AnnotationDetector {
        let units: BTreeSet<String> = occs.iter().map(|o| o.unit.clone()).collect();
        AnnotationDetector::new(occs, units)
    }

    #[test]
    fn windowed_query_finds_the_buoy_marker() {
        let d = detector(&[Occurrence::detected("bm", "Buoy-Marker", iv(201, 595))]);
        let got = d.query(&DetectorQuery::new("Buoy-Marker", iv(201, 212))).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "bm");
        assert!(d.query(&DetectorQuery::new("Buoy-Marker", iv(0, 100))).unwrap().is_empty());
    }

    #[test]
    fn touching_window_intersects() {
        let d = detector(&[Occurrence::detected("o", "U", iv(10, 20))]);
        assert_eq!(d.query(&DetectorQuery::new("U", iv(20, 30))).unwrap().len(), 1);
        assert!(d.query(&DetectorQuery::new("U", iv(21, 30))).unwrap().is_empty());
    }

    #[test]
    fn non_detectable_unit_is_refused() {
        let d = detector(&[Occurrence::detected("o", "U", iv(10, 20))]);
        assert_eq!(
            d.query(&DetectorQuery::new("V", iv(0, 1))),
            Err(DetectorError::NotDetectable("V".into()))
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        let occs = vec![Occurrence::detected("a", "U", iv(0, 1)), Occurrence::detected("a", "U", iv(2, 3))];
        assert!(matches!(AnnotationDoc::new(iv(0, 10), occs), Err(AnnotationError::DuplicateId(_))));
    }

    #[test]
    fn empty_annotation() {
        let doc = AnnotationDoc::from_json(r#"{"span":[0,100],"occurrences":[]}"#).unwrap();
        let d = AnnotationDetector::new(&doc.occurrences, ["U".to_string()]);
        assert!(d.query(&DetectorQuery::new("U", Interval::unbounded())).unwrap().is_empty());
    }

    #[test]
    fn csv_import() {
        let doc = AnnotationDoc::from_csv("id,unit,start,end\nb,U,5,9\na,U,0,4\n").unwrap();
        assert_eq!(doc.span, iv(0, 9));
        assert_eq!(doc.occurrences[0].id, "a");
    }

    #[test]
    fn unknown_units_report_lines() {
        let text = "{\n  \"span\": [0, 100],\n  \"occurrences\": [\n    {\"id\": \"a\", \"unit\": \"Sign\", \"start\": 0, \"end\": 5},\n    {\"id\": \"b\", \"unit\": \"Ghost\", \"start\": 6, \"end\": 9}\n  ]\n}\n";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        std::fs::write(&path, text).unwrap();
        let model = Model {
            units: vec!["Sign".into()],
            detectable: vec!["Sign".into()],
            ..Default::default()
        };
        let err = load_annotation(&path, &model).unwrap_err();
        match err {
            AnnotationError::UnknownUnits(v) => assert_eq!(v, vec![("Ghost".to_string(), 5)]),
            other => panic!("{other}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn occs() -> impl Strategy<Value = Vec<Occurrence>> {
            prop::collection::vec((0i64..100, 0i64..30, 0usize..2), 0..12).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (s, d, u))| Occurrence::detected(format!("o{i}"), ["A", "B"][u], iv(s, s + d)))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn sorted_and_antitone(occs in occs(), s in 0i64..130, d in 0i64..60, shrink in 0i64..30) {
                let det = AnnotationDetector::new(&occs, ["A".to_string(), "B".to_string()]);
                let wide = iv(s, s + d);
                let narrow = iv(s + shrink.min(d / 2), s + d - shrink.min(d / 2));
                let big = det.query(&DetectorQuery::new("A", wide)).unwrap();
                let small = det.query(&DetectorQuery::new("A", narrow)).unwrap();
                prop_assert!(big.windows(2).all(|w| w[0].sort_key() < w[1].sort_key()));
                prop_assert!(small.iter().all(|o| big.contains(o)));
            }

            #[test]
            fn serialized_doc_answers_identically(occs in occs(), s in 0i64..130, d in 0i64..60) {
                let doc = AnnotationDoc::new(iv(0, 200), occs).unwrap();
                let back = AnnotationDoc::from_json(&doc.to_json()).unwrap();
                let units = ["A".to_string(), "B".to_string()];
                let a = AnnotationDetector::new(&doc.occurrences, units.clone());
                let b = AnnotationDetector::new(&back.occurrences, units);
                for u in ["A", "B"] {
                    let q = DetectorQuery::new(u, iv(s, s + d));
                    prop_assert_eq!(a.query(&q).unwrap(), b.query(&q).unwrap());
                }
            }
        }
    }
}

use std::path::PathBuf;

use signgram::detector::{annotation_detector, load_annotation, AnnotationDoc};
use signgram::parser::{parse, rank_solutions, recheck_solution, ParseRequest, RootSpec, SolutionGraph};
use signgram::Model;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn louvre() -> (Model, AnnotationDoc) {
    let model = Model::load(fixture("louvre_model.json")).unwrap();
    let doc = load_annotation(fixture("louvre_annotation.json"), &model).unwrap();
    (model, doc)
}

fn louvre_solutions() -> Vec<SolutionGraph> {
    let (model, doc) = louvre();
    let det = annotation_detector(&doc, &model);
    let out = parse(&ParseRequest::new(&model, vec![RootSpec::new("Signing")], &det)).unwrap();
    assert!(!out.truncated);
    rank_solutions(out.solutions)
}

fn shape(g: &SolutionGraph) -> Vec<String> {
    g.nodes.iter().map(|n| format!("{}[{},{}]", n.unit, n.start, n.end)).collect()
}

#[test]
fn fixture_model_is_valid() {
    let (model, _) = louvre();
    assert!(signgram::validate_model(&model).is_valid());
}

#[test]
fn top_solution_is_the_buoy_with_a_sign_check() {
    let ranked = louvre_solutions();
    let top = &ranked[0];
    // Signing, Locution, BuoyStruct, sign, marker, Locution, SignCheck,
    // Question (+2 leaves), Ack (+2 leaves).
    assert_eq!(top.score, 13);
    let units = shape(top);
    for want in [
        "Signing[150,620]",
        "BuoyStruct[180,595]",
        "SignCheck[405,575]",
        "Question[405,490]",
        "Ack[495,575]",
    ] {
        assert!(units.iter().any(|u| u == want), "missing {want} in {units:?}");
    }
    let buoy = top.nodes.iter().find(|n| n.unit == "BuoyStruct").unwrap();
    let (_, loc) = top.children(&buoy.id).find(|(r, _)| *r == "loc").unwrap();
    let (_, inner) = top.children(&loc.id).next().unwrap();
    assert_eq!(inner.unit, "SignCheck");
}

#[test]
fn every_constraint_holds_on_every_solution() {
    let (model, doc) = louvre();
    for s in louvre_solutions() {
        assert_eq!(recheck_solution(&model, &s, &doc), Vec::<String>::new());
    }
}

#[test]
fn question_only_parse_ranks_below() {
    let ranked = louvre_solutions();
    let q_only = ranked
        .iter()
        .position(|s| {
            let units: Vec<&str> = s.nodes.iter().map(|n| n.unit.as_str()).collect();
            units == ["Signing", "Locution", "Question", "Eyebrows-Up", "Sign"]
        })
        .expect("question-only parse present");
    assert_eq!(ranked[q_only].score, 5);
    assert!(q_only > 0);
}

#[test]
fn parse_is_deterministic() {
    assert_eq!(louvre_solutions(), louvre_solutions());
}

use signgram::synth::*;
use signgram::depgram::compile_dep_grammar;
use signgram::detector::annotation_detector;
use signgram::parser::*;
use signgram::eval::*;
use std::time::Instant;

fn run(p: &GenParams, n: usize, budget: SearchBudget) {
    let t = Instant::now();
    let mut reports = vec![];
    let mut maxexp = 0;
    for i in 0..n {
        let gs = derive_seed(p.seed, i as u64);
        let g = generate_grammar(&GenParams { seed: gs, ..p.clone() }).unwrap();
        if terminating_categories(&g).is_empty() { continue; }
        let ph = sample_phrase(&g, "g", p, derive_seed(gs, 1)).unwrap();
        let m = compile_dep_grammar(&g).unwrap();
        let det = annotation_detector(&ph.annotation, &m);
        let roots = g.categories.iter().map(|c| RootSpec::new(format!("cat:{}", c.name))).collect();
        let out = parse(&ParseRequest::new(&m, roots, &det).budget(budget)).unwrap();
        maxexp = maxexp.max(out.expansions);
        reports.push(score_phrase("p", out.solutions, &ph.truth).unwrap());
    }
    let s = summarize(&reports, 3);
    println!("{}", s.to_csv());
    println!("elapsed {:?} maxexp {}", t.elapsed(), maxexp);
}

#[test]
fn dbg() {
    run(&GenParams { phrase_size: Bounds(1, 6), seed: 1, ..Default::default() }, 200, SearchBudget::unlimited());
    run(&GenParams { seed: 2, ..Default::default() }, 200, SearchBudget::default());
}

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::depgram::{compile_dep_grammar, load_dep_grammar, DepGrammarError};
use crate::detector::{annotation_detector, load_annotation, AnnotationError};
use crate::eval::{evaluate_dirs, summarize, EvalError};
use crate::model::{validate_model, Model, ModelError, ValidationReport};
use crate::parser::{expand_roots, parse, rank_solutions, ParseError, ParseRequest, SearchBudget, SolutionFile};
use crate::synth::{generate_corpus, generate_grammar, Bounds, GenParams, Manifest, SynthError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_TRUNCATED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Grammar(#[from] DepGrammarError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(ModelError::Invalid(_)) | CliError::Parse(ParseError::InvalidModel(_)) => EXIT_INVALID,
            _ => EXIT_IO,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "signgram", version, about = "Grammar-driven parsing of timed sign-language annotations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file and print its validation report.
    Validate {
        #[arg(short, long)]
        model: PathBuf,
    },
    /// Compile a dependency grammar into a model.
    CompileDep {
        #[arg(short, long)]
        grammar: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Parse one annotation, or every phrase listed in a corpus manifest.
    Parse(ParseArgs),
    /// Sample one random dependency grammar.
    GenGrammar {
        #[command(flatten)]
        params: GenArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Sample grammars and phrases into a corpus directory.
    GenCorpus {
        #[command(flatten)]
        params: GenArgs,
        #[arg(long, default_value_t = 1)]
        grammars: usize,
        #[arg(long, default_value_t = 1)]
        phrases: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score solutions against ground truth and write the per-size table.
    Eval {
        #[arg(long)]
        solutions_dir: PathBuf,
        #[arg(long)]
        truth_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        bucket_width: usize,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(short, long, conflicts_with = "manifest")]
    pub model: Option<PathBuf>,
    #[arg(short, long, requires = "model")]
    pub annotation: Option<PathBuf>,
    #[arg(short, long, requires = "model")]
    pub out: Option<PathBuf>,
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Root units; a trailing `*` matches by prefix. Batch mode defaults to
    /// every category.
    #[arg(long, value_delimiter = ',')]
    pub roots: Vec<String>,
    /// Node expansions per parse; 0 means unlimited.
    #[arg(long, default_value_t = SearchBudget::DEFAULT_EXPANSIONS)]
    pub budget: u64,
    #[arg(long, default_value_t = SearchBudget::DEFAULT_SOLUTIONS)]
    pub max_solutions: usize,
    #[arg(long)]
    pub emit_partial: bool,
    /// Exit with status 3 when any parse was cut short by the budget.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl ParseArgs {
    pub fn search_budget(&self) -> SearchBudget {
        SearchBudget {
            max_expansions: if self.budget == 0 { u64::MAX } else { self.budget },
            max_solutions: self.max_solutions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeArg(pub Bounds);

impl FromStr for RangeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("{t:?}: {e}"));
        match s.split_once('-') {
            Some((a, b)) => Ok(RangeArg(Bounds(num(a)?, num(b)?))),
            None => {
                let v = num(s)?;
                Ok(RangeArg(Bounds(v, v)))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20)]
    pub categories: usize,
    #[arg(long, default_value = "3-4")]
    pub rules: RangeArg,
    #[arg(long, default_value = "0-4")]
    pub mg_deps: RangeArg,
    #[arg(long, default_value_t = 1)]
    pub nmg_deps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mg_fraction: f64,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value = "300-900")]
    pub mg_duration: RangeArg,
    #[arg(long, default_value = "0-200")]
    pub gap: RangeArg,
    #[arg(long, default_value = "400-1500")]
    pub nmg_duration: RangeArg,
    #[arg(long, default_value = "2-20")]
    pub phrase_size: RangeArg,
    #[arg(long, default_value_t = 200)]
    pub size_retries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GenArgs {
    pub fn params(&self) -> GenParams {
        GenParams {
            n_categories: self.categories,
            rules_per_category: self.rules.0,
            mg_dependents: self.mg_deps.0,
            nmg_dependents: self.nmg_deps,
            mg_fraction: self.mg_fraction,
            max_depth: self.max_depth,
            mg_duration: self.mg_duration.0,
            gap: self.gap.0,
            nmg_duration: self.nmg_duration.0,
            phrase_size: self.phrase_size.0,
            size_retries: self.size_retries,
            seed: self.seed,
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchSummary {
    pub phrases: usize,
    pub solutions: usize,
    pub truncated: usize,
}

/// Parses every phrase of a corpus with its own compiled grammar. Solutions
/// are written to `out_dir`, one file per phrase, named like the truth file.
pub fn parse_manifest(manifest_path: &Path, out_dir: &Path, args: &ParseArgs) -> Result<BatchSummary, CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let roots = if args.roots.is_empty() { vec!["cat:*".to_string()] } else { args.roots.clone() };
    let budget = args.search_budget();
    let per_phrase: Vec<(usize, usize)> = pool(args.jobs)?.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| -> Result<(usize, usize), CliError> {
                let model = compile_dep_grammar(&load_dep_grammar(base.join(&e.grammar_path))?)?;
                let doc = load_annotation(base.join(&e.phrase_path), &model)?;
                let det = annotation_detector(&doc, &model);
                let req = ParseRequest::new(&model, expand_roots(&model, &roots)?, &det)
                    .budget(budget)
                    .emit_partial(args.emit_partial);
                let out = parse(&req)?;
                let n = out.solutions.len();
                let name = Path::new(&e.truth_path).file_name().expect("truth paths name a file");
                let file = SolutionFile { solutions: rank_solutions(out.solutions) };
                write(&out_dir.join(name), &file.to_json())?;
                Ok((n, usize::from(out.truncated)))
            })
            .collect::<Result<_, _>>()
    })?;
    Ok(BatchSummary {
        phrases: per_phrase.len(),
        solutions: per_phrase.iter().map(|p| p.0).sum(),
        truncated: per_phrase.iter().map(|p| p.1).sum(),
    })
}

/// Parses a single annotation and returns the ranked solutions.
pub fn parse_single(model: &Path, annotation: &Path, args: &ParseArgs) -> Result<(SolutionFile, bool), CliError> {
    let model = Model::load(model)?;
    let report = validate_model(&model);
    if !report.is_valid() {
        return Err(ParseError::InvalidModel(report).into());
    }
    let doc = load_annotation(annotation, &model)?;
    let det = annotation_detector(&doc, &model);
    if args.roots.is_empty() {
        return Err(CliError::Usage("--roots is required for a single parse".into()));
    }
    let req = ParseRequest::new(&model, expand_roots(&model, &args.roots)?, &det)
        .budget(args.search_budget())
        .emit_partial(args.emit_partial);
    let out = parse(&req)?;
    Ok((SolutionFile { solutions: rank_solutions(out.solutions) }, out.truncated))
}

fn validate(model: &Path) -> Result<i32, CliError> {
    let model = Model::load(model)?;
    let report: ValidationReport = validate_model(&model);
    println!("{report}");
    Ok(if report.is_valid() { EXIT_OK } else { EXIT_INVALID })
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { model } => validate(&model),
        Command::CompileDep { grammar, out } => {
            let model = compile_dep_grammar(&load_dep_grammar(&grammar)?)?;
            write(&out, &model.to_json())?;
            println!(
                "{} units, {} patterns, {} alternatives",
                model.units.len(),
                model.patterns.len(),
                model.alternatives.len()
            );
            Ok(EXIT_OK)
        }
        Command::Parse(args) => {
            let truncated = match (&args.model, &args.annotation, &args.out, &args.manifest, &args.out_dir) {
                (Some(m), Some(a), Some(o), None, _) => {
                    let (file, truncated) = parse_single(m, a, &args)?;
                    write(o, &file.to_json())?;
                    let note = if truncated { " (truncated)" } else { "" };
                    println!("{} solutions{note}", file.solutions.len());
                    truncated
                }
                (None, None, None, Some(manifest), Some(out_dir)) => {
                    let s = parse_manifest(manifest, out_dir, &args)?;
                    println!("{} phrases, {} solutions, {} truncated", s.phrases, s.solutions, s.truncated);
                    s.truncated > 0
                }
                _ => {
                    return Err(CliError::Usage(
                        "parse needs either -m, -a and -o, or --manifest and --out-dir".into(),
                    ))
                }
            };
            Ok(if truncated && args.strict { EXIT_TRUNCATED } else { EXIT_OK })
        }
        Command::GenGrammar { params, out } => {
            let g = generate_grammar(&params.params())?;
            write(&out, &g.to_json())?;
            println!("{} categories", g.categories.len());
            Ok(EXIT_OK)
        }
        Command::GenCorpus { params, grammars, phrases, out_dir, jobs } => {
            let m = generate_corpus(&params.params(), grammars, phrases, &out_dir, jobs)?;
            println!("{} phrases from {} grammars", m.entries.len(), m.n_grammars);
            Ok(EXIT_OK)
        }
        Command::Eval { solutions_dir, truth_dir, bucket_width, out, jobs } => {
            let reports = pool(jobs)?.install(|| evaluate_dirs(&solutions_dir, &truth_dir))?;
            let summary = summarize(&reports, bucket_width);
            write(&out, &summary.to_csv())?;
            for b in &summary.buckets {
                println!(
                    "size {:>5}: n={:<4} recall={:.3} precision={:.3} mean_fp={:.2}",
                    b.label(),
                    b.n_phrases,
                    b.recall(),
                    b.precision(),
                    b.mean_fp()
                );
            }
            Ok(EXIT_OK)
        }
    }
}

/// Runs one invocation and returns its exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_IO } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

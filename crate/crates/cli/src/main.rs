use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rulemine::bench::{
    baseline_al, baseline_ks, generate_synthetic, mean_recall, run_comparison, sweep, write_csv, RunSummary,
    SweepParam, SyntheticSpec,
};
use rulemine::engine::{write_json_atomic, Checkpoint, Seed, Session, SessionConfig};
use rulemine::index::SketchIndex;
use rulemine::oracle::{Oracle, SimulatedOracle};
use rulemine::theory::ScoreModel;
use rulemine::traversal::Strategy;
use rulemine::{Corpus, CorpusFormat, DocSet, Grammar, GrammarId};
use rulemine_cli::{format_table, split_list, theory_report, TheoryOptions, Verdict};
use rulemine_service::{AppState, Registry};

#[derive(Parser)]
#[command(name = "rulemine", version, about = "Interactive discovery of labeling rules")]
struct Cli {
    /// Data directory (default: $RULEMINE_DATA or ./rulemine-data).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a corpus under a name.
    Ingest {
        #[arg(long)]
        name: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: String,
        /// Overwrite an existing corpus of the same name.
        #[arg(long)]
        replace: bool,
    },
    /// Derivation-sketch indexes.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Run one discovery session.
    Run(RunArgs),
    /// Monte-Carlo checks of the score-model bounds.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
    /// Synthetic corpora, strategy comparisons and parameter sweeps.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Serve the HTTP API (bind address: --addr, or $RULEMINE_ADDR).
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value_t = 1)]
        shards: usize,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        corpus: String,
        #[command(flatten)]
        grammar: GrammarArgs,
        #[arg(long, default_value_t = 1)]
        shards: usize,
    },
}

#[derive(Subcommand)]
enum TheoryCommand {
    Check {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        beta_prime: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 1e4)]
        n: f64,
        #[arg(long, default_value_t = 200)]
        systems: u64,
        /// Smallest set in the approximation systems (default: the lower-bound floor).
        #[arg(long)]
        set_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Write a synthetic labeled corpus and its plant manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        n_sentences: usize,
        #[arg(long, default_value_t = 2_000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 8)]
        planted: usize,
        #[arg(long, default_value_t = 0.05)]
        positive_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Strategies and baselines under several seeds.
    Compare {
        #[command(flatten)]
        session: SessionArgs,
        /// Methods: local, universal, hybrid, highp, highc, al, ks.
        #[arg(long, default_value = "hybrid,local,universal,highp,highc,al,ks")]
        methods: String,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        /// Keywords for the ks baseline (default: the seed rule's words).
        #[arg(long)]
        keywords: Option<String>,
        /// CSV of progressive curves (method,seed,queries,positives,recall).
        #[arg(long)]
        curve_csv: Option<PathBuf>,
        /// CSV of final results (method,param,value,seed,queries,positives,recall,precision,f1).
        #[arg(long)]
        final_csv: Option<PathBuf>,
    },
    /// Vary one parameter: tau, seed_rule or k_candidates.
    Sweep {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        param: String,
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        /// CSV of final results (method,param,value,seed,queries,positives,recall,precision,f1).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct GrammarArgs {
    #[arg(long, default_value = "tokens_regex")]
    grammar: String,
    #[arg(long)]
    depth: Option<usize>,
    /// Gaps per enumerated token pattern.
    #[arg(long)]
    gaps: Option<usize>,
}

impl GrammarArgs {
    fn grammar(&self) -> Result<Grammar> {
        let mut g = Grammar::new(self.grammar.parse::<GrammarId>()?);
        if let Some(d) = self.depth {
            g = g.with_max_depth(d);
        }
        if let Some(x) = self.gaps {
            g = g.with_max_gaps(x);
        }
        g.validate()?;
        Ok(g)
    }
}

#[derive(Args, Clone)]
struct SessionArgs {
    #[arg(long)]
    corpus: String,
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long, conflicts_with = "seed_sentences")]
    seed_rule: Option<String>,
    /// Comma-separated positive sentence ids.
    #[arg(long)]
    seed_sentences: Option<String>,
    #[arg(long, default_value = "hybrid")]
    strategy: String,
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long)]
    candidates: Option<usize>,
    /// Engine seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with a full engine configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    shards: usize,
}

impl SessionArgs {
    fn seed(&self) -> Result<Seed> {
        match (&self.seed_rule, &self.seed_sentences) {
            (Some(r), _) => Ok(Seed::Rule(r.clone())),
            (None, Some(s)) => Ok(Seed::Sentences(
                split_list(s)
                    .iter()
                    .map(|x| x.parse().with_context(|| format!("sentence id {x:?}")))
                    .collect::<Result<_>>()?,
            )),
            (None, None) => bail!("give --seed-rule or --seed-sentences"),
        }
    }

    fn config(&self) -> Result<SessionConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("{}", p.display()))?)?,
            None => SessionConfig::default(),
        };
        cfg.strategy = self.strategy.parse::<Strategy>()?;
        cfg.budget = self.budget;
        cfg.seed = self.seed;
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(k) = self.candidates {
            cfg.candidates = k;
        }
        Ok(cfg)
    }

    fn load(&self, registry: &Registry) -> Result<(Arc<Corpus>, Arc<SketchIndex>)> {
        if !registry.exists(&self.corpus) {
            bail!("unknown corpus {:?}; register it with `rulemine ingest`", self.corpus);
        }
        let corpus = registry.load_corpus(&self.corpus)?;
        let index = registry.load_index(&self.corpus, &corpus, &self.grammar.grammar()?, self.shards)?;
        Ok((Arc::new(corpus), Arc::new(index)))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    /// Gold labels over the full coverage.
    Simulated,
    /// Ask on the terminal.
    Prompt,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, value_enum, default_value = "simulated")]
    oracle: OracleKind,
    /// Directory for results.json, rules.json, positives.json, metrics.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint written after every answer.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let registry = match &cli.data {
        Some(d) => Registry::open(d)?,
        None => Registry::from_env()?,
    };
    match cli.command {
        Command::Ingest {
            name,
            input,
            format,
            replace,
        } => {
            let corpus = Corpus::load(&input, format.parse::<CorpusFormat>()?)?;
            let info = registry.ingest(&name, &corpus, replace)?;
            println!("{}", serde_json::to_string(&info)?);
        }
        Command::Index {
            command: IndexCommand::Build { corpus, grammar, shards },
        } => {
            let g = grammar.grammar()?;
            let c = registry.load_corpus(&corpus).with_context(|| format!("corpus {corpus:?}"))?;
            let start = Instant::now();
            let index = registry.build_index(&corpus, &c, &g, shards)?;
            println!(
                "indexed {} of {} sentences ({}, depth {}, gaps {}) in {:.1}s -> {}",
                index.as_dyn().indexed_count(),
                c.len(),
                g.id,
                g.max_depth,
                g.max_gaps,
                start.elapsed().as_secs_f64(),
                registry.index_path(&corpus, &g)?.display()
            );
        }
        Command::Run(args) => run_session(&registry, &args)?,
        Command::Theory {
            command:
                TheoryCommand::Check {
                    theta,
                    beta,
                    beta_prime,
                    epsilon,
                    trials,
                    n,
                    systems,
                    set_size,
                    seed,
                },
        } => {
            let model = ScoreModel::new(theta, beta, beta_prime, epsilon)?;
            let opts = TheoryOptions {
                n,
                trials,
                systems,
                set_size,
                seed,
                ..TheoryOptions::default()
            };
            let rows = theory_report(&model, &opts)?;
            print!("{}", format_table(&rows));
            if rows.iter().any(|r| r.verdict == Verdict::Fail) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench { command } => bench(&registry, command)?,
        Command::Serve { addr, shards } => {
            let addr = addr.unwrap_or_else(rulemine_service::addr_from_env);
            let state = AppState::open(registry, shards)?;
            tokio::runtime::Runtime::new()?.block_on(rulemine_service::serve(state, &addr))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Asks on stdin; `None` at end of input.
fn prompt(session: &Session, stdin: &mut impl BufRead) -> Result<Option<bool>> {
    let q = session.pending().expect("a pending query");
    let mut out = std::io::stdout().lock();
    writeln!(out, "\nquery {}: {}  (covers {} sentences)", q.query_id, q.heuristic, q.coverage_size)?;
    for s in &q.samples {
        let marked: Vec<String> = s
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if s.spans.iter().any(|&(a, b)| (a..b).contains(&i)) {
                    format!("[{t}]")
                } else {
                    t.clone()
                }
            })
            .collect();
        writeln!(out, "  {:>8}  {}", s.id, marked.join(" "))?;
    }
    loop {
        write!(out, "mostly positive? [y/n] ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        match line.trim().to_lowercase().as_str() {
            "y" | "yes" => return Ok(Some(true)),
            "n" | "no" => return Ok(Some(false)),
            _ => writeln!(out, "answer y or n")?,
        }
    }
}

fn run_session(registry: &Registry, args: &RunArgs) -> Result<()> {
    let (corpus, index) = args.session.load(registry)?;
    let mut session = match &args.resume {
        Some(p) => Session::restore(Arc::clone(&corpus), Arc::clone(&index), &Checkpoint::load(p)?)?,
        None => Session::new(
            Arc::clone(&corpus),
            Arc::clone(&index),
            args.session.config()?,
            args.session.seed()?,
        )?,
    };
    let mut simulated = SimulatedOracle::default();
    let mut stdin = std::io::stdin().lock();
    let mut stopped = false;
    while let Some(q) = session.next_query()? {
        let yes = match args.oracle {
            OracleKind::Simulated => {
                let coverage = index.as_dyn().coverage(&q.heuristic)?;
                simulated.answer(&q, &coverage, &corpus)?
            }
            OracleKind::Prompt => match prompt(&session, &mut stdin)? {
                Some(a) => a,
                None => {
                    stopped = true;
                    break;
                }
            },
        };
        session.answer(q.query_id, yes)?;
        if let Some(p) = &args.checkpoint {
            session.checkpoint().save(p)?;
        }
    }
    if let Some(p) = &args.checkpoint {
        session.checkpoint().save(p)?;
    }
    let results = session.results()?;
    if let Some(dir) = &args.out {
        write_outputs(dir, &results)?;
    }
    let m = &results.metrics;
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{} after {}/{} queries: {} rules, {} positives, recall {}, precision {}, held-out f1 {}",
        if stopped { "stopped" } else { "done" },
        m.queries_used,
        m.budget,
        m.rules,
        m.positives,
        fmt(m.recall),
        fmt(m.precision),
        fmt(m.classifier.as_ref().map(|c| c.f1))
    );
    for r in &results.rules {
        println!("  {}  {}  ({} sentences)", r.name, r.pattern, r.coverage_size);
    }
    Ok(())
}

fn write_outputs(dir: &Path, results: &rulemine::engine::Results) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    std::fs::write(dir.join("results.json"), results.to_json()?)?;
    write_json_atomic(&dir.join("rules.json"), &results.rules)?;
    write_json_atomic(&dir.join("positives.json"), &results.positives)?;
    write_json_atomic(&dir.join("metrics.json"), &results.metrics)?;
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    split_list(s)
        .iter()
        .map(|x| x.parse().with_context(|| format!("seed {x:?}")))
        .collect()
}

/// Sentences the seed labels positive, for the instance-labeling baselines.
fn seed_positives(corpus: &Corpus, index: &SketchIndex, seed: &Seed) -> Result<DocSet> {
    let mut set = corpus.empty_set();
    match seed {
        Seed::Rule(r) => {
            let h = index.as_dyn().grammar().parse(r)?;
            set.extend(index.as_dyn().coverage(&h)?.into_iter().map(|d| d as usize));
        }
        Seed::Sentences(ids) => {
            for id in ids {
                let d = corpus.doc_of(*id).with_context(|| format!("unknown sentence {id}"))?;
                set.insert(d as usize);
            }
        }
    }
    Ok(set)
}

fn write_rows<T: serde::Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    match path {
        Some(p) => write_csv(std::fs::File::create(p).with_context(|| format!("{}", p.display()))?, rows)?,
        None => write_csv(std::io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn bench(registry: &Registry, command: BenchCommand) -> Result<()> {
    match command {
        BenchCommand::Synth {
            out,
            manifest,
            n_sentences,
            vocab_size,
            planted,
            positive_rate,
            noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_sentences,
                vocab_size,
                n_planted: planted,
                positive_rate,
                noise,
                seed,
                ..SyntheticSpec::default()
            };
            let (corpus, plants) = generate_synthetic(&spec)?;
            corpus.save_jsonl(&out)?;
            if let Some(m) = manifest {
                write_json_atomic(&m, &plants)?;
            }
            println!(
                "{} sentences, {} positives, {} planted phrases -> {}",
                corpus.len(),
                plants.positives,
                plants.plants.len(),
                out.display()
            );
            for p in &plants.plants {
                println!("  {}  precision {:.3}", p.phrase, p.precision());
            }
        }
        BenchCommand::Compare {
            session,
            methods,
            seeds,
            keywords,
            curve_csv,
            final_csv,
        } => {
            let (corpus, index) = session.load(registry)?;
            let seed = session.seed()?;
            let base = session.config()?;
            let seeds = parse_seeds(&seeds)?;
            let mut strategies = Vec::new();
            let mut runs: Vec<RunSummary> = Vec::new();
            let initial = seed_positives(&corpus, &index, &seed)?;
            for m in split_list(&methods) {
                match m.as_str() {
                    "al" => {
                        for &s in &seeds {
                            runs.push(baseline_al(&corpus, &initial, base.budget, s, &base.scorer)?);
                        }
                    }
                    "ks" => {
                        let words = match (&keywords, &seed) {
                            (Some(k), _) => split_list(k),
                            (None, Seed::Rule(r)) => index
                                .as_dyn()
                                .grammar()
                                .parse(r)?
                                .display()
                                .split_whitespace()
                                .filter(|w| w.chars().any(char::is_alphanumeric))
                                .map(String::from)
                                .collect(),
                            (None, Seed::Sentences(_)) => bail!("the ks baseline needs --keywords"),
                        };
                        for &s in &seeds {
                            runs.push(baseline_ks(&corpus, &initial, &words, base.budget, s, &base.scorer)?);
                        }
                    }
                    other => strategies.push(other.parse::<Strategy>()?),
                }
            }
            runs.extend(run_comparison(&corpus, &index, &strategies, &base, &seeds, &seed)?);
            let curves: Vec<_> = runs.iter().flat_map(RunSummary::curve_rows).collect();
            let finals: Vec<_> = runs.iter().map(|r| r.final_row("method", &r.method)).collect();
            if let Some(p) = &curve_csv {
                write_rows(Some(p), &curves)?;
            }
            write_rows(final_csv.as_deref(), &finals)?;
            if final_csv.is_some() {
                for (method, recall) in mean_recall(&runs) {
                    println!("{method:<10} mean recall {recall:.3}");
                }
            }
        }
        BenchCommand::Sweep {
            session,
            param,
            values,
            seeds,
            out,
        } => {
            let (corpus, index) = session.load(registry)?;
            let rows = sweep(
                &corpus,
                &index,
                param.parse::<SweepParam>()?,
                &split_list(&values),
                &session.config()?,
                &session.seed()?,
                &parse_seeds(&seeds)?,
            )?;
            write_rows(out.as_deref(), &rows)?;
        }
    }
    Ok(())
}

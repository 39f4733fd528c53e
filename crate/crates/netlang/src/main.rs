//! Command-line front end: simulate -> induce -> caog -> fuse -> parse
//! -> describe -> eval, every stage file-based and reproducible from
//! its seed. Data goes to files, diagnostics to stderr. Exit status 0
//! on success, 1 on domain errors, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netlang::caog::{build_caog, relevance_scores, CaogConfig, Estimator};
use netlang::error::Error;
use netlang::fol::{describe_aog, describe_pg, render_numbered};
use netlang::fusion::{fuse, link_s_to_t, link_t_to_c, StcAog};
use netlang::grammar::Grammar;
use netlang::induction::{induce_layers, log_to_csv, InductionConfig};
use netlang::manifest::ManifestBuilder;
use netlang::naming::NamingMap;
use netlang::parsing::{viterbi_parse, ParseGraph};
use netlang::sim::{eval_to_csv, run_policy_eval, simulate, SimConfig};
use netlang::trace::Corpus;

#[derive(Parser)]
#[command(name = "netlang", version, about = "Network-language toolkit: grammar induction, fusion, interpretation and offload-policy evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArgs {
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offloading trace corpus.
    Simulate {
        #[command(flatten)]
        out: OutArgs,
        /// Simulator configuration JSON; defaults are built in.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of tasks (overrides the config).
        #[arg(long)]
        n: Option<usize>,
        /// Seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Policy: stochastic, O_c, O_r or O_e (overrides the config).
        #[arg(long)]
        policy: Option<String>,
    },
    /// Induce a layer grammar from traces.
    Induce {
        #[command(flatten)]
        out: OutArgs,
        /// Trace corpus (JSONL).
        #[arg(long)]
        traces: PathBuf,
        /// Layer: S or T.
        #[arg(long)]
        layer: String,
        /// Iteration log CSV path.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Induction configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fragment naming map JSON (defaults to the shipped map).
        #[arg(long)]
        names: Option<PathBuf>,
        /// Seed recorded in the run manifest.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the causal grammar from feature records.
    Caog {
        #[command(flatten)]
        out: OutArgs,
        /// Trace corpus (JSONL) carrying feature records.
        #[arg(long)]
        data: PathBuf,
        /// Intent feature id.
        #[arg(long, default_value = "F0")]
        intent: String,
        /// Relevance score CSV path.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Estimator: mutual-information or abs-correlation.
        #[arg(long, default_value = "mutual-information")]
        estimator: String,
        #[arg(long, default_value_t = 2)]
        top_k: usize,
        #[arg(long, default_value_t = 4)]
        bins: usize,
        #[arg(long, default_value_t = 1)]
        max_depth: usize,
    },
    /// Fuse the three layer grammars into an STC-AOG.
    Fuse {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        s: PathBuf,
        #[arg(long)]
        t: PathBuf,
        #[arg(long)]
        c: PathBuf,
        /// Trace corpus used to estimate the cross-link probabilities.
        #[arg(long)]
        traces: PathBuf,
        /// Induction configuration JSON (matching the induce run).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        names: Option<PathBuf>,
    },
    /// Interpret traces against an STC-AOG (one parse graph per line).
    Parse {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        aog: PathBuf,
        #[arg(long)]
        traces: PathBuf,
    },
    /// Render an STC-AOG (or one parse graph) as first-order logic.
    Describe {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        aog: PathBuf,
        /// Parse graph file (exactly one JSON line); omit to describe
        /// the whole grammar.
        #[arg(long)]
        pg: Option<PathBuf>,
    },
    /// Compare offload decision policies.
    Eval {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated policies; must include stochastic.
        #[arg(long, default_value = "stochastic,human-prior,intent-feature")]
        policies: String,
        #[arg(long, default_value_t = 5000)]
        episodes: usize,
        #[arg(long, default_value_t = 200)]
        window: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export a grammar or an STC-AOG as DOT.
    ExportDot {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, conflicts_with = "aog")]
        grammar: Option<PathBuf>,
        #[arg(long)]
        aog: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn check_out(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure {
            code: 1,
            message: format!("output-exists: {} (pass --force to overwrite)", path.display()),
        });
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            std::fs::create_dir_all(parent).map_err(|e| Failure {
                code: 1,
                message: format!("io: cannot create {}: {e}", parent.display()),
            })?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: 1,
        message: format!("io: cannot write {}: {e}", path.display()),
    })
}

fn load_sim_config(path: &Option<PathBuf>) -> Result<SimConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::from)?;
            Ok(SimConfig::from_json(&text)?)
        }
        None => Ok(SimConfig::default()),
    }
}

fn load_induction_config(path: &Option<PathBuf>) -> Result<InductionConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::from)?;
            Ok(serde_json::from_str(&text).map_err(Error::from)?)
        }
        None => Ok(InductionConfig::default()),
    }
}

fn load_names(path: &Option<PathBuf>) -> Result<NamingMap, Failure> {
    match path {
        Some(p) => Ok(NamingMap::load(p)?),
        None => Ok(NamingMap::shipped()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { out, config, n, seed, policy } => {
            check_out(&out.out, out.force)?;
            let mut sim_config = load_sim_config(&config)?;
            if let Some(n) = n {
                sim_config.n_tasks = n;
            }
            if let Some(seed) = seed {
                sim_config.seed = seed;
            }
            if let Some(policy) = policy {
                sim_config.policy = policy;
            }
            let output = simulate(&sim_config)?;
            output.corpus.save(&out.out)?;
            let mut manifest = ManifestBuilder::new("simulate");
            manifest.seed(sim_config.seed).input_value("config", &sim_config.to_json());
            manifest.output(&out.out);
            manifest.write()?;
        }
        Command::Induce { out, traces, layer, log, config, names, seed } => {
            check_out(&out.out, out.force)?;
            if let Some(log) = &log {
                check_out(log, out.force)?;
            }
            let corpus = Corpus::load(&traces)?;
            let induction_config = load_induction_config(&config)?;
            let naming = load_names(&names)?;
            let layered = induce_layers(&corpus, &induction_config, &naming)?;
            let grammar = match layer.as_str() {
                "S" | "s" | "Spatial" => layered.s,
                "T" | "t" | "Temporal" => layered.t,
                other => return Err(usage(format!("unknown layer {other:?}; expected S or T"))),
            };
            write_file(&out.out, &(grammar.to_json() + "\n"))?;
            if let Some(log_path) = &log {
                write_file(log_path, &log_to_csv(&layered.log))?;
            }
            eprintln!(
                "induced {} fragments ({} in the reduced alphabet)",
                layered.log.iter().filter(|r| r.fragment.starts_with("And") || r.fragment.starts_with("Or")).count(),
                layered.fragment_alphabet.len()
            );
            let mut manifest = ManifestBuilder::new("induce");
            manifest.seed(seed.unwrap_or(induction_config.seed));
            manifest.input_file(&traces)?;
            manifest.input_value("layer", &layer);
            manifest.input_value("config", &serde_json::to_string(&induction_config).map_err(Error::from)?);
            manifest.output(&out.out);
            if let Some(log_path) = &log {
                manifest.output(log_path);
            }
            manifest.write()?;
        }
        Command::Caog { out, data, intent, scores, estimator, top_k, bins, max_depth } => {
            check_out(&out.out, out.force)?;
            if let Some(scores_path) = &scores {
                check_out(scores_path, out.force)?;
            }
            let corpus = Corpus::load(&data)?;
            let records: Vec<_> = corpus.records.iter().filter_map(|t| t.features.clone()).collect();
            let estimator = Estimator::from_id(&estimator)
                .ok_or_else(|| usage(format!("unknown estimator {estimator:?}")))?;
            let config = CaogConfig { estimator, top_k, bins, max_depth };
            let grammar = build_caog(&records, &intent, &config)?;
            write_file(&out.out, &(grammar.to_json() + "\n"))?;
            if let Some(scores_path) = &scores {
                let relevance = relevance_scores(&records, &intent, &config)?;
                write_file(scores_path, &relevance.to_csv())?;
                eprintln!("consistency: {}", relevance.consistency);
            }
            let mut manifest = ManifestBuilder::new("caog");
            manifest.input_file(&data)?;
            manifest.input_value("intent", &intent);
            manifest.input_value("config", &serde_json::to_string(&config).map_err(Error::from)?);
            manifest.output(&out.out);
            if let Some(scores_path) = &scores {
                manifest.output(scores_path);
            }
            manifest.write()?;
        }
        Command::Fuse { out, s, t, c, traces, config, names } => {
            check_out(&out.out, out.force)?;
            let s_grammar = Grammar::from_json(&std::fs::read_to_string(&s).map_err(Error::from)?)?;
            let t_grammar = Grammar::from_json(&std::fs::read_to_string(&t).map_err(Error::from)?)?;
            let c_grammar = Grammar::from_json(&std::fs::read_to_string(&c).map_err(Error::from)?)?;
            let corpus = Corpus::load(&traces)?;
            let induction_config = load_induction_config(&config)?;
            let naming = load_names(&names)?;
            let layered = induce_layers(&corpus, &induction_config, &naming)?;
            let (links_ts, warnings) = link_s_to_t(&s_grammar, &t_grammar, &layered.uses)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let tagged: Vec<_> = corpus
                .records
                .iter()
                .filter_map(|t| Some((t.op.clone()?, t.features.clone()?)))
                .collect();
            let (links_ct, exogenous) = link_t_to_c(&t_grammar, &c_grammar, &tagged)?;
            for v in &exogenous {
                eprintln!("warning: value {v} has no operation link; marked exogenous");
            }
            let fused = fuse(s_grammar, t_grammar, c_grammar, links_ts, links_ct)?;
            write_file(&out.out, &(fused.to_json() + "\n"))?;
            let mut manifest = ManifestBuilder::new("fuse");
            for input in [&s, &t, &c, &traces] {
                manifest.input_file(input)?;
            }
            manifest.output(&out.out);
            manifest.write()?;
        }
        Command::Parse { out, aog, traces } => {
            check_out(&out.out, out.force)?;
            let fused = StcAog::from_json(&std::fs::read_to_string(&aog).map_err(Error::from)?)?;
            let corpus = Corpus::load(&traces)?;
            let mut lines = String::new();
            for trace in &corpus.records {
                let pg = viterbi_parse(&fused, trace)?;
                lines.push_str(&pg.to_json());
                lines.push('\n');
            }
            write_file(&out.out, &lines)?;
            let mut manifest = ManifestBuilder::new("parse");
            manifest.input_file(&aog)?;
            manifest.input_file(&traces)?;
            manifest.output(&out.out);
            manifest.write()?;
        }
        Command::Describe { out, aog, pg } => {
            check_out(&out.out, out.force)?;
            let fused = StcAog::from_json(&std::fs::read_to_string(&aog).map_err(Error::from)?)?;
            let sentences = match &pg {
                None => describe_aog(&fused)?,
                Some(pg_path) => {
                    let text = std::fs::read_to_string(pg_path).map_err(Error::from)?;
                    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
                    if lines.len() != 1 {
                        return Err(usage(format!(
                            "--pg expects exactly one parse graph, found {}",
                            lines.len()
                        )));
                    }
                    let graph = ParseGraph::from_json(lines[0])?;
                    describe_pg(&graph, &fused)?
                }
            };
            write_file(&out.out, &render_numbered(&sentences))?;
            let mut manifest = ManifestBuilder::new("describe");
            manifest.input_file(&aog)?;
            if let Some(pg_path) = &pg {
                manifest.input_file(pg_path)?;
            }
            manifest.output(&out.out);
            manifest.write()?;
        }
        Command::Eval { out, config, policies, episodes, window, seed } => {
            check_out(&out.out, out.force)?;
            let mut sim_config = load_sim_config(&config)?;
            if let Some(seed) = seed {
                sim_config.seed = seed;
            }
            let policy_list: Vec<String> = policies.split(',').map(|s| s.trim().to_string()).collect();
            let output = run_policy_eval(&sim_config, &policy_list, episodes, window)?;
            write_file(&out.out, &eval_to_csv(&output.rows))?;
            for (policy, rate) in &output.mean_failure {
                eprintln!("{policy}: mean failure rate {rate:.4}");
            }
            eprintln!("intent features: {}", output.intent_features.join(","));
            let mut manifest = ManifestBuilder::new("eval");
            manifest.seed(sim_config.seed);
            manifest.input_value("config", &sim_config.to_json());
            manifest.input_value("policies", &policies);
            manifest.input_value("episodes", &episodes.to_string());
            manifest.input_value("window", &window.to_string());
            manifest.output(&out.out);
            manifest.write()?;
        }
        Command::ExportDot { out, grammar, aog } => {
            check_out(&out.out, out.force)?;
            let dot = match (&grammar, &aog) {
                (Some(path), None) => {
                    Grammar::from_json(&std::fs::read_to_string(path).map_err(Error::from)?)?
                        .export_dot()?
                }
                (None, Some(path)) => {
                    StcAog::from_json(&std::fs::read_to_string(path).map_err(Error::from)?)?
                        .export_dot()?
                }
                _ => return Err(usage("pass exactly one of --grammar or --aog")),
            };
            write_file(&out.out, &dot)?;
            let mut manifest = ManifestBuilder::new("export-dot");
            if let Some(path) = grammar.as_ref().or(aog.as_ref()) {
                manifest.input_file(path)?;
            }
            manifest.output(&out.out);
            manifest.write()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

//! `aware-opt`: features, validation, knowledge base upkeep, agent episodes,
//! benchmark evaluation and dataset export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use aware_core::agent::{
    run_episode, CaseStudyPolicy, ChatClient, Policy, PolicyEndpoint, RemotePolicy, RetrievalPolicy, Trajectory,
};
use aware_core::config::Config;
use aware_core::dataset::build_dataset;
use aware_core::env::{CompilerConfig, Environment, LlvmEnv, StaticEnv};
use aware_core::features::extract_features;
use aware_core::harness::{compare_report, evaluate_method, BenchmarkManifest, EvalReport, Method, PolicyFactory};
use aware_core::ir::parse_ir;
use aware_core::kb::{EmpiricalEntry, KnowledgeBase};
use aware_core::passes::{parse_flags, render_flags, repair_sequence, split_flag_list, validate_sequence, PassCatalog};
use aware_core::search::{genetic_search, seed_from_search, SearchConfig};

#[derive(Parser)]
#[command(name = "aware-opt", version, about = "Knowledge-guided LLVM pass-sequence agent harness")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Knowledge base file; defaults to the built-in seed.
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    /// `opt` binary; otherwise AWARE_OPT_BIN, PATH, then the bundled shim.
    #[arg(long, global = true)]
    opt: Option<PathBuf>,
    /// Table-driven environment (JSON) instead of a real compiler.
    #[arg(long, global = true)]
    static_env: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the feature vector of an IR file as JSON.
    Features { ir: PathBuf },
    /// Check a comma-separated flag sequence against a constraint table.
    Validate {
        #[arg(long)]
        flags: String,
        /// `production`, `curated`, or a catalog JSON file.
        #[arg(long, default_value = "curated")]
        catalog: String,
        #[arg(long)]
        repair: bool,
    },
    /// Inspect or grow the knowledge base.
    Kb {
        #[command(subcommand)]
        cmd: KbCmd,
    },
    /// Evaluate a method over a benchmark manifest.
    Eval {
        #[arg(long, default_value = "corpus/manifest.json")]
        manifest: PathBuf,
        /// oz, o1, o2, o3, agent, or flags:<csv>.
        #[arg(long)]
        method: String,
        #[arg(long, value_enum, default_value = "retrieval")]
        policy: PolicyArg,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append agent trajectories to this JSONL file.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Agent episodes.
    Agent {
        #[command(subcommand)]
        cmd: AgentCmd,
    },
    /// Compare saved reports.
    Report {
        #[command(subcommand)]
        cmd: ReportCmd,
    },
    /// Turn trajectories into training data.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
}

#[derive(Subcommand)]
enum KbCmd {
    Stats,
    /// Top-k retrieval for an IR file.
    Query {
        ir: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
    /// Record a measured sequence for an IR file.
    Insert {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        flags: String,
        #[arg(long, allow_hyphen_values = true)]
        effect: f64,
        #[arg(long, default_value = "manual")]
        provenance: String,
    },
    /// Black-list a sequence.
    Negative {
        #[arg(long)]
        flags: String,
        #[arg(long, allow_hyphen_values = true)]
        score: f64,
    },
    /// Search every manifest program and store sequences that beat -Oz.
    Seed {
        #[arg(long, default_value = "corpus/manifest.json")]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        per_program: usize,
        #[arg(long, default_value_t = 24)]
        population: usize,
        #[arg(long, default_value_t = 10)]
        generations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum AgentCmd {
    Run {
        #[arg(long)]
        program: String,
        #[arg(long, default_value = "corpus/manifest.json")]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "retrieval")]
        policy: PolicyArg,
        /// Repair the answer before compiling it.
        #[arg(long)]
        repair: bool,
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Write the knowledge base back to --kb after the episode.
        #[arg(long)]
        save_kb: bool,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        sft: Option<PathBuf>,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        min_effect: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Retrieval,
    CaseStudy,
    Remote,
}

struct Ctx {
    cfg: Config,
    kb_path: Option<PathBuf>,
    opt: Option<PathBuf>,
    static_env: Option<PathBuf>,
}

impl Ctx {
    fn catalog() -> Arc<PassCatalog> {
        Arc::new(PassCatalog::production().clone())
    }

    fn kb(&self) -> Result<KnowledgeBase> {
        let mut kb = match self.kb_path.as_ref().or(self.cfg.kb.path.as_ref()) {
            Some(p) if p.exists() => KnowledgeBase::load(p, Self::catalog()).with_context(|| p.display().to_string())?,
            Some(_) | None => KnowledgeBase::seeded(),
        };
        kb.alpha = self.cfg.kb.alpha;
        kb.epsilon = self.cfg.kb.epsilon;
        Ok(kb)
    }

    fn save_kb(&self, kb: &KnowledgeBase) -> Result<()> {
        let Some(p) = self.kb_path.as_ref().or(self.cfg.kb.path.as_ref()) else {
            bail!("no knowledge base path; pass --kb");
        };
        kb.persist(p)?;
        Ok(())
    }

    fn env(&self, manifest: &BenchmarkManifest) -> Result<Box<dyn Environment>> {
        if let Some(p) = &self.static_env {
            let env: StaticEnv = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            return Ok(Box::new(env));
        }
        let workdir = self.cfg.env.workdir.clone().unwrap_or_else(std::env::temp_dir);
        let mut cc = match self.opt.as_ref().or(self.cfg.env.opt.as_ref()) {
            Some(o) => CompilerConfig::new(o, workdir)?,
            None => CompilerConfig::discover(workdir)?,
        };
        if let Some(s) = self.cfg.env.timeout_secs {
            cc = cc.with_timeout(Duration::from_secs(s));
        }
        log::info!("using {} ({:?})", cc.opt_binary.display(), cc.flag_style);
        Ok(Box::new(LlvmEnv::new(cc, manifest.registry())))
    }

    fn policy_factory(&self, arg: PolicyArg) -> Result<PolicyFactory> {
        Ok(match arg {
            PolicyArg::Retrieval => Arc::new(|| Box::new(RetrievalPolicy) as Box<dyn Policy>),
            PolicyArg::CaseStudy => Arc::new(|| Box::new(CaseStudyPolicy::default()) as Box<dyn Policy>),
            PolicyArg::Remote => {
                let mut ep = PolicyEndpoint::from_env()?;
                ep.temperature = self.cfg.agent.temperature;
                ep.max_turns = self.cfg.agent.max_turns;
                let client = ChatClient::new(&ep)?;
                Arc::new(move || Box::new(RemotePolicy { client: client.clone() }) as Box<dyn Policy>)
            }
        })
    }
}

fn append_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn load_catalog(spec: &str) -> Result<PassCatalog> {
    Ok(match spec {
        "production" => PassCatalog::production().clone(),
        "curated" => PassCatalog::curated().clone(),
        path => PassCatalog::load(Path::new(path))?,
    })
}

fn features_of(path: &Path) -> Result<aware_core::features::FeatureVector> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(extract_features(&parse_ir(&text)?))
}

/// Returns `false` when an invariant was violated.
fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        cfg,
        kb_path: cli.kb,
        opt: cli.opt,
        static_env: cli.static_env,
    };
    match cli.cmd {
        Cmd::Features { ir } => {
            println!("{}", features_of(&ir)?.to_json());
        }
        Cmd::Validate { flags, catalog, repair } => {
            let catalog = load_catalog(&catalog)?;
            let seq = parse_flags(&split_flag_list(&flags), &catalog)?;
            let report = validate_sequence(&seq, &catalog);
            for v in &report.violations {
                println!("violation: {v}");
            }
            println!("valid: {}", report.valid);
            if repair && !report.valid {
                let fixed = repair_sequence(&seq, &catalog)?;
                println!("repaired: {}", render_flags(&fixed.sequence, &catalog)?.join(","));
            }
            return Ok(report.valid);
        }
        Cmd::Kb { cmd } => return kb_cmd(&ctx, cmd),
        Cmd::Eval {
            manifest,
            method,
            policy,
            workers,
            out,
            trajectories,
        } => {
            let manifest = BenchmarkManifest::load(&manifest)?;
            let env = ctx.env(&manifest)?;
            let kb = RwLock::new(ctx.kb()?);
            let method = match method.as_str() {
                "agent" => Method::Agent(ctx.policy_factory(policy)?),
                m => Method::parse(m)?,
            };
            let mut opts = ctx.cfg.eval_options();
            if let Some(w) = workers {
                opts.workers = w;
            }
            let report = evaluate_method(&manifest, &method, env.as_ref(), &kb, &opts)?;
            print_report(&report);
            if let Some(p) = out {
                report.save(&p)?;
            }
            if let Some(p) = trajectories {
                append_jsonl(&p, &report.trajectories)?;
            }
            let violations = report.invariant_violations();
            for v in &violations {
                eprintln!("invariant violated: {v}");
            }
            return Ok(violations.is_empty());
        }
        Cmd::Agent {
            cmd:
                AgentCmd::Run {
                    program,
                    manifest,
                    policy,
                    repair,
                    trajectories,
                    save_kb,
                },
        } => {
            let manifest = BenchmarkManifest::load(&manifest)?;
            let env = ctx.env(&manifest)?;
            let kb = RwLock::new(ctx.kb()?);
            let mut episode = ctx.cfg.episode();
            episode.repair |= repair;
            let mut p = ctx.policy_factory(policy)?();
            let t = run_episode(&program, p.as_mut(), &kb, env.as_ref(), &episode)?;
            print_trajectory(&t);
            if let Some(path) = trajectories {
                append_jsonl(&path, std::slice::from_ref(&t))?;
            }
            if save_kb {
                ctx.save_kb(&kb.into_inner().unwrap_or_else(|e| e.into_inner()))?;
            }
            let answer_ok = t.rewards.answer == 0
                || t.final_result.as_ref().is_some_and(|r| r.is_success());
            return Ok(answer_ok && t.assistant_turns() <= episode.max_turns);
        }
        Cmd::Report {
            cmd: ReportCmd::Compare { a, b, csv },
        } => {
            let c = compare_report(&EvalReport::load(&a)?, &EvalReport::load(&b)?)?;
            print!("{}", c.to_text());
            if let Some(p) = csv {
                std::fs::write(p, c.to_csv()?)?;
            }
        }
        Cmd::Dataset {
            cmd:
                DatasetCmd::Build {
                    from,
                    records,
                    sft,
                    min_effect,
                },
        } => {
            if !(-1.0..=1.0).contains(&min_effect) {
                bail!("--min-effect must be in [-1, 1]");
            }
            let mut ts: Vec<Trajectory> = Vec::new();
            for (i, line) in BufReader::new(File::open(&from)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                ts.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", from.display(), i + 1))?);
            }
            let s = build_dataset(&ts, min_effect);
            if let Some(p) = records {
                write_jsonl(&p, &s.records)?;
            }
            if let Some(p) = sft {
                write_jsonl(&p, &s.samples)?;
            }
            println!(
                "trajectories: {}  records: {}  sft samples: {}  rejected records: {}  rejected samples: {}  below min effect: {}",
                ts.len(),
                s.records.len(),
                s.samples.len(),
                s.rejected_records,
                s.rejected_samples,
                s.filtered_out
            );
        }
    }
    Ok(true)
}

fn kb_cmd(ctx: &Ctx, cmd: KbCmd) -> Result<bool> {
    match cmd {
        KbCmd::Stats => {
            let s = ctx.kb()?.stats();
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        KbCmd::Query { ir, k } => {
            let kb = ctx.kb()?;
            let r = kb.retrieve(&features_of(&ir)?, k)?;
            for e in &r.ranked {
                println!(
                    "{:.4}  sim {:.4}  effect {:+.4}  {}  [{}]",
                    e.rank_score,
                    e.similarity,
                    e.entry.effect,
                    render_flags(&e.entry.sequence, kb.symbolic())?.join(" "),
                    e.entry.note
                );
            }
        }
        KbCmd::Insert {
            ir,
            flags,
            effect,
            provenance,
        } => {
            let mut kb = ctx.kb()?;
            let sequence = parse_flags(&split_flag_list(&flags), kb.symbolic())?;
            let note = ir.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let outcome = kb.insert_empirical(EmpiricalEntry {
                features: features_of(&ir)?,
                sequence,
                effect,
                provenance,
                note,
            })?;
            ctx.save_kb(&kb)?;
            println!("{outcome:?}");
        }
        KbCmd::Negative { flags, score } => {
            let mut kb = ctx.kb()?;
            let seq = parse_flags(&split_flag_list(&flags), kb.symbolic())?;
            let removed = kb.insert_negative(seq, score)?;
            ctx.save_kb(&kb)?;
            println!("black-listed; removed {removed} empirical entries");
        }
        KbCmd::Seed {
            manifest,
            out,
            per_program,
            population,
            generations,
            seed,
        } => {
            let manifest = BenchmarkManifest::load(&manifest)?;
            let env = ctx.env(&manifest)?;
            let mut kb = KnowledgeBase::new(Ctx::catalog());
            kb.alpha = ctx.cfg.kb.alpha;
            kb.epsilon = ctx.cfg.kb.epsilon;
            let search = SearchConfig {
                population,
                generations,
                seed,
                ..SearchConfig::default()
            };
            for (i, p) in manifest.programs().enumerate() {
                let cfg = SearchConfig {
                    seed: search.seed.wrapping_add(i as u64),
                    ..search.clone()
                };
                let r = genetic_search(env.as_ref(), &p.id, PassCatalog::production(), &cfg)?;
                let added = seed_from_search(&mut kb, env.as_ref(), &p.id, &r, per_program, "ga-search")?;
                let best = r.ranked.first().and_then(|c| c.improvement_over_oz).unwrap_or(f64::NAN);
                println!("{:<12} evaluations {:>4}  best {:+.4}  added {added}", p.id, r.evaluations, best);
            }
            kb.persist(&out)?;
            println!("{} entries written to {}", kb.empirical().len(), out.display());
        }
    }
    Ok(true)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.2}%", x * 100.0))
}

fn print_report(r: &EvalReport) {
    println!("method {}", r.method);
    for s in &r.suites {
        println!("[{}] average {}  success rate {}", s.name, pct(s.average_reduction), pct(s.success_rate));
        for row in &s.per_program {
            let status = row.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {}", e.lines().next().unwrap_or("")));
            println!(
                "  {:<12} {:>8} -> {:>8}  {:>8}  {}",
                row.id,
                row.ic_unopt.map_or("-".into(), |v| v.to_string()),
                row.ic_method.map_or("-".into(), |v| v.to_string()),
                pct(Some(row.reduction)),
                status
            );
        }
    }
    println!("Avg. {}", pct(r.average_reduction));
}

fn print_trajectory(t: &Trajectory) {
    for turn in &t.turns {
        println!("--- {:?}\n{}", turn.role, turn.raw.trim());
    }
    println!("--- terminated by {:?}", t.terminated_by);
    println!("{}", serde_json::to_string_pretty(&t.rewards).unwrap_or_default());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

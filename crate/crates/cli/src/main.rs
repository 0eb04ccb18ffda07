use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use polylearn_core::agents::{parse_abstraction, Agents, Envelope, Templates};
use polylearn_core::cluster::run_generalization;
use polylearn_core::gateway::{BackendKind, Gateway};
use polylearn_core::metrics::{emit_reports, RepoSnapshot, RunRecord, RUN_JSON};
use polylearn_core::miniworld::{MiniWorld, Phase, ScenarioPack};
use polylearn_core::model::{ComponentId, Domain};
use polylearn_core::orchestrator::{Engine, Mode};
use polylearn_core::repository::{RepoMode, Repository};
use polylearn_core::settings::{Settings, ENV_CONFIG};

// Writes to stdout, propagating errors so a closed pipe ends the program
// quietly instead of panicking.
macro_rules! out {
    ($($t:tt)*) => { write!(io::stdout().lock(), $($t)*)? };
}
macro_rules! outln {
    ($($t:tt)*) => { writeln!(io::stdout().lock(), $($t)*)? };
}

#[derive(Parser)]
#[command(name = "polylearn", version, about = "Learn generalized policies with a reusable component library")]
struct Cli {
    /// Configuration file with [engine] and [gateway] tables.
    #[arg(long, global = true, env = ENV_CONFIG)]
    config: Option<PathBuf>,
    /// Prompt template directory; missing files fall back to the bundled ones.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect the simulated meta-domain.
    Miniworld {
        #[command(subcommand)]
        cmd: MiniworldCmd,
    },
    /// Build a seed library from the training domains.
    Seed {
        #[arg(long, default_value = "bundled")]
        scenarios: String,
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Directory for the repository and the seeding report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a phase of the scenario pack and write reports.
    Run {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value = "bundled")]
        scenarios: String,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long)]
        out: PathBuf,
        /// Starting repository (left untouched; the updated one goes to <out>/repo).
        #[arg(long)]
        repo: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PhaseArg::Test)]
        phase: PhaseArg,
    },
    /// Run one generalization pass over a repository.
    Generalize {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value = "bundled")]
        scenarios: String,
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Where to write the updated repository (default: in place).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect a component repository.
    Repo {
        #[arg(long)]
        repo: PathBuf,
        #[command(subcommand)]
        cmd: RepoCmd,
    },
    /// Agent utilities.
    Agents {
        #[command(subcommand)]
        cmd: AgentsCmd,
    },
    /// Re-render reports from a saved run.json (or the directory holding it).
    Report {
        run: PathBuf,
        /// Output directory (default: next to run.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MiniworldCmd {
    /// Print apps, apis and scenarios.
    Describe {
        #[arg(long, default_value = "bundled")]
        scenarios: String,
    },
}

#[derive(Subcommand)]
enum RepoCmd {
    /// Component counts and usage analytics, as JSON.
    Stats,
    /// One line per live component.
    List,
    /// Full record of one component.
    Show { id: String },
}

#[derive(Subcommand)]
enum AgentsCmd {
    /// Print the exact prompt an agent would receive; no backend is called.
    DryRun {
        #[arg(long)]
        domain: String,
        #[arg(long, value_enum, default_value_t = DryRunAgent::Abstraction)]
        agent: DryRunAgent,
        #[arg(long, default_value = "bundled")]
        scenarios: String,
        /// Abstraction reply to build the generation prompt from.
        #[arg(long)]
        abstraction_reply: Option<PathBuf>,
        #[arg(long)]
        repo: Option<PathBuf>,
        #[arg(long, default_value = "hclgp")]
        mode: Mode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum DryRunAgent {
    Abstraction,
    Generate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

struct Ctx {
    settings: Settings,
    templates: Templates,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let settings = match &cli.config {
            Some(p) => Settings::load(p).map_err(anyhow::Error::msg)?,
            None => Settings::default(),
        };
        let templates = match &cli.templates {
            Some(dir) => Templates::load(dir)?,
            None => Templates::bundled(),
        };
        Ok(Self { settings, templates })
    }

    fn agents(&self, backend: Option<BackendKind>) -> Result<Agents> {
        let mut g = self.settings.gateway.clone().with_env(|k| std::env::var(k).ok())?;
        if let Some(b) = backend {
            g.backend = b;
        }
        Ok(Agents::new(Gateway::from_config(&g)?, self.templates.clone()))
    }

    fn engine(&self, world: &Arc<MiniWorld>, backend: Option<BackendKind>, repo: Repository) -> Result<(Engine, String)> {
        let agents = self.agents(backend)?;
        let name = agents.gateway().backend_name().to_string();
        Ok((Engine::new(self.settings.engine.clone(), agents, world.clone(), repo), name))
    }
}

fn world(scenarios: &str) -> Result<Arc<MiniWorld>> {
    let pack = if scenarios == "bundled" {
        ScenarioPack::bundled()
    } else {
        ScenarioPack::load(Path::new(scenarios)).with_context(|| format!("loading {scenarios}"))?
    };
    Ok(Arc::new(MiniWorld::new(pack)?))
}

fn phase_domains(world: &MiniWorld, phase: PhaseArg) -> Vec<Domain> {
    let pack = world.pack();
    let pick = |p: Phase| pack.domains_in(p).into_iter().cloned();
    match phase {
        PhaseArg::Train => pick(Phase::Train).collect(),
        PhaseArg::Test => pick(Phase::Test).collect(),
        PhaseArg::All => pack.domains.iter().map(|d| d.domain.clone()).collect(),
    }
}

fn load_repo(dir: &Path) -> Result<Repository> {
    if !Repository::exists(dir) {
        bail!("no repository at {}", dir.display());
    }
    Ok(Repository::load(dir)?)
}

fn print_summary(dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(dir.join(polylearn_core::metrics::SUMMARY_TXT))?;
    out!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    let ctx = Ctx::new(&cli)?;
    match cli.cmd {
        Cmd::Miniworld { cmd: MiniworldCmd::Describe { scenarios } } => {
            out!("{}", world(&scenarios)?.describe());
            Ok(true)
        }
        Cmd::Seed { scenarios, backend, out } => {
            let w = world(&scenarios)?;
            let (mut engine, backend_name) = ctx.engine(&w, backend, Repository::new())?;
            let before = RepoSnapshot::of(engine.repository());
            let report = engine.seed_repository(&phase_domains(&w, PhaseArg::Train));
            let solved = report.all_solved();
            let run = RunRecord::capture(&engine, Mode::HclGp, &backend_name, &w.pack().name, report, &before);
            let mut repo = engine.into_repository();
            repo.set_mode(RepoMode::Evaluation);
            repo.save(&out)?;
            let report_dir = out.join("report");
            emit_reports(&report_dir, &run)?;
            print_summary(&report_dir)?;
            outln!("seed library: {} validated components in {}", repo.validated().len(), out.display());
            Ok(solved)
        }
        Cmd::Run { mode, scenarios, backend, out, repo, phase } => {
            let w = world(&scenarios)?;
            let start = match &repo {
                Some(dir) => load_repo(dir)?,
                None => Repository::new(),
            };
            let (mut engine, backend_name) = ctx.engine(&w, backend, start)?;
            let before = RepoSnapshot::of(engine.repository());
            let report = engine.run_suite(&phase_domains(&w, phase), mode);
            let solved = report.all_solved();
            let run = RunRecord::capture(&engine, mode, &backend_name, &w.pack().name, report, &before);
            emit_reports(&out, &run)?;
            if mode == Mode::HclGp {
                engine.into_repository().save(&out.join("repo"))?;
            }
            print_summary(&out)?;
            Ok(solved)
        }
        Cmd::Generalize { repo, threshold, budget, scenarios, backend, out } => {
            let w = world(&scenarios)?;
            let mut config = ctx.settings.engine.clone();
            if let Some(t) = threshold {
                config.cluster_threshold = t;
            }
            if let Some(b) = budget {
                config.debug_budget = b;
            }
            config.validate()?;
            let mut r = load_repo(&repo)?;
            let agents = ctx.agents(backend)?;
            let report = run_generalization(&mut r, &agents, w.as_ref(), &config);
            r.save(out.as_ref().unwrap_or(&repo))?;
            outln!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Cmd::Repo { repo, cmd } => {
            let r = load_repo(&repo)?;
            match cmd {
                RepoCmd::Stats => outln!("{}", serde_json::to_string_pretty(&r.report())?),
                RepoCmd::List => {
                    for s in r.all().iter().filter(|s| !s.tombstoned) {
                        let c = &s.component;
                        outln!("{}\t{}\t{}\t{}", c.id, format!("{:?}", s.store).to_lowercase(), c.provenance.as_str(), c.signature);
                    }
                }
                RepoCmd::Show { id } => {
                    let s = r.stored(&ComponentId(id.clone())).with_context(|| format!("no component {id}"))?;
                    outln!("{}", serde_json::to_string_pretty(s)?);
                }
            }
            Ok(true)
        }
        Cmd::Agents { cmd: AgentsCmd::DryRun { domain, agent, scenarios, abstraction_reply, repo, mode } } => {
            let w = world(&scenarios)?;
            let d = w.pack().scenario(&domain).with_context(|| format!("no domain {domain}"))?.domain.clone();
            // The gateway is built but never called.
            let agents = Agents::new(Gateway::scripted(Default::default()), ctx.templates.clone());
            let prompt = match agent {
                DryRunAgent::Abstraction => agents.abstraction_prompt(&d)?,
                DryRunAgent::Generate => {
                    let path = abstraction_reply.context("--agent generate needs --abstraction-reply <file>")?;
                    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                    let abstraction = parse_abstraction(&Envelope::parse(&text).map_err(anyhow::Error::msg)?, &d)?;
                    let start = match &repo {
                        Some(dir) => load_repo(dir)?,
                        None => Repository::new(),
                    };
                    let engine = Engine::new(ctx.settings.engine.clone(), agents, w.clone(), start);
                    let gen_ctx = engine.generation_context(&abstraction, mode);
                    engine.agents().generate_prompt(&d.id, &abstraction, &gen_ctx)?
                }
            };
            out!("{prompt}");
            Ok(true)
        }
        Cmd::Report { run, out } => {
            let file = if run.is_dir() { run.join(RUN_JSON) } else { run.clone() };
            let record = RunRecord::load(&file)?;
            let dir = out.unwrap_or_else(|| file.parent().map(Path::to_path_buf).unwrap_or_default());
            emit_reports(&dir, &record)?;
            print_summary(&dir)?;
            Ok(record.results.iter().all(|r| r.solved()))
        }
    }
}

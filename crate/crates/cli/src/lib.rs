//! Command surface of the refinement pipeline.
//!
//! Every command reads the run directory given by `--out` and writes only to
//! its own subdirectory of it:
//!
//! ```text
//! <out>/data/             gen-data     images/*.ppm, manifest.jsonl
//! <out>/embed/            train-embed  head.ckpt, log.csv
//! <out>/agent/<tag>/      train-agent  agent.ckpt, log.csv
//! <out>/eval/<label>/     evaluate     cmc.csv, summary.csv, cmc.svg
//! <out>/refine/           refine       <stem>.json, <stem>.ppm
//! <out>/oracle/           oracle       train-<index>.json
//! <out>/report/           report       report.csv, ablation.csv
//! ```

pub mod config;
mod report;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use iiprl_core::agent::{
    deploy_policy, load_agent, save_agent, train, AgentCheckpoint, EpochLog, ReferenceMode, TrainingSet,
};
use iiprl_core::embedding::{train_identity_head, Embedder, IdentityHead};
use iiprl_core::environment::{ActionSet, EnvConfig, Window};
use iiprl_core::evaluation::{evaluate_agent, evaluate_baseline, evaluate_windows, Baseline, QueryMode, Summary};
use iiprl_core::imaging::{crop_resize, decode_ppm, encode_ppm, load_dataset, write_dataset, Sample, Split};
use iiprl_core::numerics::checkpoint::Checkpoint;
use iiprl_core::oracle::exhaustive_best_sequence;
use iiprl_core::rewards::{context_for, has_references, sample_references, RewardKind};
use iiprl_core::seed;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "iiprl", version, about = "Learned refinement of detected person boxes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset, or copy `data.source`.
    GenData,
    /// Train the identity head that embeds windows.
    TrainEmbed,
    /// Train the refinement agent.
    TrainAgent(AgentArgs),
    /// Rank the gallery for every probe under a window policy.
    Evaluate(EvalArgs),
    /// Refine one image with a trained agent.
    Refine(RefineArgs),
    /// Exhaustively search the best action sequence for training images.
    Oracle(OracleArgs),
    /// Join every evaluation into one comparison table.
    Report,
}

#[derive(Debug, Clone, Args)]
pub struct AgentArgs {
    #[arg(long, value_parser = parse_reward)]
    pub reward: Option<RewardKind>,
    /// Action scale set, as fractions or percentages (`0.05,0.1,0.2` or `5,10,20`).
    #[arg(long, value_parser = parse_scales)]
    pub scales: Option<ActionSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Full detection window.
    None,
    /// Randomly placed window of a random ratio, averaged over ten repeats.
    Random,
    /// One centred window per ratio.
    Centre,
    /// The generator's ground-truth person box.
    Truth,
    /// Greedy rollout of a trained agent.
    Iiprl,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "none")]
    pub policy: PolicyArg,
    #[command(flatten)]
    pub agent: AgentArgs,
    /// Ratio list for the centre and random policies.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_query)]
    pub query: Option<QueryMode>,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    /// Binary PPM image to refine.
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Indices into the training split.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub index: Vec<usize>,
    #[arg(long, value_parser = parse_reward)]
    pub reward: Option<RewardKind>,
    #[arg(long, value_parser = parse_scales)]
    pub scales: Option<ActionSet>,
}

fn parse_reward(s: &str) -> Result<RewardKind, String> {
    s.parse().map_err(|e: iiprl_core::Error| e.to_string())
}

fn parse_query(s: &str) -> Result<QueryMode, String> {
    s.parse().map_err(|e: iiprl_core::Error| e.to_string())
}

fn parse_scales(s: &str) -> Result<ActionSet, String> {
    let values = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<f64>, String>>()?;
    let percent = values.iter().any(|&v| v >= 1.0);
    let values = values.into_iter().map(|v| if percent { v / 100.0 } else { v }).collect();
    ActionSet::new(values).map_err(|e| e.to_string())
}

/// A prerequisite artifact that an earlier command produces.
#[derive(Debug)]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub command: String,
}

impl std::fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} not found; run {} first", self.path.display(), self.command)
    }
}

impl std::error::Error for MissingArtifact {}

fn require(path: PathBuf, command: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingArtifact { path, command: command.into() }.into())
    }
}

/// Renders an error chain on one line, prefixed with a stable category.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = if err.downcast_ref::<MissingArtifact>().is_some() {
        "missing-prerequisite"
    } else {
        "failed"
    };
    let msg = err
        .chain()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(": ")
        .replace(['\n', '\r'], " ");
    format!("error: {kind}: {msg}")
}

/// Resolved configuration and run directory shared by all commands.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let mut config = match &global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = global.seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(Run { config, out: global.out.clone() })
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self) -> Result<Vec<Sample>> {
        let dir = require(self.dir("data").join("manifest.jsonl"), "gen-data")?;
        load_dataset(dir.parent().expect("manifest has a parent"))
            .with_context(|| format!("loading {}", self.dir("data").display()))
    }

    fn embedder(&self) -> Result<Embedder> {
        let path = require(self.dir("embed").join("head.ckpt"), "train-embed")?;
        let head = IdentityHead::from_checkpoint(&Checkpoint::read(&path)?)?;
        Ok(Embedder::new(head)?)
    }

    fn env_for(&self, scales: &Option<ActionSet>) -> EnvConfig {
        let mut env = self.config.agent.env.clone();
        if let Some(s) = scales {
            env.scales = s.clone();
        }
        env
    }

    fn agent_tag(reward: RewardKind, env: &EnvConfig) -> String {
        format!("{}-{}", reward.name(), env.scales.tag())
    }

    fn agent(&self, args: &AgentArgs) -> Result<(String, AgentCheckpoint)> {
        let reward = args.reward.unwrap_or(self.config.agent.reward);
        let tag = Self::agent_tag(reward, &self.env_for(&args.scales));
        let path = require(
            self.dir("agent").join(&tag).join("agent.ckpt"),
            &format!("train-agent --reward {} --scales {}", reward.name(), tag_scales(&tag)),
        )?;
        Ok((tag, load_agent(&path)?))
    }
}

fn tag_scales(tag: &str) -> String {
    tag.rsplit_once("-e").map(|(_, s)| s.replace('-', ",")).unwrap_or_default()
}

fn split(samples: &[Sample], which: Split) -> Vec<Sample> {
    samples.iter().filter(|s| s.split == which).cloned().collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let run = Run::new(&cli.global)?;
    match &cli.command {
        Command::GenData => gen_data(&run),
        Command::TrainEmbed => train_embed(&run),
        Command::TrainAgent(a) => train_agent(&run, a),
        Command::Evaluate(a) => evaluate(&run, a),
        Command::Refine(a) => refine(&run, a),
        Command::Oracle(a) => oracle(&run, a),
        Command::Report => report::write_report(&run.out),
    }
}

/// Caps rayon's worker count from `IIPRL_THREADS`.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("IIPRL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("IIPRL_THREADS={v:?} is not a positive integer"))?;
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn gen_data(run: &Run) -> Result<()> {
    let samples = match &run.config.data.source {
        Some(src) => load_dataset(src).with_context(|| format!("loading {}", src.display()))?,
        None => iiprl_core::imaging::generate_synthetic_dataset(&run.config.data.gen_spec(run.config.seed))?,
    };
    let dir = run.dir("data");
    write_dataset(&dir, &samples)?;
    log::info!("wrote {} samples to {}", samples.len(), dir.display());
    Ok(())
}

fn train_embed(run: &Run) -> Result<()> {
    let data = run.dataset()?;
    let train = split(&data, Split::Train);
    let e = &run.config.embed;
    let (head, log) = train_identity_head(&train, &e.features, &e.training, run.config.seed)?;
    let dir = run.dir("embed");
    let mut ck = Checkpoint::new();
    head.to_checkpoint(&mut ck);
    std::fs::create_dir_all(&dir)?;
    ck.write(dir.join("head.ckpt"))?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for l in &log {
        writeln!(csv, "{},{:.6},{:.6}", l.epoch, l.loss, l.accuracy)?;
    }
    write(&dir.join("log.csv"), csv)?;
    if let Some(last) = log.last() {
        log::info!("identity head: loss {:.4}, train accuracy {:.3}", last.loss, last.accuracy);
    }
    Ok(())
}

fn train_agent(run: &Run, args: &AgentArgs) -> Result<()> {
    let data = run.dataset()?;
    let embedder = run.embedder()?;
    let train_split = split(&data, Split::Train);
    let reward = args.reward.unwrap_or(run.config.agent.reward);
    let env = run.env_for(&args.scales);
    let schedule = &run.config.agent.schedule;
    let set = TrainingSet::new(&train_split, &embedder)?;
    let (params, log) = train(schedule, &env, &set, &embedder, reward, &ReferenceMode::Resample, run.config.seed)?;
    let ck = AgentCheckpoint {
        params,
        feature_dim: embedder.head().config().hidden,
        env: env.clone(),
        epsilon_floor: schedule.epsilon_floor,
        gamma: schedule.gamma,
        sync_period: schedule.sync_period,
    };
    let dir = run.dir("agent").join(Run::agent_tag(reward, &env));
    std::fs::create_dir_all(&dir)?;
    save_agent(&ck, dir.join("agent.ckpt"))?;
    let mut csv = format!("{}\n", EpochLog::CSV_HEADER);
    for l in &log {
        writeln!(csv, "{}", l.csv_row())?;
    }
    write(&dir.join("log.csv"), csv)
}

fn ratio_label(r: f64) -> String {
    format!("{r:.2}")
}

fn evaluate(run: &Run, args: &EvalArgs) -> Result<()> {
    let data = run.dataset()?;
    let embedder = run.embedder()?;
    let (probes, gallery) = (split(&data, Split::Probe), split(&data, Split::Gallery));
    let ev = &run.config.eval;
    let mode = args.query.unwrap_or(ev.query);
    let ratios = args.ratios.clone().unwrap_or_else(|| ev.ratios.clone());
    let seed = run.config.seed;
    let baseline = |kind: &Baseline| evaluate_baseline(kind, &probes, &gallery, &embedder, mode, ev.max_rank, seed);
    let mut results: Vec<(String, Summary)> = Vec::new();
    match args.policy {
        PolicyArg::None => results.push(("none".into(), baseline(&Baseline::None)?)),
        PolicyArg::Random => results.push(("random".into(), baseline(&Baseline::Random(ratios))?)),
        PolicyArg::Centre => {
            for r in ratios {
                results.push((format!("centre-{}", ratio_label(r)), baseline(&Baseline::Centre(r))?));
            }
        }
        PolicyArg::Truth => {
            let truth = |s: &[Sample]| -> Result<Vec<Window>> {
                s.iter()
                    .map(|x| x.truth_window.context("the dataset has no truth windows"))
                    .collect()
            };
            let (pw, gw) = (truth(&probes)?, truth(&gallery)?);
            let r = evaluate_windows(&probes, &gallery, &pw, &gw, &embedder, mode, ev.max_rank)?;
            results.push(("truth".into(), r.summary));
        }
        PolicyArg::Iiprl => {
            let (tag, agent) = run.agent(&args.agent)?;
            let s = evaluate_agent(&agent.params, &agent.env, &probes, &gallery, &embedder, mode, ev.max_rank)?;
            results.push((format!("iiprl-{tag}"), s));
        }
    }
    for (label, summary) in results {
        let label = match mode {
            QueryMode::Single => label,
            QueryMode::Multi => format!("{label}-multi"),
        };
        let dir = run.dir("eval").join(&label);
        write(&dir.join("cmc.csv"), summary.cmc_csv())?;
        write(&dir.join("summary.csv"), summary.summary_csv())?;
        write(&dir.join("cmc.svg"), summary.cmc_svg(&label))?;
        log::info!("{label}: rank-1 {:.4}, mAP {:.4}", summary.rank(1), summary.map);
    }
    Ok(())
}

#[derive(Serialize)]
struct RefineOutput {
    image: String,
    agent: String,
    actions: Vec<usize>,
    window: Window,
    crop: String,
}

fn refine(run: &Run, args: &RefineArgs) -> Result<()> {
    let bytes = std::fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let image = decode_ppm(&bytes).with_context(|| format!("decoding {}", args.image.display()))?;
    let embedder = run.embedder()?;
    let (tag, agent) = run.agent(&args.agent)?;
    let dep = deploy_policy(&agent.params, &agent.env, &image, &embedder)?;
    let w = dep.window;
    let px = |a: f64, b: f64, n: usize| ((b * n as f64).round() - (a * n as f64).round()).max(1.0) as usize;
    let crop = crop_resize(
        &image,
        &w,
        px(w.x1(), w.x2(), image.width()),
        px(w.y1(), w.y2(), image.height()),
    )?;
    let stem = args
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .context("image path has no file name")?
        .to_string();
    let dir = run.dir("refine");
    write(&dir.join(format!("{stem}.ppm")), encode_ppm(&crop))?;
    let out = RefineOutput {
        image: args.image.display().to_string(),
        agent: tag,
        actions: dep.actions,
        window: w,
        crop: format!("{stem}.ppm"),
    };
    write(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&out)? + "\n")
}

#[derive(Serialize)]
struct OracleOutput {
    index: usize,
    identity: u32,
    camera: u8,
    reward: RewardKind,
    positive: usize,
    negative: usize,
    #[serde(flatten)]
    best: iiprl_core::oracle::SearchResult,
}

fn oracle(run: &Run, args: &OracleArgs) -> Result<()> {
    let data = run.dataset()?;
    let embedder = run.embedder()?;
    let train_split = split(&data, Split::Train);
    let set = TrainingSet::new(&train_split, &embedder)?;
    let reward = args.reward.unwrap_or(run.config.agent.reward);
    let env = run.env_for(&args.scales);
    let gamma = run.config.agent.schedule.gamma;
    let gallery_size = run.config.agent.schedule.gallery_size;
    for &i in &args.index {
        if i >= train_split.len() {
            bail!("index {i} is outside the {} training images", train_split.len());
        }
        if !has_references(&train_split, i) {
            bail!("training image {i} has no cross-view positive or same-view negative");
        }
        let mut rng = seed::rng(run.config.seed, &format!("oracle/references/{i}"));
        let refs = sample_references(&train_split, i, gallery_size, &mut rng)?;
        let ctx = context_for(reward, &refs, set.embeddings())?;
        let best = exhaustive_best_sequence(&train_split[i].image, &env, &embedder, &ctx, gamma)?;
        let out = OracleOutput {
            index: i,
            identity: train_split[i].identity,
            camera: train_split[i].camera,
            reward,
            positive: refs.positive,
            negative: refs.negative,
            best,
        };
        write(
            &run.dir("oracle").join(format!("train-{i:05}.json")),
            serde_json::to_string_pretty(&out)? + "\n",
        )?;
    }
    Ok(())
}

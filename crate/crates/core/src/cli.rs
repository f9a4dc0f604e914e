//! `aspectcue` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input or config error,
//! 3 partial run because the backend became unavailable.

use std::fs;
use std::io::{self, Read as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attribution::{
    attribute_item, render_attribution_report, AspectGameInput, Estimator, GameError, Scoring,
};
use crate::backend::LanguageModel;
use crate::bindings::AspectBindings;
use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    format_metrics_table, load_dataset, run_eval, DatasetError, EvalError, EvalSettings, LabeledItem, TaskSpec,
};
use crate::extract::{load_knowledge_base, KbError, KnowledgeBase};
use crate::memorization::{
    load_entities, run_memorization, Condition, MemorizationError, MemorizationReport, MemorizationSettings,
};
use crate::prompt::{load_template, render_prompt, Demonstration, PromptError, PromptMode, PromptTemplate};

#[derive(Debug, Parser)]
#[command(
    name = "aspectcue",
    version,
    about = "Aspect-cued prompting, attribution and evaluation for black-box language models",
    after_help = "API credentials for HTTP backends are read from the environment variable named \
                  in the config (default ASPECTCUE_API_KEY), never from flags.\n\
                  Exit codes: 0 success, 1 runtime failure, 2 input or config error, \
                  3 partial run (backend unavailable)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract aspect bindings from text and print them as one-line JSON.
    Extract(ExtractArgs),
    /// Print the exact prompt that would be sent for an item.
    Render(RenderArgs),
    /// Attribute the model output for one item to its aspects.
    Attribute(AttributeArgs),
    /// Run the entity memorization probe.
    Memorize(MemorizeArgs),
    /// Few-shot evaluation over several seeds.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Run configuration (JSON).
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Prompt template file; overrides the config.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Knowledge base file; overrides the config.
    #[arg(long)]
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Item text given inline.
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    /// File holding the item text; `-` or no input flag reads standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Directory under which the run directory is created.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Run directory name; defaults to `<command>-<UTC timestamp>`.
    #[arg(long)]
    pub run_name: Option<String>,
    /// Global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum concurrent backend calls.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Scripted backend file; replaces the configured backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Cot,
    Mac,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vanilla => PromptMode::Vanilla,
            ModeArg::Cot => PromptMode::Cot,
            ModeArg::Mac => PromptMode::Mac,
        }
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "mac")]
    pub mode: ModeArg,
    /// Number of template demonstrations to include (default: all).
    #[arg(long)]
    pub k: Option<usize>,
    /// Bindings JSON file; without it the knowledge base is used.
    #[arg(long)]
    pub bindings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoringArg {
    TargetLogprob,
    ScalarOutput,
}

impl From<ScoringArg> for Scoring {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::TargetLogprob => Scoring::TargetLogprob,
            ScoringArg::ScalarOutput => Scoring::ScalarOutput,
        }
    }
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Take the item (text, bindings, gold label) from the configured dataset.
    #[arg(long, conflicts_with_all = ["text", "input"])]
    pub item_id: Option<String>,
    /// Bindings JSON file; without it the knowledge base is used.
    #[arg(long)]
    pub bindings: Option<PathBuf>,
    /// Number of sampled permutations.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Enumerate all coalitions instead of sampling (at most 20 aspects).
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum)]
    pub scoring: Option<ScoringArg>,
    /// Target continuation for log-probability scoring.
    #[arg(long)]
    pub target: Option<String>,
    /// Number of template demonstrations to include (default: all).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Both,
    With,
    Without,
}

#[derive(Debug, Args)]
pub struct MemorizeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Entities JSONL file; overrides the config.
    #[arg(long)]
    pub entities: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub condition: ConditionArg,
    /// Number of template demonstrations to include (default: all).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Dataset JSONL file; overrides the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Prompting modes, comma separated (default from config: vanilla,mac).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub mode: Vec<ModeArg>,
    /// Shot counts, comma separated (default 5,10).
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Number of seeds, counted up from the global seed (default 5).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Fraction of items held out for testing in each seed.
    #[arg(long)]
    pub holdout: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

// A missing credential or bad backend setting is a configuration problem.
impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        input_err(e)
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        input_err(e)
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        input_err(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        input_err(e)
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        match e {
            GameError::Evaluation(_) => CliError::Runtime(e.to_string()),
            other => input_err(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend(_) => CliError::Runtime(e.to_string()),
            other => input_err(other),
        }
    }
}

impl From<MemorizationError> for CliError {
    fn from(e: MemorizationError) -> Self {
        match e {
            MemorizationError::Backend(_) => CliError::Runtime(e.to_string()),
            other => input_err(other),
        }
    }
}

/// Whether the finished command ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("aspectcue: partial run: the backend became unavailable");
            ExitCode::from(3)
        }
        Err(e) => {
            let msg = match &e {
                CliError::Input(m) | CliError::Runtime(m) => m,
            };
            eprintln!("aspectcue: {msg}");
            ExitCode::from(e.code())
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn io::Write) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Extract(a) => cmd_extract(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Attribute(a) => cmd_attribute(a, out),
        Command::Memorize(a) => cmd_memorize(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
    }
}

fn load_config(source: &SourceArgs) -> Result<Option<RunConfig>, CliError> {
    source.config.as_deref().map(RunConfig::load).transpose().map_err(CliError::from)
}

fn template_path(source: &SourceArgs, cfg: Option<&RunConfig>) -> Result<PathBuf, CliError> {
    source
        .template
        .clone()
        .or_else(|| cfg.and_then(|c| c.template.clone()))
        .ok_or_else(|| input_err("no template given (use --template or set `template` in the config)"))
}

fn kb_path(source: &SourceArgs, cfg: Option<&RunConfig>) -> Option<PathBuf> {
    source.kb.clone().or_else(|| cfg.and_then(|c| c.kb.clone()))
}

fn load_kb(source: &SourceArgs, cfg: Option<&RunConfig>) -> Result<Option<KnowledgeBase>, CliError> {
    Ok(kb_path(source, cfg).map(|p| load_knowledge_base(&p)).transpose()?)
}

fn read_input(input: &InputArgs) -> Result<String, CliError> {
    let text = match (&input.text, &input.input) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) if p.as_os_str() != "-" => fs::read_to_string(p)
            .map_err(|e| input_err(format!("failed to read {}: {e}", p.display())))?,
        _ => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| input_err(format!("failed to read standard input: {e}")))?;
            s
        }
    };
    let text = text.trim_end_matches(['\n', '\r']).to_string();
    if text.trim().is_empty() {
        return Err(input_err("input text is empty"));
    }
    Ok(text)
}

fn load_bindings_file(path: &Path) -> Result<AspectBindings, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| input_err(format!("failed to read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_err(format!("invalid bindings {}: {e}", path.display())))
}

fn take_demos(demos: Vec<Demonstration>, k: Option<usize>) -> Result<Vec<Demonstration>, CliError> {
    match k {
        Some(k) if k > demos.len() => Err(input_err(format!(
            "requested {k} demonstrations but the template has {}",
            demos.len()
        ))),
        Some(k) => Ok(demos.into_iter().take(k).collect()),
        None => Ok(demos),
    }
}

fn resolve_bindings(
    template: &PromptTemplate,
    explicit: Option<&Path>,
    kb: Option<&KnowledgeBase>,
    text: &str,
) -> Result<AspectBindings, CliError> {
    match (explicit, kb) {
        (Some(p), _) => Ok(template.schema.conform(&load_bindings_file(p)?)?),
        (None, Some(kb)) => Ok(template.schema.restrict(&kb.extract(text))),
        (None, None) => Ok(template.schema.empty_bindings()),
    }
}

fn write_line(out: &mut dyn io::Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Runtime(format!("failed to write output: {e}")))
}

fn cmd_extract(a: ExtractArgs, out: &mut dyn io::Write) -> Result<Outcome, CliError> {
    let cfg = load_config(&a.source)?;
    let path = kb_path(&a.source, cfg.as_ref())
        .ok_or_else(|| input_err("no knowledge base given (use --kb or set `kb` in the config)"))?;
    let kb = load_knowledge_base(&path)?;
    let text = read_input(&a.input)?;
    let bindings = kb.extract(&text);
    let json = serde_json::to_string(&bindings).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_line(out, &format!("{json}\n"))?;
    Ok(Outcome::Complete)
}

fn cmd_render(a: RenderArgs, out: &mut dyn io::Write) -> Result<Outcome, CliError> {
    let cfg = load_config(&a.source)?;
    let (template, demos) = load_template(&template_path(&a.source, cfg.as_ref())?)?;
    let demos = take_demos(demos, a.k)?;
    let kb = load_kb(&a.source, cfg.as_ref())?;
    let text = read_input(&a.input)?;
    let bindings = resolve_bindings(&template, a.bindings.as_deref(), kb.as_ref(), &text)?;
    let prompt = render_prompt(&template, &demos, &text, &bindings, a.mode.into())?;
    write_line(out, &prompt.full_text)?;
    Ok(Outcome::Complete)
}

/// Config for commands that call a model, with CLI overrides applied.
fn run_config(source: &SourceArgs, run: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (load_config(source)?, &run.script) {
        (Some(c), _) => c,
        (None, Some(_)) => RunConfig::default(),
        (None, None) => return Err(input_err("no config given (use --config or --script)")),
    };
    if let Some(p) = &run.script {
        cfg.backend = crate::config::BackendConfig::Scripted {
            path: Some(absolute(p)),
            script: None,
        };
    }
    if let Some(t) = &source.template {
        cfg.template = Some(absolute(t));
    }
    if let Some(k) = &source.kb {
        cfg.kb = Some(absolute(k));
    }
    if let Some(d) = &run.output_dir {
        cfg.output_dir = absolute(d);
    }
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(p) = run.parallelism {
        cfg.parallelism = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Creates the run directory and writes the resolved config snapshot.
fn create_run_dir(cfg: &RunConfig, command: &str, run_name: Option<&str>) -> Result<PathBuf, CliError> {
    let dir = match run_name {
        Some(name) => {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return Err(input_err(format!("invalid run name {name:?}")));
            }
            cfg.output_dir.join(name)
        }
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
            let base = cfg.output_dir.join(format!("{command}-{stamp}"));
            let mut dir = base.clone();
            let mut n = 2;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("failed to create {}: {e}", dir.display())))?;
    write_file(&dir.join("config.json"), &cfg.snapshot())?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("failed to write {}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).map_err(|e| CliError::Runtime(e.to_string()))?);
        s.push('\n');
    }
    write_file(path, &s)
}

fn load_task_dataset(cfg: &RunConfig, override_path: Option<&Path>) -> Result<(TaskSpec, Vec<LabeledItem>), CliError> {
    let task = cfg
        .task
        .clone()
        .ok_or_else(|| input_err("no task given (set `task` in the config)"))?;
    let path = override_path
        .map(absolute)
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| input_err("no dataset given (use --dataset or set `dataset` in the config)"))?;
    let items = load_dataset(&path, &task)?;
    if items.is_empty() {
        return Err(input_err(format!("dataset {} is empty", path.display())));
    }
    Ok((task, items))
}

fn cmd_attribute(a: AttributeArgs, out: &mut dyn io::Write) -> Result<Outcome, CliError> {
    let mut cfg = run_config(&a.source, &a.run)?;
    if let Some(m) = a.permutations {
        cfg.attribution.permutations = m;
    }
    cfg.attribution.exact |= a.exact;
    if let Some(s) = a.scoring {
        cfg.attribution.scoring = Some(s.into());
    }
    if let Some(t) = &a.target {
        cfg.attribution.target = Some(t.clone());
    }
    let (template, demos) = load_template(
        cfg.template
            .as_deref()
            .ok_or_else(|| input_err("no template given (use --template or set `template` in the config)"))?,
    )?;
    let demos = take_demos(demos, a.k)?;
    let kb = cfg.kb.as_deref().map(load_knowledge_base).transpose()?;

    let (text, item_bindings, gold) = match &a.item_id {
        Some(id) => {
            let (task, items) = load_task_dataset(&cfg, None)?;
            let item = items
                .into_iter()
                .find(|i| &i.id == id)
                .ok_or_else(|| input_err(format!("no item with id `{id}` in the dataset")))?;
            let gold = task.contract(&template.output_contract.output_key).format(&item.gold_label);
            (item.text, item.bindings, Some(gold))
        }
        None => (read_input(&a.input)?, None, None),
    };
    let bindings = match item_bindings {
        Some(b) if a.bindings.is_none() => template.schema.conform(&b)?,
        _ => resolve_bindings(&template, a.bindings.as_deref(), kb.as_ref(), &text)?,
    };
    if bindings.non_empty_slots().is_empty() {
        return Err(input_err("the item has no aspect bindings to attribute"));
    }

    let run_dir = create_run_dir(&cfg, "attribute", a.run.run_name.as_deref())?;
    let backend = cfg.build_backend(Some(&run_dir))?;
    let params = cfg.params();
    let scoring = cfg.attribution.scoring.unwrap_or(if backend.supports_target_scoring() {
        Scoring::TargetLogprob
    } else {
        Scoring::ScalarOutput
    });
    let target = match (scoring, cfg.attribution.target.clone(), gold) {
        (Scoring::ScalarOutput, _, _) => None,
        (_, Some(t), _) => Some(t),
        (_, None, Some(g)) => Some(g),
        // Default target: the model's own answer to the full prompt.
        (_, None, None) => {
            let full = render_prompt(&template, &demos, &text, &bindings, PromptMode::Mac)?;
            Some(
                backend
                    .complete(&full.full_text, &params, None)
                    .map_err(|e| CliError::Runtime(e.to_string()))?
                    .text,
            )
        }
    };
    let estimator = if cfg.attribution.exact {
        Estimator::Exact
    } else {
        Estimator::Sampled {
            permutations: cfg.attribution.permutations,
            seed: cfg.seed,
        }
    };
    let input = AspectGameInput {
        backend: backend.as_ref(),
        template: &template,
        demos: &demos,
        item_text: &text,
        bindings: &bindings,
        target: target.as_deref(),
        scoring,
        params,
        on_parse_failure: cfg.attribution.on_parse_failure,
    };
    let (result, conformed) = attribute_item(input, estimator)?;
    let report = render_attribution_report(&result, &conformed, &text)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let heatmap = report.heatmap(false);
    write_file(&run_dir.join("attribution.json"), &report.to_json())?;
    write_file(&run_dir.join("heatmap.txt"), &heatmap)?;
    write_line(out, &heatmap)?;
    write_line(out, &format!("run directory: {}\n", run_dir.display()))?;
    Ok(Outcome::Complete)
}

fn cmd_memorize(a: MemorizeArgs, out: &mut dyn io::Write) -> Result<Outcome, CliError> {
    let mut cfg = run_config(&a.source, &a.run)?;
    if let Some(e) = &a.entities {
        cfg.entities = Some(absolute(e));
    }
    let (template, demos) = load_template(
        cfg.template
            .as_deref()
            .ok_or_else(|| input_err("no template given (use --template or set `template` in the config)"))?,
    )?;
    let demos = take_demos(demos, a.k)?;
    let kb = cfg.kb.as_deref().map(load_knowledge_base).transpose()?;
    let entities_path = cfg
        .entities
        .clone()
        .ok_or_else(|| input_err("no entities file given (use --entities or set `entities` in the config)"))?;
    let entities = load_entities(&entities_path)?;
    if entities.is_empty() {
        return Err(input_err(format!("entities file {} is empty", entities_path.display())));
    }
    let conditions: Vec<Condition> = match a.condition {
        ConditionArg::Both => Condition::ALL.to_vec(),
        ConditionArg::With => vec![Condition::WithAspects],
        ConditionArg::Without => vec![Condition::WithoutAspects],
    };

    let run_dir = create_run_dir(&cfg, "memorize", a.run.run_name.as_deref())?;
    let backend = cfg.build_backend(Some(&run_dir))?;
    let settings = MemorizationSettings {
        slot: cfg.memorization.slot.clone(),
        params: cfg.params(),
        parallelism: cfg.parallelism,
        mention_rule: cfg.memorization.mention_rule,
        include_demo_entities: cfg.memorization.include_demo_entities,
        seed: cfg.seed,
    };
    let mut report: Option<MemorizationReport> = None;
    let mut trials = Vec::new();
    for condition in conditions {
        let run = run_memorization(backend.as_ref(), &template, &demos, &entities, condition, kb.as_ref(), &settings)?;
        trials.extend(run.trials);
        report = Some(match report {
            Some(r) => r.merge(&run.report)?,
            None => run.report,
        });
    }
    let report = report.expect("at least one condition");
    let table = report.table();
    write_file(&run_dir.join("memorization.json"), &report.to_json())?;
    write_file(&run_dir.join("table.txt"), &table)?;
    write_jsonl(&run_dir.join("trials.jsonl"), &trials)?;
    write_line(out, &table)?;
    write_line(out, &format!("run directory: {}\n", run_dir.display()))?;
    Ok(if report.partial { Outcome::Partial } else { Outcome::Complete })
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn io::Write) -> Result<Outcome, CliError> {
    let mut cfg = run_config(&a.source, &a.run)?;
    if !a.mode.is_empty() {
        cfg.eval.modes = a.mode.iter().map(|&m| m.into()).collect();
    }
    if !a.k.is_empty() {
        cfg.eval.k = a.k.clone();
    }
    if let Some(s) = a.seeds {
        cfg.eval.seeds = s;
    }
    if let Some(h) = a.holdout {
        cfg.eval.holdout_fraction = h;
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(absolute(d));
    }
    if cfg.eval.seeds == 0 || cfg.eval.modes.is_empty() || cfg.eval.k.is_empty() {
        return Err(input_err("need at least one seed, mode and shot count"));
    }
    let (template, _) = load_template(
        cfg.template
            .as_deref()
            .ok_or_else(|| input_err("no template given (use --template or set `template` in the config)"))?,
    )?;
    let kb = cfg.kb.as_deref().map(load_knowledge_base).transpose()?;
    let (task, items) = load_task_dataset(&cfg, None)?;

    let run_dir = create_run_dir(&cfg, "evaluate", a.run.run_name.as_deref())?;
    let backend = cfg.build_backend(Some(&run_dir))?;
    let seeds: Vec<u64> = (0..cfg.eval.seeds as u64).map(|i| cfg.seed + i).collect();
    let mut reports = Vec::new();
    let mut partial = false;
    for &mode in &cfg.eval.modes {
        for &k in &cfg.eval.k {
            let settings = EvalSettings {
                mode,
                k,
                seeds: seeds.clone(),
                holdout_fraction: cfg.eval.holdout_fraction,
                sampling: cfg.eval.sampling,
                params: cfg.params(),
                parallelism: cfg.parallelism,
            };
            let run = run_eval(backend.as_ref(), &template, &task, &items, kb.as_ref(), &settings)?;
            let stem = format!("{mode}-k{k}");
            write_file(&run_dir.join(format!("metrics-{stem}.json")), &run.report.to_json())?;
            write_jsonl(&run_dir.join(format!("trials-{stem}.jsonl")), &run.trials)?;
            partial |= run.report.partial;
            reports.push(run.report);
        }
    }
    let table = format_metrics_table(&reports);
    write_file(&run_dir.join("table.txt"), &table)?;
    write_line(out, &table)?;
    write_line(out, &format!("run directory: {}\n", run_dir.display()))?;
    Ok(if partial { Outcome::Partial } else { Outcome::Complete })
}

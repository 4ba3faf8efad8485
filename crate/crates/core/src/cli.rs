//! Command-line front end: `serve-plant`, `inspect`, `train` and `eval`.
//!
//! Exit codes: 0 success, 1 local I/O failure, 2 bind failure, 3 server
//! unreachable, 4 empty action or observation space, 5 invalid
//! configuration, 6 training or evaluation aborted.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address_space::{NodeClass, NodeId, ReferenceType};
use crate::agents::{
    Agent, QLearningAgent, QLearningParams, QTable, QTableError, RandomAgent, SpaceLabels,
};
use crate::client::{Catalog, ClientError, ClientSession};
use crate::mapper::{
    self, discover_spaces, Environment, MapperConfig, MapperError, RewardRule, SpaceSpec,
};
use crate::plant_sim::{self, PlantConfig, PlantServerOptions, Side};
use crate::server::ServerError;

pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:4850";
const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Parser)]
#[command(
    name = "uarl",
    version,
    about = "Reinforcement learning over industrial node servers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the simulated sorting plant until interrupted.
    ServePlant(ServePlantArgs),
    /// Print a server's node tree and the spaces derived from its markers.
    Inspect(InspectArgs),
    /// Train an agent and write the episode log and Q-table.
    Train(TrainArgs),
    /// Run the greedy policy of a saved Q-table.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ServePlantArgs {
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulated time units before a jammed material raises `StuckDetected`.
    #[arg(long, default_value_t = plant_sim::DEFAULT_STUCK_TIMEOUT)]
    pub stuck_timeout: u64,
    /// Pace simulated time in wall-clock time.
    #[arg(long)]
    pub realtime: bool,
    /// Wall-clock length of one time unit with `--realtime`.
    #[arg(long, default_value_t = 100)]
    pub tick_ms: u64,
    #[arg(long, default_value = "left")]
    pub green_side: Side,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// One or more `host:port` endpoints; spaces are their product.
    #[arg(required = true)]
    pub endpoints: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Qlearning,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(rename = "type", default = "default_agent_kind")]
    pub kind: AgentKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_agent_kind() -> AgentKind {
    AgentKind::Qlearning
}
fn default_alpha() -> f64 {
    QLearningParams::default().alpha
}
fn default_gamma() -> f64 {
    QLearningParams::default().gamma
}
fn default_epsilon() -> f64 {
    QLearningParams::default().epsilon
}
fn default_episodes() -> usize {
    150
}
fn default_max_steps() -> usize {
    mapper::DEFAULT_MAX_STEPS
}
fn default_step_timeout() -> f64 {
    mapper::DEFAULT_STEP_TIMEOUT.as_secs_f64()
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: default_agent_kind(),
            alpha: default_alpha(),
            gamma: default_gamma(),
            epsilon: default_epsilon(),
            seed: 0,
        }
    }
}

/// JSON training configuration. Every key except `endpoints` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Seconds.
    #[serde(default = "default_step_timeout")]
    pub step_timeout: f64,
    /// Defaults to the sorting plant's rules with green on the left.
    #[serde(default)]
    pub reward_rules: Option<Vec<RewardRule>>,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    #[serde(default)]
    pub qtable_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            endpoints: Vec::new(),
            agent: AgentConfig::default(),
            episodes: default_episodes(),
            max_steps: default_max_steps(),
            step_timeout: default_step_timeout(),
            reward_rules: None,
            log_path: None,
            qtable_path: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let a = &self.agent;
        if self.endpoints.is_empty() {
            return bad("no endpoints configured".into());
        }
        if self.episodes < 1 {
            return bad("episodes must be at least 1".into());
        }
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1".into());
        }
        if !(self.step_timeout.is_finite() && self.step_timeout > 0.0) {
            return bad(format!(
                "step_timeout must be positive, got {}",
                self.step_timeout
            ));
        }
        if !(0.0..=1.0).contains(&a.epsilon) {
            return bad(format!("epsilon must be in [0, 1], got {}", a.epsilon));
        }
        if !(a.gamma > 0.0 && a.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", a.gamma));
        }
        if !(a.alpha > 0.0 && a.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", a.alpha));
        }
        if let Some(rules) = &self.reward_rules {
            if let Some(r) = rules.iter().find(|r| r.server >= self.endpoints.len()) {
                return bad(format!(
                    "reward rule for {} names server {}",
                    r.node, r.server
                ));
            }
            if let Some(r) = rules.iter().find(|r| !r.reward.is_finite()) {
                return bad(format!(
                    "reward rule for {} has a non-finite reward",
                    r.node
                ));
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> Vec<RewardRule> {
        self.reward_rules
            .clone()
            .unwrap_or_else(|| plant_sim::default_reward_rules(Side::Left))
    }

    fn mapper_config(&self) -> MapperConfig {
        MapperConfig {
            endpoints: self.endpoints.clone(),
            reward_rules: self.rules(),
            step_timeout: Duration::from_secs_f64(self.step_timeout),
            max_steps: self.max_steps,
            connect_timeout: CONNECT_TIMEOUT,
        }
    }
}

/// Flags shared by `train` and `eval`; each overrides the config file.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Server endpoint; repeat for several servers.
    #[arg(long = "endpoint")]
    pub endpoints: Vec<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Seconds.
    #[arg(long)]
    pub step_timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub agent: Option<AgentKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episode log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Q-table CSV.
    #[arg(long)]
    pub qtable: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Q-table CSV written by `train`.
    #[arg(long)]
    pub qtable: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot serve: {0}")]
    Bind(#[source] ServerError),
    #[error("cannot reach {endpoint}: {source}")]
    Unreachable {
        endpoint: String,
        #[source]
        source: ClientError,
    },
    #[error("{0}")]
    EmptySpace(MapperError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("aborted: {0}")]
    Aborted(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Bind(_) => 2,
            CliError::Unreachable { .. } => 3,
            CliError::EmptySpace(_) => 4,
            CliError::Config(_) => 5,
            CliError::Aborted(_) => 6,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::ServePlant(args) => cmd_serve_plant(&args),
        Command::Inspect(args) => cmd_inspect(&args, &mut std::io::stdout().lock()),
        Command::Train(args) => cmd_train(&args, &mut std::io::stdout().lock()),
        Command::Eval(args) => cmd_eval(&args, &mut std::io::stdout().lock()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("uarl: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_serve_plant(args: &ServePlantArgs) -> Result<(), CliError> {
    let options = PlantServerOptions {
        plant: PlantConfig {
            seed: args.seed,
            stuck_timeout: args.stuck_timeout,
            green_side: args.green_side,
        },
        realtime_tick: args.realtime.then(|| Duration::from_millis(args.tick_ms)),
        name: None,
    };
    let handle = plant_sim::serve_plant(&args.endpoint, options).map_err(CliError::Bind)?;
    let pacing = if args.realtime {
        format!("realtime, {} ms per tick", args.tick_ms)
    } else {
        "accelerated".to_string()
    };
    println!(
        "sorting plant listening on {} (seed {}, stuck timeout {}, {pacing})",
        handle.local_addr(),
        args.seed,
        args.stuck_timeout
    );
    std::io::stdout().flush().ok();
    loop {
        std::thread::park();
    }
}

fn connect_all(endpoints: &[String]) -> Result<Vec<ClientSession>, CliError> {
    endpoints
        .iter()
        .map(|e| {
            ClientSession::connect(e, CONNECT_TIMEOUT).map_err(|source| CliError::Unreachable {
                endpoint: e.clone(),
                source,
            })
        })
        .collect()
}

fn print_tree(out: &mut dyn Write, catalog: &Catalog) -> std::io::Result<()> {
    let mut children: BTreeMap<&NodeId, Vec<usize>> = BTreeMap::new();
    for (i, e) in catalog.entries.iter().enumerate() {
        if let Some((parent, _)) = &e.parent {
            children.entry(parent).or_default().push(i);
        }
    }
    fn walk(
        out: &mut dyn Write,
        catalog: &Catalog,
        children: &BTreeMap<&NodeId, Vec<usize>>,
        i: usize,
        depth: usize,
    ) -> std::io::Result<()> {
        let e = &catalog.entries[i];
        let class = match e.descriptor.node_class {
            NodeClass::Object => "Object",
            NodeClass::Variable => "Variable",
            NodeClass::Method => "Method",
            NodeClass::ObjectType => "ObjectType",
            NodeClass::Property => "Property",
        };
        write!(
            out,
            "{}{} [{class}] {}",
            "  ".repeat(depth),
            e.browse_name(),
            e.id()
        )?;
        if let Some(m) = e.marker {
            write!(out, "  <{m}>")?;
        }
        writeln!(out)?;
        for &c in children.get(e.id()).map(Vec::as_slice).unwrap_or(&[]) {
            // Marker properties are shown inline on their owner.
            let child = &catalog.entries[c];
            if e.marker.is_some()
                && child.parent.as_ref().map(|p| p.1) == Some(ReferenceType::HasProperty)
            {
                continue;
            }
            walk(out, catalog, children, c, depth + 1)?;
        }
        Ok(())
    }
    if catalog.entries.is_empty() {
        return Ok(());
    }
    walk(out, catalog, &children, 0, 0)
}

fn space_line(label: &str, space: &SpaceSpec) -> String {
    format!("{label} space: {} ({})", space.size(), space.describe())
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut sessions = connect_all(&args.endpoints)?;
    let mut catalogs = Vec::new();
    for (session, endpoint) in sessions.iter_mut().zip(&args.endpoints) {
        let catalog = session
            .browse_all()
            .map_err(|source| CliError::Unreachable {
                endpoint: endpoint.clone(),
                source,
            })?;
        catalogs.push(catalog);
    }
    let stdout_err = io_err(Path::new("<stdout>"));
    let report = |out: &mut dyn Write| -> std::io::Result<Result<(), MapperError>> {
        for (catalog, endpoint) in catalogs.iter().zip(&args.endpoints) {
            writeln!(out, "{endpoint}: {}", catalog.server_name)?;
            print_tree(out, catalog)?;
            writeln!(out)?;
        }
        match discover_spaces(&catalogs) {
            Ok((actions, observations)) => {
                writeln!(out, "{}", space_line("Action", &actions))?;
                writeln!(out, "{}", space_line("Observation", &observations))?;
                Ok(Ok(()))
            }
            Err(e) => Ok(Err(e)),
        }
    };
    report(out)
        .map_err(stdout_err)?
        .map_err(CliError::EmptySpace)
}

fn merged_config(run: &RunArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &run.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if !run.endpoints.is_empty() {
        config.endpoints = run.endpoints.clone();
    }
    if let Some(n) = run.episodes {
        config.episodes = n;
    }
    if let Some(n) = run.max_steps {
        config.max_steps = n;
    }
    if let Some(t) = run.step_timeout {
        config.step_timeout = t;
    }
    Ok(config)
}

/// The configuration `train` would run with: file values overridden by flags.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = merged_config(&args.run)?;
    let a = &mut config.agent;
    if let Some(k) = args.agent {
        a.kind = k;
    }
    if let Some(v) = args.alpha {
        a.alpha = v;
    }
    if let Some(v) = args.gamma {
        a.gamma = v;
    }
    if let Some(v) = args.epsilon {
        a.epsilon = v;
    }
    if let Some(v) = args.seed {
        a.seed = v;
    }
    if args.log.is_some() {
        config.log_path = args.log.clone();
    }
    if args.qtable.is_some() {
        config.qtable_path = args.qtable.clone();
    }
    config.validate()?;
    Ok(config)
}

/// The agent named by `config`; the only place agent types are chosen.
pub fn build_agent(config: &AgentConfig, states: usize, actions: usize) -> Box<dyn Agent> {
    match config.kind {
        AgentKind::Qlearning => Box::new(QLearningAgent::new(
            states,
            actions,
            QLearningParams {
                alpha: config.alpha,
                gamma: config.gamma,
                epsilon: config.epsilon,
            },
            config.seed,
        )),
        AgentKind::Random => Box::new(RandomAgent::new(actions, config.seed)),
    }
}

pub fn open_environment(config: &TrainConfig) -> Result<Environment, CliError> {
    let sessions = connect_all(&config.endpoints)?;
    Environment::from_sessions(sessions, &config.mapper_config()).map_err(|e| match e {
        MapperError::EmptySpace(_) => CliError::EmptySpace(e),
        e => CliError::Aborted(e.to_string()),
    })
}

fn labels(env: &Environment) -> SpaceLabels {
    SpaceLabels {
        actions: env.action_space().describe(),
        observations: env.observation_space().describe(),
    }
}

fn describe_index(space: &SpaceSpec, index: usize) -> String {
    let values = space.index_to_values(index).unwrap_or_default();
    space
        .bindings()
        .iter()
        .zip(values)
        .map(|(b, v)| format!("{}={v}", b.browse_name))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Outcome counts in first-seen order.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct OutcomeCounts(Vec<(String, usize)>);

impl OutcomeCounts {
    fn add(&mut self, outcome: &str) {
        match self.0.iter_mut().find(|(o, _)| o == outcome) {
            Some((_, n)) => *n += 1,
            None => self.0.push((outcome.to_string(), 1)),
        }
    }

    pub fn get(&self, outcome: &str) -> usize {
        self.0
            .iter()
            .find(|(o, _)| o == outcome)
            .map_or(0, |(_, n)| *n)
    }
}

impl std::fmt::Display for OutcomeCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut sorted = self.0.clone();
        sorted.sort();
        let parts: Vec<_> = sorted.iter().map(|(o, n)| format!("{o}={n}")).collect();
        f.write_str(&parts.join(" "))
    }
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = train_config(args)?;
    let mut env = open_environment(&config)?;
    let (states, actions) = (env.observation_space().size(), env.action_space().size());
    let mut agent = build_agent(&config.agent, states, actions);
    let mut log = match &config.log_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
            writeln!(w, "episode,steps,return,outcome").map_err(io_err(path))?;
            Some((path, w))
        }
        None => None,
    };
    let started = Instant::now();
    let mut total = 0.0;
    let mut counts = OutcomeCounts::default();
    for episode in 1..=config.episodes {
        let r = env
            .run_episode(agent.as_mut())
            .map_err(|e| CliError::Aborted(format!("episode {episode}: {e}")))?;
        info!(
            "episode {episode}: {} steps, return {}, {}",
            r.steps, r.episode_return, r.outcome
        );
        total += r.episode_return;
        counts.add(&r.outcome);
        if let Some((path, w)) = log.as_mut() {
            writeln!(
                w,
                "{episode},{},{},{}",
                r.steps, r.episode_return, r.outcome
            )
            .map_err(io_err(path))?;
        }
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(io_err(path))?;
    }

    let table = agent
        .q_table()
        .cloned()
        .unwrap_or_else(|| QTable::zeros(states, actions));
    if let Some(path) = &config.qtable_path {
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        table
            .write_csv(&mut w, &labels(&env))
            .map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }

    let stdout_err = io_err(Path::new("<stdout>"));
    let report = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(
            out,
            "Trained {} episodes in {:.2?}: mean return {:.3}; {counts}",
            config.episodes,
            started.elapsed(),
            total / config.episodes as f64
        )?;
        writeln!(out, "{}", space_line("Action", env.action_space()))?;
        writeln!(
            out,
            "{}",
            space_line("Observation", env.observation_space())
        )?;
        writeln!(out, "Greedy policy:")?;
        for (s, a) in table.greedy_policy().into_iter().enumerate() {
            writeln!(
                out,
                "  s{s} [{}] -> a{a} [{}]",
                describe_index(env.observation_space(), s),
                describe_index(env.action_space(), a)
            )?;
        }
        Ok(())
    };
    report(out).map_err(stdout_err)
}

/// Result of `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub outcomes: OutcomeCounts,
}

pub fn evaluate(
    env: &mut Environment,
    table: QTable,
    episodes: usize,
) -> Result<EvalSummary, CliError> {
    let mut agent = QLearningAgent::frozen(table);
    let mut total = 0.0;
    let mut outcomes = OutcomeCounts::default();
    for episode in 1..=episodes {
        let r = env
            .run_episode(&mut agent)
            .map_err(|e| CliError::Aborted(format!("episode {episode}: {e}")))?;
        total += r.episode_return;
        outcomes.add(&r.outcome);
    }
    Ok(EvalSummary {
        episodes,
        mean_return: total / episodes as f64,
        outcomes,
    })
}

fn load_qtable(path: &Path) -> Result<(QTable, SpaceLabels), CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    QTable::read_csv(BufReader::new(file)).map_err(|e| match e {
        QTableError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        e => CliError::Config(format!("{}: {e}", path.display())),
    })
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = merged_config(&args.run)?;
    if args.run.episodes.is_none() && args.run.config.is_none() {
        config.episodes = 100;
    }
    config.validate()?;
    let (table, _) = load_qtable(&args.qtable)?;
    let mut env = open_environment(&config)?;
    let dims = (env.observation_space().size(), env.action_space().size());
    if dims != (table.states(), table.actions()) {
        return Err(CliError::Config(format!(
            "Q-table is {}x{} but the servers define {}x{}",
            table.states(),
            table.actions(),
            dims.0,
            dims.1
        )));
    }
    let summary = evaluate(&mut env, table, config.episodes)?;
    writeln!(
        out,
        "Mean return: {:.3} over {} episodes\nOutcomes: {}",
        summary.mean_return, summary.episodes, summary.outcomes
    )
    .map_err(io_err(Path::new("<stdout>")))
}

/// Reads `episode,steps,return,outcome` rows back from an episode log.
pub fn read_episode_log(path: &Path) -> Result<Vec<(usize, usize, f64, String)>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line.map_err(io_err(path))?;
        let bad = || CliError::Config(format!("{}:{}: malformed row", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push((
            f[0].parse().map_err(|_| bad())?,
            f[1].parse().map_err(|_| bad())?,
            f[2].parse().map_err(|_| bad())?,
            f[3].to_string(),
        ));
    }
    Ok(rows)
}

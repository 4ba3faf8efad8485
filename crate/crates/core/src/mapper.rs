//! The RL mapper: derives action and observation spaces from browsed
//! catalogs, turns action indices into actuator writes and sensor
//! notifications into state indices and rewards, and runs episodes.
//!
//! Space indices are mixed-radix numbers over the bindings' value lists with
//! the first binding as the most significant digit.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::{Duration, Instant};

use log::{debug, trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address_space::{enumerate_values, MarkerRole, NodeId, Value};
use crate::agents::Agent;
use crate::client::{Catalog, ClientError, ClientSession, Notification};
use crate::server::status;

pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_MAX_STEPS: usize = 20;

/// Browse name of the method called at the start of every episode.
pub const RESET_METHOD: &str = "Reset";
/// Browse name of the optional simulated-time method. Servers that expose it
/// are ticked one unit at a time while a step waits for sensor changes.
pub const TICK_METHOD: &str = "Tick";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error("no {0} nodes found; cannot build a space")]
    EmptySpace(&'static str),
    #[error("index {index} outside a space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("no cached value for {0}")]
    IncompleteCache(String),
    #[error("value {value} of {node} is not in its binding's value set")]
    ValueNotInSpace { node: String, value: Value },
    #[error("node {0} bound twice")]
    DuplicateBinding(String),
    #[error("no sensor change within {0:?}")]
    StepTimeout(Duration),
    #[error("write to {node} rejected with status {status}")]
    WriteRejected { node: String, status: u8 },
    #[error("method {method} failed with status {status}")]
    CallFailed { method: String, status: u8 },
    #[error("no server exposes a {RESET_METHOD} method")]
    NoResetMethod,
    #[error("endpoint index {0} is not configured")]
    UnknownServer(usize),
    #[error("step called outside an episode")]
    NoEpisode,
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeBinding {
    pub server_index: usize,
    pub node: NodeId,
    pub browse_name: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSpec {
    bindings: Vec<NodeBinding>,
    size: usize,
}

impl SpaceSpec {
    pub fn new(bindings: Vec<NodeBinding>) -> Result<Self, MapperError> {
        let mut seen = HashSet::new();
        for b in &bindings {
            if b.values.is_empty() {
                return Err(MapperError::ValueNotInSpace {
                    node: b.node.to_string(),
                    value: Value::Bool(false),
                });
            }
            if !seen.insert((b.server_index, b.node.clone())) {
                return Err(MapperError::DuplicateBinding(b.node.to_string()));
            }
        }
        let size = if bindings.is_empty() {
            0
        } else {
            bindings.iter().map(|b| b.values.len()).product()
        };
        Ok(SpaceSpec { bindings, size })
    }

    pub fn bindings(&self) -> &[NodeBinding] {
        &self.bindings
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radices(&self) -> Vec<usize> {
        self.bindings.iter().map(|b| b.values.len()).collect()
    }

    /// `RotateTable×BeltDirection` style label.
    pub fn describe(&self) -> String {
        self.bindings
            .iter()
            .map(|b| b.browse_name.as_str())
            .collect::<Vec<_>>()
            .join("×")
    }

    pub fn index_to_values(&self, index: usize) -> Result<Vec<Value>, MapperError> {
        if index >= self.size {
            return Err(MapperError::IndexOutOfRange {
                index,
                size: self.size,
            });
        }
        let mut rest = index;
        let mut out = vec![Value::Bool(false); self.bindings.len()];
        for (slot, b) in out.iter_mut().zip(&self.bindings).rev() {
            let radix = b.values.len();
            *slot = b.values[rest % radix].clone();
            rest /= radix;
        }
        Ok(out)
    }

    pub fn values_to_index(&self, values: &[Value]) -> Result<usize, MapperError> {
        if values.len() != self.bindings.len() || self.size == 0 {
            return Err(MapperError::IncompleteCache(format!(
                "expected {} values, got {}",
                self.bindings.len(),
                values.len()
            )));
        }
        let mut index = 0;
        for (b, v) in self.bindings.iter().zip(values) {
            let digit = b.values.iter().position(|x| x == v).ok_or_else(|| {
                MapperError::ValueNotInSpace {
                    node: b.node.to_string(),
                    value: v.clone(),
                }
            })?;
            index = index * b.values.len() + digit;
        }
        Ok(index)
    }
}

/// Walks servers in configuration order and nodes in catalog order; action
/// markers extend the action space, observation markers the observation
/// space, each as a Cartesian factor.
pub fn discover_spaces(catalogs: &[Catalog]) -> Result<(SpaceSpec, SpaceSpec), MapperError> {
    let mut actions = Vec::new();
    let mut observations = Vec::new();
    for (server_index, catalog) in catalogs.iter().enumerate() {
        for (entry, marker) in catalog.marked() {
            let binding = NodeBinding {
                server_index,
                node: entry.id().clone(),
                browse_name: entry.browse_name().to_string(),
                values: enumerate_values(&marker),
            };
            match marker.role() {
                MarkerRole::Action => actions.push(binding),
                MarkerRole::Observation => observations.push(binding),
            }
        }
    }
    if actions.is_empty() {
        return Err(MapperError::EmptySpace("action"));
    }
    if observations.is_empty() {
        return Err(MapperError::EmptySpace("observation"));
    }
    Ok((SpaceSpec::new(actions)?, SpaceSpec::new(observations)?))
}

/// Actuator writes for an action index.
pub fn action_to_values(
    space: &SpaceSpec,
    index: usize,
) -> Result<Vec<(usize, NodeId, Value)>, MapperError> {
    let values = space.index_to_values(index)?;
    Ok(space
        .bindings
        .iter()
        .zip(values)
        .map(|(b, v)| (b.server_index, b.node.clone(), v))
        .collect())
}

pub type ObservationCache = HashMap<(usize, NodeId), Value>;

/// State index for the cached sensor values.
pub fn values_to_state(space: &SpaceSpec, cache: &ObservationCache) -> Result<usize, MapperError> {
    let values = space
        .bindings
        .iter()
        .map(|b| {
            cache
                .get(&(b.server_index, b.node.clone()))
                .cloned()
                .ok_or_else(|| MapperError::IncompleteCache(b.node.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    space.values_to_index(&values)
}

/// Reward assigned when `node` on server `server` changes to `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRule {
    #[serde(default)]
    pub server: usize,
    pub node: NodeId,
    pub value: Value,
    pub reward: f64,
    #[serde(default)]
    pub terminal: bool,
    #[serde(default)]
    pub label: String,
}

impl RewardRule {
    fn matches(&self, server: usize, n: &Notification) -> bool {
        self.server == server && self.node == n.node && self.value == n.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode_return: f64,
    pub steps: usize,
    /// Label of the terminal reward rule, or `truncated`.
    pub outcome: String,
    pub truncated: bool,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone)]
pub struct MapperConfig {
    pub endpoints: Vec<String>,
    pub reward_rules: Vec<RewardRule>,
    pub step_timeout: Duration,
    pub max_steps: usize,
    pub connect_timeout: Duration,
}

impl MapperConfig {
    pub fn new(endpoints: Vec<String>, reward_rules: Vec<RewardRule>) -> Self {
        MapperConfig {
            endpoints,
            reward_rules,
            step_timeout: DEFAULT_STEP_TIMEOUT,
            max_steps: DEFAULT_MAX_STEPS,
            connect_timeout: Duration::from_secs(5),
        }
    }
}

/// An RL environment over one or more node servers.
pub struct Environment {
    sessions: Vec<ClientSession>,
    catalogs: Vec<Catalog>,
    action_space: SpaceSpec,
    observation_space: SpaceSpec,
    rules: Vec<RewardRule>,
    reset_methods: Vec<(usize, NodeId)>,
    tick_methods: Vec<(usize, NodeId)>,
    observed: HashSet<(usize, NodeId)>,
    cache: ObservationCache,
    state: Option<usize>,
    last_outcome: Option<String>,
    step_timeout: Duration,
    max_steps: usize,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("actions", &self.action_space.size())
            .field("observations", &self.observation_space.size())
            .field("servers", &self.sessions.len())
            .finish()
    }
}

impl Environment {
    pub fn connect(config: &MapperConfig) -> Result<Self, MapperError> {
        let sessions = config
            .endpoints
            .iter()
            .map(|e| ClientSession::connect(e, config.connect_timeout))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_sessions(sessions, config)
    }

    /// Browses every session, discovers the spaces and subscribes to all
    /// observation and reward-rule nodes.
    pub fn from_sessions(
        mut sessions: Vec<ClientSession>,
        config: &MapperConfig,
    ) -> Result<Self, MapperError> {
        let catalogs = sessions
            .iter_mut()
            .map(|s| s.browse_all())
            .collect::<Result<Vec<_>, _>>()?;
        let (action_space, observation_space) = discover_spaces(&catalogs)?;
        for rule in &config.reward_rules {
            if rule.server >= sessions.len() {
                return Err(MapperError::UnknownServer(rule.server));
            }
        }

        let mut watch: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); sessions.len()];
        for b in observation_space.bindings() {
            watch[b.server_index].insert(b.node.clone());
        }
        for r in &config.reward_rules {
            watch[r.server].insert(r.node.clone());
        }
        for (session, nodes) in sessions.iter_mut().zip(watch) {
            if !nodes.is_empty() {
                session.subscribe(nodes.into_iter().collect())?;
            }
        }

        let find = |name: &str| {
            catalogs
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.find_method(name).map(|m| (i, m.id().clone())))
                .collect::<Vec<_>>()
        };
        let reset_methods = find(RESET_METHOD);
        let tick_methods = find(TICK_METHOD);
        let observed = observation_space
            .bindings()
            .iter()
            .map(|b| (b.server_index, b.node.clone()))
            .collect();
        Ok(Environment {
            sessions,
            catalogs,
            action_space,
            observation_space,
            rules: config.reward_rules.clone(),
            reset_methods,
            tick_methods,
            observed,
            cache: HashMap::new(),
            state: None,
            last_outcome: None,
            step_timeout: config.step_timeout,
            max_steps: config.max_steps,
        })
    }

    pub fn action_space(&self) -> &SpaceSpec {
        &self.action_space
    }

    pub fn observation_space(&self) -> &SpaceSpec {
        &self.observation_space
    }

    pub fn catalogs(&self) -> &[Catalog] {
        &self.catalogs
    }

    pub fn state(&self) -> Option<usize> {
        self.state
    }

    /// Label of the rule that ended the last step, if any fired.
    pub fn last_outcome(&self) -> Option<&str> {
        self.last_outcome.as_deref()
    }

    pub fn cached_value(&self, server: usize, node: &NodeId) -> Option<&Value> {
        self.cache.get(&(server, node.clone()))
    }

    pub fn set_step_timeout(&mut self, timeout: Duration) {
        self.step_timeout = timeout;
    }

    pub fn set_max_steps(&mut self, max_steps: usize) {
        self.max_steps = max_steps;
    }

    pub fn session_mut(&mut self, server: usize) -> Option<&mut ClientSession> {
        self.sessions.get_mut(server)
    }

    fn call_all(
        &mut self,
        methods: &[(usize, NodeId)],
        args: Vec<Value>,
    ) -> Result<(), MapperError> {
        for (server, method) in methods {
            let (st, _) = self.sessions[*server].call(method, args.clone())?;
            if st != status::GOOD {
                return Err(MapperError::CallFailed {
                    method: method.to_string(),
                    status: st,
                });
            }
        }
        Ok(())
    }

    /// Starts an episode: calls every `Reset` method, discards the resulting
    /// notifications and reads the observation nodes. Returns the state index.
    pub fn reset(&mut self) -> Result<usize, MapperError> {
        if self.reset_methods.is_empty() {
            return Err(MapperError::NoResetMethod);
        }
        let resets = self.reset_methods.clone();
        self.call_all(&resets, Vec::new())?;
        for session in &self.sessions {
            while session.try_notification()?.is_some() {}
        }
        self.cache.clear();
        for b in self.observation_space.bindings() {
            let v = self.sessions[b.server_index].read(&b.node)?;
            self.cache.insert((b.server_index, b.node.clone()), v);
        }
        let state = values_to_state(&self.observation_space, &self.cache)?;
        self.state = Some(state);
        self.last_outcome = None;
        Ok(state)
    }

    /// Current values of all action nodes, read back from the servers.
    pub fn read_action_nodes(&mut self) -> Result<Vec<Value>, MapperError> {
        let bindings = self.action_space.bindings().to_vec();
        bindings
            .iter()
            .map(|b| Ok(self.sessions[b.server_index].read(&b.node)?))
            .collect()
    }

    /// Drains every queued notification across sessions, in per-session order.
    fn drain(&self) -> Result<Vec<(usize, Notification)>, MapperError> {
        let mut batch = Vec::new();
        for (i, s) in self.sessions.iter().enumerate() {
            while let Some(n) = s.try_notification()? {
                batch.push((i, n));
            }
        }
        Ok(batch)
    }

    /// Blocks until at least one notification arrives on any session.
    fn wait_any(&self, deadline: Instant) -> Result<Vec<(usize, Notification)>, MapperError> {
        const SLICE: Duration = Duration::from_millis(1);
        loop {
            let batch = self.drain()?;
            if !batch.is_empty() {
                return Ok(batch);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(Vec::new());
            }
            let wait = (deadline - now).min(SLICE);
            if self.sessions.len() == 1 {
                if let Some(n) = self.sessions[0].await_notification(deadline - now)? {
                    let mut batch = vec![(0, n)];
                    batch.extend(self.drain()?);
                    return Ok(batch);
                }
            } else {
                std::thread::sleep(wait);
            }
        }
    }

    /// Writes the actuators for `action`, then consumes sensor notifications
    /// until a reward rule fires or an observation node changes.
    ///
    /// All notifications available at once are processed as one batch, so a
    /// reward sensor that changes together with an observation sensor still
    /// counts for this step.
    pub fn step(&mut self, action: usize) -> Result<Transition, MapperError> {
        let state = self.state.ok_or(MapperError::NoEpisode)?;
        for (server, node, value) in action_to_values(&self.action_space, action)? {
            let st = self.sessions[server].write(&node, value)?;
            if st != status::GOOD {
                return Err(MapperError::WriteRejected {
                    node: node.to_string(),
                    status: st,
                });
            }
        }

        let deadline = Instant::now() + self.step_timeout;
        let ticks = self.tick_methods.clone();
        loop {
            let batch = if ticks.is_empty() {
                self.wait_any(deadline)?
            } else {
                if Instant::now() >= deadline {
                    return Err(MapperError::StepTimeout(self.step_timeout));
                }
                self.call_all(&ticks, vec![Value::Int32(1)])?;
                self.drain()?
            };
            if batch.is_empty() && Instant::now() >= deadline {
                return Err(MapperError::StepTimeout(self.step_timeout));
            }

            let mut fired: Option<&RewardRule> = None;
            let mut observation_changed = false;
            for (server, n) in &batch {
                trace!("notify s{server} #{} {} = {}", n.seq, n.node, n.value);
                let key = (*server, n.node.clone());
                if self.observed.contains(&key) {
                    self.cache.insert(key, n.value.clone());
                    observation_changed = true;
                }
                if fired.is_none() {
                    fired = self.rules.iter().find(|r| r.matches(*server, n));
                }
            }
            let (reward, terminal, label) = match fired {
                Some(rule) => (rule.reward, rule.terminal, Some(rule.label.clone())),
                None if observation_changed => (0.0, false, None),
                None => continue,
            };
            let next_state = values_to_state(&self.observation_space, &self.cache)?;
            self.state = Some(next_state);
            self.last_outcome = label;
            let t = Transition {
                state,
                action,
                reward,
                next_state,
                terminal,
            };
            debug!("step {t:?}");
            return Ok(t);
        }
    }

    /// Resets, then alternates `select_action`/`step`/`observe` until a
    /// terminal transition or `max_steps`. A truncated episode hands its last
    /// transition to the agent marked terminal.
    pub fn run_episode(&mut self, agent: &mut dyn Agent) -> Result<EpisodeResult, MapperError> {
        agent.begin_episode();
        let mut state = self.reset()?;
        let mut result = EpisodeResult {
            episode_return: 0.0,
            steps: 0,
            outcome: String::new(),
            truncated: false,
            transitions: Vec::new(),
        };
        loop {
            let action = agent.select_action(state);
            let mut t = self.step(action)?;
            result.steps += 1;
            result.episode_return += t.reward;
            if !t.terminal && result.steps >= self.max_steps {
                t.terminal = true;
                result.truncated = true;
            }
            agent.observe(&t);
            result.transitions.push(t);
            if t.terminal {
                break;
            }
            state = t.next_state;
        }
        result.outcome = if result.truncated {
            "truncated".to_string()
        } else {
            self.last_outcome
                .clone()
                .filter(|l| !l.is_empty())
                .unwrap_or_else(|| "terminal".to_string())
        };
        self.state = None;
        Ok(result)
    }
}

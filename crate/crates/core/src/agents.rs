//! Pluggable agents. The mapper talks to agents only through [`Agent`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mapper::Transition;

pub mod oracle;

pub trait Agent {
    fn begin_episode(&mut self);
    /// Must return an index below the action-space size.
    fn select_action(&mut self, state: usize) -> usize;
    fn observe(&mut self, t: &Transition);
    /// Learned action values, for agents that keep them.
    fn q_table(&self) -> Option<&QTable> {
        None
    }
}

#[derive(Debug, Error)]
pub enum QTableError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Free-form description of the spaces a table was trained on, stored in
/// the CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpaceLabels {
    pub actions: String,
    pub observations: String,
}

/// Dense `|S| x |A|` action-value table, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        QTable {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.actions..(s + 1) * self.actions]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax over `Q(s, .)`; ties go to the lowest action index.
    pub fn greedy_action(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.states).map(|s| self.greedy_action(s)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, labels: &SpaceLabels) -> std::io::Result<()> {
        writeln!(w, "# actions: {} {}", self.actions, labels.actions)?;
        writeln!(w, "# observations: {} {}", self.states, labels.observations)?;
        let mut header = String::from("state");
        for a in 0..self.actions {
            write!(header, ",a{a}").expect("string write");
        }
        writeln!(w, "{header}")?;
        for s in 0..self.states {
            let mut line = s.to_string();
            for v in self.row(s) {
                write!(line, ",{v}").expect("string write");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<(QTable, SpaceLabels), QTableError> {
        let mut labels = SpaceLabels::default();
        let mut dims = (None, None);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut saw_header = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let err = |msg: String| QTableError::Parse { line: lineno, msg };
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, rest) = meta
                    .split_once(": ")
                    .ok_or_else(|| err("bad metadata line".into()))?;
                let (count, label) = rest.split_once(' ').unwrap_or((rest, ""));
                let count: usize = count
                    .parse()
                    .map_err(|_| err(format!("bad count {count:?}")))?;
                match key {
                    "actions" => {
                        dims.1 = Some(count);
                        labels.actions = label.to_string();
                    }
                    "observations" => {
                        dims.0 = Some(count);
                        labels.observations = label.to_string();
                    }
                    _ => return Err(err(format!("unknown metadata {key:?}"))),
                }
                continue;
            }
            if !saw_header {
                if !line.starts_with("state") {
                    return Err(err("missing header row".into()));
                }
                saw_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let s: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| err("bad state index".into()))?;
            if s != rows.len() {
                return Err(err(format!("expected state {}, got {s}", rows.len())));
            }
            let row = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad value {f:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let (Some(states), Some(actions)) = dims else {
            return Err(QTableError::Parse {
                line: 0,
                msg: "missing dimension metadata".into(),
            });
        };
        if rows.len() != states || rows.iter().any(|r| r.len() != actions) {
            return Err(QTableError::Parse {
                line: 0,
                msg: format!("table shape does not match {states}x{actions}"),
            });
        }
        Ok((
            QTable {
                states,
                actions,
                values: rows.concat(),
            },
            labels,
        ))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = a;
        }
    }
    best
}

/// One Watkins Q-learning backup:
/// `Q(s,a) += alpha * (r + gamma * max_b Q(s',b) * [not terminal] - Q(s,a))`.
pub fn q_update(table: &mut QTable, t: &Transition, alpha: f64, gamma: f64) {
    let bootstrap = if t.terminal {
        0.0
    } else {
        gamma * table.max_value(t.next_state)
    };
    let q = table.get(t.state, t.action);
    table.set(t.state, t.action, q + alpha * (t.reward + bootstrap - q));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for QLearningParams {
    fn default() -> Self {
        QLearningParams {
            alpha: 0.4,
            gamma: 0.9,
            epsilon: 0.1,
        }
    }
}

/// Tabular Q-learning with constant learning rate and constant
/// epsilon-greedy exploration.
#[derive(Debug, Clone)]
pub struct QLearningAgent {
    table: QTable,
    params: QLearningParams,
    rng: ChaCha8Rng,
    learning: bool,
}

impl QLearningAgent {
    pub fn new(states: usize, actions: usize, params: QLearningParams, seed: u64) -> Self {
        QLearningAgent {
            table: QTable::zeros(states, actions),
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            learning: true,
        }
    }

    /// Greedy, non-learning agent over a fixed table.
    pub fn frozen(table: QTable) -> Self {
        QLearningAgent {
            table,
            params: QLearningParams {
                epsilon: 0.0,
                ..QLearningParams::default()
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            learning: false,
        }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn params(&self) -> QLearningParams {
        self.params
    }
}

impl Agent for QLearningAgent {
    fn begin_episode(&mut self) {}

    fn select_action(&mut self, state: usize) -> usize {
        if self.params.epsilon > 0.0 && self.rng.gen_bool(self.params.epsilon.min(1.0)) {
            self.rng.gen_range(0..self.table.actions())
        } else {
            self.table.greedy_action(state)
        }
    }

    fn observe(&mut self, t: &Transition) {
        if self.learning {
            q_update(&mut self.table, t, self.params.alpha, self.params.gamma);
        }
    }

    fn q_table(&self) -> Option<&QTable> {
        Some(&self.table)
    }
}

/// Uniform random baseline.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    actions: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(actions: usize, seed: u64) -> Self {
        RandomAgent {
            actions,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn begin_episode(&mut self) {}

    fn select_action(&mut self, _state: usize) -> usize {
        self.rng.gen_range(0..self.actions)
    }

    fn observe(&mut self, _t: &Transition) {}
}

/// Follows a fixed state-to-action table.
#[derive(Debug, Clone)]
pub struct PolicyAgent {
    policy: Vec<usize>,
}

impl PolicyAgent {
    pub fn new(policy: Vec<usize>) -> Self {
        PolicyAgent { policy }
    }

    /// The same action in every state.
    pub fn constant(states: usize, action: usize) -> Self {
        PolicyAgent {
            policy: vec![action; states],
        }
    }
}

impl Agent for PolicyAgent {
    fn begin_episode(&mut self) {}

    fn select_action(&mut self, state: usize) -> usize {
        self.policy[state]
    }

    fn observe(&mut self, _t: &Transition) {}
}

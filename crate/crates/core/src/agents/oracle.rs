//! Explicit finite MDPs and a value-iteration solver, used to certify what
//! a learned policy should converge to.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpOutcome {
    pub probability: f64,
    pub next_state: usize,
    pub reward: f64,
    pub terminal: bool,
}

impl MdpOutcome {
    pub fn certain(next_state: usize, reward: f64, terminal: bool) -> Self {
        MdpOutcome {
            probability: 1.0,
            next_state,
            reward,
            terminal,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("outcome probabilities for (s={state}, a={action}) sum to {sum}")]
    NotADistribution {
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("(s={state}, a={action}) leads to unknown state {next}")]
    BadSuccessor {
        state: usize,
        action: usize,
        next: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ExplicitMdp {
    states: usize,
    actions: usize,
    outcomes: Vec<Vec<MdpOutcome>>,
}

impl ExplicitMdp {
    pub fn new(
        states: usize,
        actions: usize,
        mut dynamics: impl FnMut(usize, usize) -> Vec<MdpOutcome>,
    ) -> Result<Self, MdpError> {
        let mut outcomes = Vec::with_capacity(states * actions);
        for s in 0..states {
            for a in 0..actions {
                let out = dynamics(s, a);
                let sum: f64 = out.iter().map(|o| o.probability).sum();
                if (sum - 1.0).abs() > 1e-9 || out.iter().any(|o| o.probability < 0.0) {
                    return Err(MdpError::NotADistribution {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                if let Some(o) = out.iter().find(|o| o.next_state >= states) {
                    return Err(MdpError::BadSuccessor {
                        state: s,
                        action: a,
                        next: o.next_state,
                    });
                }
                outcomes.push(out);
            }
        }
        Ok(ExplicitMdp {
            states,
            actions,
            outcomes,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[MdpOutcome] {
        &self.outcomes[s * self.actions + a]
    }

    fn backup(&self, values: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
        self.outcomes(s, a)
            .iter()
            .map(|o| {
                let future = if o.terminal {
                    0.0
                } else {
                    values[o.next_state]
                };
                o.probability * (o.reward + gamma * future)
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: Vec<f64>,
    /// Row-major `|S| x |A|` optimal action values.
    pub q_values: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
    actions: usize,
}

impl ValueIterationResult {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_values[s * self.actions + a]
    }

    /// Every action within `tol` of the best value in state `s`.
    pub fn optimal_actions(&self, s: usize, tol: f64) -> Vec<usize> {
        let row = &self.q_values[s * self.actions..(s + 1) * self.actions];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..self.actions)
            .filter(|&a| row[a] >= best - tol)
            .collect()
    }
}

const MAX_SWEEPS: usize = 1_000_000;

/// Bellman optimality sweeps until the largest value change is below `tol`.
/// The returned policy breaks ties towards the lowest action index.
pub fn value_iteration(mdp: &ExplicitMdp, gamma: f64, tol: f64) -> ValueIterationResult {
    assert!(tol > 0.0, "tolerance must be positive");
    assert!((0.0..1.0).contains(&gamma), "gamma must be in [0, 1)");
    let mut values = vec![0.0; mdp.states];
    let mut iterations = 0;
    while iterations < MAX_SWEEPS {
        iterations += 1;
        let next: Vec<f64> = (0..mdp.states)
            .map(|s| {
                (0..mdp.actions)
                    .map(|a| mdp.backup(&values, s, a, gamma))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let delta = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if delta < tol {
            break;
        }
    }
    let mut q_values = Vec::with_capacity(mdp.states * mdp.actions);
    let mut policy = Vec::with_capacity(mdp.states);
    for s in 0..mdp.states {
        let row: Vec<f64> = (0..mdp.actions)
            .map(|a| mdp.backup(&values, s, a, gamma))
            .collect();
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        policy.push(best);
        q_values.extend(row);
    }
    ValueIterationResult {
        values,
        q_values,
        policy,
        iterations,
        actions: mdp.actions,
    }
}

/// State indices of the sorting plant under the binding order
/// `[LightBarrier, ColorInspection]` (index = barrier * 3 + color).
pub mod plant_states {
    pub const INBOUND: usize = 0;
    pub const GREEN: usize = 1;
    pub const BLUE: usize = 2;
    pub const ON_TABLE: usize = 3;
    pub const INVALID: [usize; 2] = [4, 5];
}

/// Action indices under the binding order `[RotateTable, BeltDirection]`
/// (index = rotate * 2 + direction, direction 0 = left).
pub mod plant_actions {
    pub const ADVANCE_LEFT: usize = 0;
    pub const ADVANCE_RIGHT: usize = 1;
    pub const ROTATE_LEFT: usize = 2;
    pub const ROTATE_RIGHT: usize = 3;
}

pub const REWARD_CORRECT: f64 = 5.0;
pub const REWARD_WRONG: f64 = -1.0;
pub const REWARD_DROPPED: f64 = -3.0;
pub const REWARD_STUCK: f64 = -5.0;

/// The sorting plant written out as an explicit MDP, green material
/// belonging on the left. The two sensor combinations that cannot occur
/// are modelled as zero-reward terminal states.
pub fn plant_mdp() -> ExplicitMdp {
    use plant_actions::*;
    use plant_states::*;
    ExplicitMdp::new(6, 4, |s, a| match (s, a) {
        (INBOUND, ADVANCE_LEFT | ADVANCE_RIGHT) => vec![
            MdpOutcome {
                probability: 0.5,
                next_state: GREEN,
                reward: 0.0,
                terminal: false,
            },
            MdpOutcome {
                probability: 0.5,
                next_state: BLUE,
                reward: 0.0,
                terminal: false,
            },
        ],
        (INBOUND, _) => vec![MdpOutcome::certain(INBOUND, REWARD_STUCK, true)],
        (GREEN, ROTATE_LEFT) | (BLUE, ROTATE_RIGHT) => {
            vec![MdpOutcome::certain(INBOUND, REWARD_CORRECT, true)]
        }
        (GREEN, ROTATE_RIGHT) | (BLUE, ROTATE_LEFT) => {
            vec![MdpOutcome::certain(INBOUND, REWARD_WRONG, true)]
        }
        (GREEN | BLUE, _) => vec![MdpOutcome::certain(ON_TABLE, 0.0, false)],
        (ON_TABLE, _) => vec![MdpOutcome::certain(INBOUND, REWARD_DROPPED, true)],
        (s, _) => vec![MdpOutcome::certain(s, 0.0, true)],
    })
    .expect("plant MDP is well-formed")
}

/// Expected undiscounted return of the uniform random policy from each
/// state, by exhaustive expansion (the plant MDP is acyclic).
pub fn uniform_policy_return(mdp: &ExplicitMdp, state: usize) -> f64 {
    fn go(mdp: &ExplicitMdp, s: usize, depth: usize) -> f64 {
        assert!(depth < 64, "MDP is not acyclic");
        let n = mdp.actions() as f64;
        (0..mdp.actions())
            .map(|a| {
                mdp.outcomes(s, a)
                    .iter()
                    .map(|o| {
                        let future = if o.terminal {
                            0.0
                        } else {
                            go(mdp, o.next_state, depth + 1)
                        };
                        o.probability * (o.reward + future)
                    })
                    .sum::<f64>()
                    / n
            })
            .sum()
    }
    go(mdp, state, 0)
}

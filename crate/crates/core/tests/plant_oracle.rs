//! The simulated plant, seen through the default reward rules and the
//! observation encoding, must realise exactly the explicit oracle MDP.

use std::collections::{BTreeSet, HashMap};

use uarl::address_space::{NodeId, Value};
use uarl::agents::oracle::{plant_mdp, plant_states, MdpOutcome};
use uarl::plant_sim::{
    default_reward_rules, Actuation, MaterialColor, Plant, PlantConfig, PlantNodes, PlantPhase,
    Side,
};

/// (next_state, reward, terminal) with the reward in tenths for hashing.
type Step = (usize, i64, bool);

fn state_of(p: &Plant) -> usize {
    let s = p.sensors();
    (s.light_barrier * 3 + s.color_inspection) as usize
}

/// One RL step at the plant level: actuate, then tick until a reward rule
/// fires or an observation sensor changes.
fn step(p: &mut Plant, a: usize) -> Step {
    let ids = PlantNodes::default();
    let rules = default_reward_rules(Side::Left);
    let observed = [ids.light_barrier.clone(), ids.color_inspection.clone()];
    let mut emissions = p.actuate(Actuation::ALL[a]);
    for _ in 0..1000 {
        let mut fired = None;
        let mut changed = false;
        for (sensor, v) in &emissions {
            let node: &NodeId = ids.sensor(*sensor);
            changed |= observed.contains(node);
            if fired.is_none() {
                fired = rules
                    .iter()
                    .find(|r| &r.node == node && r.value == Value::Int32(*v));
            }
        }
        if let Some(r) = fired {
            return (state_of(p), (r.reward * 10.0).round() as i64, r.terminal);
        }
        if changed {
            return (state_of(p), 0, false);
        }
        emissions = p.tick(1);
    }
    panic!("no sensor change after actuation {a}");
}

fn plant_in(phase: PlantPhase) -> Vec<Plant> {
    let mut out = Vec::new();
    for seed in 0..64 {
        let mut p = Plant::new(PlantConfig {
            seed,
            ..PlantConfig::default()
        });
        let reached = match phase {
            PlantPhase::Inbound => true,
            PlantPhase::AtColorStation(c) => {
                p.color() == c && {
                    p.actuate(Actuation::ALL[0]);
                    true
                }
            }
            PlantPhase::OnTable => {
                p.actuate(Actuation::ALL[0]);
                p.actuate(Actuation::ALL[0]);
                true
            }
            PlantPhase::Terminal(_) => unreachable!(),
        };
        if reached {
            assert_eq!(p.phase(), phase);
            out.push(p);
        }
    }
    out
}

fn oracle_support(s: usize, a: usize) -> BTreeSet<Step> {
    plant_mdp()
        .outcomes(s, a)
        .iter()
        .filter(|o: &&MdpOutcome| o.probability > 0.0)
        .map(|o| {
            // Terminal successors in the MDP are placeholders; the plant
            // keeps reporting its final sensor state.
            (o.next_state, (o.reward * 10.0).round() as i64, o.terminal)
        })
        .collect()
}

#[test]
fn every_phase_and_action_matches_the_oracle() {
    let phases = [
        (PlantPhase::Inbound, plant_states::INBOUND),
        (
            PlantPhase::AtColorStation(MaterialColor::Green),
            plant_states::GREEN,
        ),
        (
            PlantPhase::AtColorStation(MaterialColor::Blue),
            plant_states::BLUE,
        ),
        (PlantPhase::OnTable, plant_states::ON_TABLE),
    ];
    for (phase, s) in phases {
        for a in 0..4 {
            let plants = plant_in(phase);
            assert!(!plants.is_empty());
            assert!(
                plants.iter().all(|p| state_of(p) == s),
                "phase {phase:?} encodes as {s}"
            );
            let observed: BTreeSet<(i64, bool)> = plants
                .into_iter()
                .map(|mut p| {
                    let (_, r, t) = step(&mut p, a);
                    (r, t)
                })
                .collect();
            let expected: BTreeSet<(i64, bool)> = oracle_support(s, a)
                .into_iter()
                .map(|(_, r, t)| (r, t))
                .collect();
            assert_eq!(observed, expected, "phase {phase:?}, action {a}");
        }
    }
}

#[test]
fn non_terminal_successors_match_the_oracle() {
    let phases = [
        (PlantPhase::Inbound, plant_states::INBOUND),
        (
            PlantPhase::AtColorStation(MaterialColor::Green),
            plant_states::GREEN,
        ),
        (
            PlantPhase::AtColorStation(MaterialColor::Blue),
            plant_states::BLUE,
        ),
    ];
    for (phase, s) in phases {
        for a in 0..4 {
            let expected: BTreeSet<usize> = oracle_support(s, a)
                .into_iter()
                .filter(|o| !o.2)
                .map(|o| o.0)
                .collect();
            let observed: BTreeSet<usize> = plant_in(phase)
                .into_iter()
                .filter_map(|mut p| {
                    let (next, _, terminal) = step(&mut p, a);
                    (!terminal).then_some(next)
                })
                .collect();
            assert_eq!(observed, expected, "phase {phase:?}, action {a}");
        }
    }
}

#[test]
fn advance_splits_colors_evenly() {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for seed in 0..20 {
        let mut p = Plant::new(PlantConfig {
            seed,
            ..PlantConfig::default()
        });
        for _ in 0..500 {
            p.reset();
            *counts.entry(step(&mut p, 0).0).or_default() += 1;
        }
    }
    let green = counts[&plant_states::GREEN] as f64 / 10_000.0;
    assert!((green - 0.5).abs() < 0.02, "green share {green}");
    assert_eq!(counts.len(), 2);
}

#[test]
fn invalid_sensor_states_are_unreachable() {
    for seed in 0..50 {
        let mut p = Plant::new(PlantConfig {
            seed,
            ..PlantConfig::default()
        });
        for path in 0..64usize {
            p.reset();
            for depth in 0..3 {
                let a = (path >> (2 * depth)) & 3;
                let (next, _, terminal) = step(&mut p, a);
                assert!(!plant_states::INVALID.contains(&next));
                if terminal {
                    break;
                }
            }
        }
    }
}

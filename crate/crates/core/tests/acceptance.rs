//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{nid, switch_space, TIMEOUT};
use uarl::address_space::{
    BrowseEntry, NodeClass, NodeDescriptor, NodeId, ReferenceType, RlMarker, Value,
};
use uarl::agents::oracle::{
    plant_actions::*, plant_mdp, plant_states::*, value_iteration, ValueIterationResult,
};
use uarl::agents::{Agent, PolicyAgent, QLearningAgent, QLearningParams};
use uarl::cli::{build_agent, TrainConfig};
use uarl::client::ClientSession;
use uarl::mapper::{discover_spaces, Environment, MapperConfig};
use uarl::plant_sim::{self, default_reward_rules, PlantConfig, PlantServerOptions, Side};
use uarl::server::{self, ServerHandle};
use uarl::wire::{self, FrameReader, Message};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn plant(seed: u64) -> ServerHandle {
    plant_sim::serve_plant(
        "127.0.0.1:0",
        PlantServerOptions {
            plant: PlantConfig {
                seed,
                ..PlantConfig::default()
            },
            ..PlantServerOptions::default()
        },
    )
    .expect("plant server")
}

fn plant_env(srv: &ServerHandle) -> Environment {
    Environment::connect(&MapperConfig::new(
        vec![srv.endpoint()],
        default_reward_rules(Side::Left),
    ))
    .expect("environment")
}

fn oracle() -> ValueIterationResult {
    value_iteration(&plant_mdp(), 0.9, 1e-12)
}

fn c1_space_discovery() -> Outcome {
    let srv = plant(0);
    let t = Instant::now();
    let mut session =
        ClientSession::connect(&srv.endpoint(), TIMEOUT).map_err(|e| e.to_string())?;
    let catalog = session.browse_all().map_err(|e| e.to_string())?;
    let (a, s) = discover_spaces(&[catalog]).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    check(
        a.size() == 4 && s.size() == 6 && elapsed < Duration::from_secs(1),
        format!("|A| = {}, |S| = {}, {elapsed:.2?}", a.size(), s.size()),
    )
}

fn c2_reward_fidelity() -> Outcome {
    let srv = plant(21);
    let mut env = plant_env(&srv);
    let policies: [(&str, [usize; 6], f64); 4] = [
        (
            "correct",
            [ADVANCE_LEFT, ROTATE_LEFT, ROTATE_RIGHT, 0, 0, 0],
            5.0,
        ),
        (
            "wrong",
            [ADVANCE_LEFT, ROTATE_RIGHT, ROTATE_LEFT, 0, 0, 0],
            -1.0,
        ),
        ("dropped", [ADVANCE_LEFT; 6], -3.0),
        ("stuck", [ROTATE_LEFT; 6], -5.0),
    ];
    let mut seen = Vec::new();
    for (label, policy, expected) in policies {
        let mut agent = PolicyAgent::new(policy.to_vec());
        for _ in 0..10 {
            let r = env.run_episode(&mut agent).map_err(|e| e.to_string())?;
            let terminal_reward = r.transitions.last().map(|t| t.reward);
            if r.outcome != label
                || terminal_reward != Some(expected)
                || r.episode_return != expected
            {
                return Err(format!(
                    "{label}: got {} with return {}",
                    r.outcome, r.episode_return
                ));
            }
        }
        seen.push(format!("{label}={expected:+}"));
    }
    Ok(seen.join(" "))
}

struct Run {
    matches: bool,
    q_green_left: f64,
    q_s0_advance: f64,
    elapsed: Duration,
}

fn train(seed: u64, episodes: usize) -> Result<Run, String> {
    let srv = plant(seed);
    let mut env = plant_env(&srv);
    let mut agent = QLearningAgent::new(6, 4, QLearningParams::default(), seed);
    let t = Instant::now();
    for _ in 0..episodes {
        env.run_episode(&mut agent)
            .map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let elapsed = t.elapsed();
    let q = agent.table();
    let vi = oracle();
    let matches = vi
        .optimal_actions(INBOUND, 1e-9)
        .contains(&q.greedy_action(INBOUND))
        && q.greedy_action(GREEN) == vi.policy[GREEN]
        && q.greedy_action(BLUE) == vi.policy[BLUE];
    Ok(Run {
        matches,
        q_green_left: q.get(GREEN, ROTATE_LEFT),
        q_s0_advance: q
            .get(INBOUND, ADVANCE_LEFT)
            .max(q.get(INBOUND, ADVANCE_RIGHT)),
        elapsed,
    })
}

fn c3_c4_policy_learning() -> (Outcome, Outcome) {
    let runs: Result<Vec<Run>, String> = (0..50).map(|seed| train(seed, 150)).collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let matched = runs.iter().filter(|r| r.matches).count();
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let c3 = check(
        matched >= 47 && slowest < Duration::from_secs(30),
        format!(
            "{matched}/50 seeds match the oracle policy; slowest 150-episode run {slowest:.2?}"
        ),
    );

    let vi = oracle();
    let (v_green, v_s0) = (vi.q(GREEN, ROTATE_LEFT), vi.q(INBOUND, ADVANCE_LEFT));
    let accurate = runs
        .iter()
        .filter(|r| (r.q_green_left - v_green).abs() <= 0.5 && (r.q_s0_advance - v_s0).abs() <= 0.7)
        .count();
    let worst_green = runs
        .iter()
        .map(|r| (r.q_green_left - v_green).abs())
        .fold(0.0, f64::max);
    let worst_s0 = runs
        .iter()
        .map(|r| (r.q_s0_advance - v_s0).abs())
        .fold(0.0, f64::max);
    let c4 = check(
        accurate == runs.len(),
        format!(
            "{accurate}/50 runs within tolerance; max |Q(green, rotate-left) - {v_green}| = {worst_green:.4}, \
             max |Q(s0, advance) - {v_s0}| = {worst_s0:.4}"
        ),
    );
    (c3, c4)
}

fn random_node_id(rng: &mut ChaCha8Rng) -> NodeId {
    if rng.gen_bool(0.5) {
        NodeId::numeric(rng.gen(), rng.gen())
    } else {
        let len = rng.gen_range(1..10);
        let s: String = (0..len).map(|_| rng.gen_range('a'..='z')).collect();
        NodeId::text(rng.gen(), s).expect("non-empty")
    }
}

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..4) {
        0 => Value::Bool(rng.gen()),
        1 => Value::Int32(rng.gen()),
        2 => Value::Double(rng.gen_range(-1e9..1e9)),
        _ => Value::Text(
            (0..rng.gen_range(0..8))
                .map(|_| rng.gen::<char>())
                .collect(),
        ),
    }
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let values = |rng: &mut ChaCha8Rng| {
        (0..rng.gen_range(0..4))
            .map(|_| random_value(rng))
            .collect()
    };
    match rng.gen_range(0..14) {
        0 => Message::Hello { version: rng.gen() },
        1 => Message::HelloAck {
            server_name: "plant".into(),
        },
        2 => Message::BrowseReq {
            node: random_node_id(rng),
        },
        3 => Message::BrowseResp {
            entries: (0..rng.gen_range(0..4))
                .map(|_| BrowseEntry {
                    reference_type: ReferenceType::HasComponent,
                    target: NodeDescriptor {
                        id: random_node_id(rng),
                        browse_name: "n".into(),
                        node_class: NodeClass::Variable,
                        type_definition: rng.gen_bool(0.5).then(|| random_node_id(rng)),
                        marker: rng.gen_bool(0.5).then(|| {
                            RlMarker::int_observation(0, rng.gen_range(0..9), 1).expect("valid")
                        }),
                    },
                })
                .collect(),
        },
        4 => Message::ReadReq {
            node: random_node_id(rng),
        },
        5 => Message::ReadResp {
            value: random_value(rng),
        },
        6 => Message::WriteReq {
            node: random_node_id(rng),
            value: random_value(rng),
        },
        7 => Message::WriteResp { status: rng.gen() },
        8 => Message::CallReq {
            method: random_node_id(rng),
            args: values(rng),
        },
        9 => Message::CallResp {
            status: rng.gen(),
            results: values(rng),
        },
        10 => Message::SubscribeReq {
            nodes: (0..rng.gen_range(0..5))
                .map(|_| random_node_id(rng))
                .collect(),
        },
        11 => Message::SubscribeResp {
            subscription_id: rng.gen(),
        },
        12 => Message::Notify {
            subscription_id: rng.gen(),
            seq: rng.gen(),
            node: random_node_id(rng),
            value: random_value(rng),
        },
        _ => Message::Error {
            code: rng.gen(),
            text: "boom".into(),
        },
    }
}

fn c5_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let m = random_message(&mut rng);
        let id = rng.gen();
        let bytes = wire::encode(&m, id).map_err(|e| e.to_string())?;
        if wire::decode(&bytes) != Ok((m.clone(), id)) {
            return Err(format!("round trip {i} failed for {m:?}"));
        }
    }
    let vectors: [(Message, u32, &[u8]); 3] = [
        (
            Message::Hello { version: 1 },
            1,
            &[
                0x55, 0x41, 0x42, 0x4C, 0x01, 0x01, 0, 0, 0, 0x02, 0, 0, 0, 0x01, 0x00,
            ],
        ),
        (
            Message::WriteReq {
                node: NodeId::numeric(1, 42),
                value: Value::Int32(1),
            },
            7,
            &[
                0x55, 0x41, 0x42, 0x4C, 0x14, 0x07, 0, 0, 0, 0x0C, 0, 0, 0, 0x01, 0x00, 0x00, 0x2A,
                0x00, 0x00, 0x00, 0x01, 0x01, 0x00, 0x00, 0x00,
            ],
        ),
        (
            Message::Error {
                code: 0,
                text: String::new(),
            },
            0,
            &[
                0x55, 0x41, 0x42, 0x4C, 0x7F, 0, 0, 0, 0, 0x06, 0, 0, 0, 0, 0, 0, 0, 0, 0,
            ],
        ),
    ];
    for (m, id, expected) in &vectors {
        let bytes = wire::encode(m, *id).map_err(|e| e.to_string())?;
        if bytes != *expected {
            return Err(format!("{m:?} encodes as {bytes:02X?}"));
        }
        if wire::decode(expected) != Ok((m.clone(), *id)) {
            return Err(format!("vector for {m:?} does not decode"));
        }
    }
    let fuzzed = panic::catch_unwind(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..10_000 {
            let len = rng.gen_range(0..48);
            let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            if len >= 13 && rng.gen_bool(0.5) {
                bytes[..4].copy_from_slice(b"UABL");
                bytes[9..13].copy_from_slice(&((len - 13) as u32).to_le_bytes());
            }
            let _ = wire::decode(&bytes);
            let _ = FrameReader::new().feed(&bytes);
        }
    });
    check(
        fuzzed.is_ok(),
        "1000 round trips exact, 3 byte vectors exact, 10000 fuzz inputs without panic".into(),
    )
}

fn c6_pubsub() -> Outcome {
    let srv =
        server::serve("127.0.0.1:0", common::machine_space(), vec![]).map_err(|e| e.to_string())?;
    let mut writer = ClientSession::connect(&srv.endpoint(), TIMEOUT).map_err(|e| e.to_string())?;
    let node = nid(3);
    let mut current = 0;
    for k in 1..=100 {
        let subs: Vec<ClientSession> = (0..2)
            .map(|_| {
                let mut c = ClientSession::connect(&srv.endpoint(), TIMEOUT).expect("connect");
                c.subscribe(vec![node.clone()]).expect("subscribe");
                c
            })
            .collect();
        let mut written = Vec::new();
        for _ in 0..k {
            current += 1;
            writer
                .write(&node, Value::Int32(current))
                .map_err(|e| e.to_string())?;
            written.push(current);
        }
        for c in &subs {
            let mut got = Vec::new();
            while let Some(n) = c
                .await_notification(Duration::from_millis(100))
                .map_err(|e| e.to_string())?
            {
                got.push((n.seq, n.value));
            }
            let expected: Vec<(u64, Value)> = written
                .iter()
                .enumerate()
                .map(|(i, v)| (i as u64 + 1, Value::Int32(*v)))
                .collect();
            if got != expected {
                return Err(format!(
                    "k = {k}: received {} frames, expected {k}",
                    got.len()
                ));
            }
        }
    }
    Ok("k = 1..=100, 2 subscribers each: exactly k in-order frames, seq 1..=k".into())
}

fn c7_multi_server() -> Outcome {
    let a = server::serve("127.0.0.1:0", switch_space(1, "Valve", true), vec![])
        .map_err(|e| e.to_string())?;
    let b = server::serve("127.0.0.1:0", switch_space(5, "Pump", false), vec![])
        .map_err(|e| e.to_string())?;
    let browse = || -> Result<Vec<_>, String> {
        [&a, &b]
            .iter()
            .map(|s| {
                ClientSession::connect(&s.endpoint(), TIMEOUT)
                    .and_then(|mut c| c.browse_all())
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let first = discover_spaces(&browse()?).map_err(|e| e.to_string())?;
    let second = discover_spaces(&browse()?).map_err(|e| e.to_string())?;
    let order: Vec<(usize, NodeId)> = first
        .0
        .bindings()
        .iter()
        .map(|b| (b.server_index, b.node.clone()))
        .collect();
    check(
        first.0.size() == 4 && first == second && order == vec![(0, nid(1)), (1, nid(5))],
        format!(
            "|A| = {} ({}), binding order stable across browses",
            first.0.size(),
            first.0.describe()
        ),
    )
}

fn c8_invalid_states() -> Outcome {
    let srv = plant(8);
    let mut env = plant_env(&srv);
    let mut agent = uarl::agents::RandomAgent::new(4, 8);
    let ids = plant_sim::PlantNodes::default();
    let mut transitions = 0;
    for episode in 0..1000 {
        let r = env.run_episode(&mut agent).map_err(|e| e.to_string())?;
        for t in &r.transitions {
            transitions += 1;
            if INVALID.contains(&t.next_state) || INVALID.contains(&t.state) {
                return Err(format!("episode {episode} reached state {}", t.next_state));
            }
        }
        let barrier = env.cached_value(0, &ids.light_barrier);
        let color = env.cached_value(0, &ids.color_inspection);
        if barrier == Some(&Value::Int32(1)) && color != Some(&Value::Int32(0)) {
            return Err(format!(
                "episode {episode} ended with an invalid sensor pair"
            ));
        }
    }
    Ok(format!(
        "1000 random episodes, {transitions} transitions, no invalid state"
    ))
}

fn c9_agent_agnosticism() -> Outcome {
    let srv = plant(9);
    let config = |agent_line: &str| -> Result<TrainConfig, String> {
        let json = format!(
            "{{\n  \"endpoints\": [\"{}\"],\n  {agent_line}\n}}",
            srv.endpoint()
        );
        let c: TrainConfig = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    };
    let configs = [
        config(r#""agent": {"type": "random", "seed": 1}"#)?,
        config(r#""agent": {"type": "qlearning", "seed": 1}"#)?,
    ];
    let mut env = uarl::cli::open_environment(&configs[0]).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for c in &configs {
        let mut agent: Box<dyn Agent> = build_agent(&c.agent, 6, 4);
        let mut total = 0.0;
        for _ in 0..50 {
            total += env
                .run_episode(agent.as_mut())
                .map_err(|e| e.to_string())?
                .episode_return;
        }
        summary.push(format!(
            "{:?}: mean return {:.2}",
            c.agent.kind,
            total / 50.0
        ));
    }
    Ok(format!(
        "one environment, one changed config line; {}",
        summary.join(", ")
    ))
}

fn run(results: &mut Vec<bool>, n: usize, name: &str, outcome: Outcome) {
    let (ok, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!(
        "{} [{n}] {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    results.push(ok);
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    run(
        &mut results,
        1,
        "space discovery",
        guarded(c1_space_discovery).and_then(|r| r),
    );
    run(
        &mut results,
        2,
        "reward fidelity",
        guarded(c2_reward_fidelity).and_then(|r| r),
    );
    let (c3, c4) = guarded(c3_c4_policy_learning).unwrap_or_else(|e| (Err(e.clone()), Err(e)));
    run(&mut results, 3, "policy learning", c3);
    run(&mut results, 4, "learned-value accuracy", c4);
    run(
        &mut results,
        5,
        "codec soundness",
        guarded(c5_codec).and_then(|r| r),
    );
    run(
        &mut results,
        6,
        "pubsub contract",
        guarded(c6_pubsub).and_then(|r| r),
    );
    run(
        &mut results,
        7,
        "multi-server product",
        guarded(c7_multi_server).and_then(|r| r),
    );
    run(
        &mut results,
        8,
        "invalid-state invariant",
        guarded(c8_invalid_states).and_then(|r| r),
    );
    run(
        &mut results,
        9,
        "agent agnosticism",
        guarded(c9_agent_agnosticism).and_then(|r| r),
    );
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

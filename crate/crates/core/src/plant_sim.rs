//! Simulated material-flow sorting plant.
//!
//! A single material is released at the outlet, inspected for color, and
//! routed over a turntable to the left or right station. The plant is a
//! deterministic event machine; the only randomness is the color drawn on
//! each reset. It is served through the ordinary node server so a client
//! cannot tell it apart from hardware.
//!
//! Transition table (rotate, direction) with direction 0 = left, 1 = right:
//!
//! | phase            | action     | effect                                        |
//! |------------------|------------|-----------------------------------------------|
//! | Inbound          | (1, *)     | jam; `StuckDetected` after the stuck timeout  |
//! | Inbound          | (0, *)     | advance; `ColorInspection` := 1 or 2          |
//! | AtColorStation c | (1, d)     | route to side d; station sensor := color code |
//! | AtColorStation c | (0, *)     | onto the table; `LightBarrier` := 1           |
//! | OnTable          | any        | falls; `LightGrid` := 1                       |
//!
//! Actuator writes are latched. A `Tick(n)` call applies the latched command
//! (if any write happened since the last tick) and then advances simulated
//! time by `n` units.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::address_space::{
    AddressSpace, Node, NodeId, ReferenceType, RlMarker, Value, OBJECTS_FOLDER,
};
use crate::mapper::RewardRule;
use crate::server::{self, MethodHandler, ServerError, ServerHandle, ServerOptions};

pub const DEFAULT_STUCK_TIMEOUT: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaterialColor {
    Green,
    Blue,
}

impl MaterialColor {
    /// Value reported by the color sensors.
    pub fn code(self) -> i32 {
        match self {
            MaterialColor::Green => 1,
            MaterialColor::Blue => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// `BeltDirection` encoding.
    pub fn code(self) -> i32 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(format!("expected left or right, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Correct,
    Wrong,
    Dropped,
    Stuck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlantPhase {
    Inbound,
    AtColorStation(MaterialColor),
    OnTable,
    Terminal(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sensor {
    LightBarrier,
    ColorInspection,
    LeftStationColor,
    RightStationColor,
    LightGrid,
    StuckDetected,
}

pub type Emission = (Sensor, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SensorReadings {
    pub light_barrier: i32,
    pub color_inspection: i32,
    pub left_station_color: i32,
    pub right_station_color: i32,
    pub light_grid: i32,
    pub stuck_detected: i32,
}

impl SensorReadings {
    fn slot(&mut self, s: Sensor) -> &mut i32 {
        match s {
            Sensor::LightBarrier => &mut self.light_barrier,
            Sensor::ColorInspection => &mut self.color_inspection,
            Sensor::LeftStationColor => &mut self.left_station_color,
            Sensor::RightStationColor => &mut self.right_station_color,
            Sensor::LightGrid => &mut self.light_grid,
            Sensor::StuckDetected => &mut self.stuck_detected,
        }
    }

    pub fn get(&self, s: Sensor) -> i32 {
        let mut copy = *self;
        *copy.slot(s)
    }
}

/// A turntable command: whether to rotate, and which way the belt runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Actuation {
    pub rotate: bool,
    pub direction: Side,
}

impl Actuation {
    pub const ALL: [Actuation; 4] = [
        Actuation {
            rotate: false,
            direction: Side::Left,
        },
        Actuation {
            rotate: false,
            direction: Side::Right,
        },
        Actuation {
            rotate: true,
            direction: Side::Left,
        },
        Actuation {
            rotate: true,
            direction: Side::Right,
        },
    ];

    pub fn from_values(rotate: i32, direction: i32) -> Self {
        Actuation {
            rotate: rotate != 0,
            direction: if direction == 0 {
                Side::Left
            } else {
                Side::Right
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantConfig {
    pub seed: u64,
    pub stuck_timeout: u64,
    /// The station green material belongs to; blue goes to the other one.
    pub green_side: Side,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            seed: 0,
            stuck_timeout: DEFAULT_STUCK_TIMEOUT,
            green_side: Side::Left,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    rng: ChaCha8Rng,
    phase: PlantPhase,
    color: MaterialColor,
    jam_elapsed: Option<u64>,
    sensors: SensorReadings,
}

impl Plant {
    /// A plant in `Inbound` with a color already drawn.
    pub fn new(config: PlantConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut plant = Plant {
            config,
            rng,
            phase: PlantPhase::Inbound,
            color: MaterialColor::Green,
            jam_elapsed: None,
            sensors: SensorReadings::default(),
        };
        plant.reset();
        plant
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn phase(&self) -> PlantPhase {
        self.phase
    }

    pub fn color(&self) -> MaterialColor {
        self.color
    }

    pub fn sensors(&self) -> SensorReadings {
        self.sensors
    }

    pub fn jam_pending(&self) -> bool {
        self.jam_elapsed.is_some()
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.phase {
            PlantPhase::Terminal(o) => Some(o),
            _ => None,
        }
    }

    pub fn target_side(&self, color: MaterialColor) -> Side {
        match color {
            MaterialColor::Green => self.config.green_side,
            MaterialColor::Blue => self.config.green_side.other(),
        }
    }

    fn set(&mut self, out: &mut Vec<Emission>, s: Sensor, v: i32) {
        let slot = self.sensors.slot(s);
        if *slot != v {
            *slot = v;
            out.push((s, v));
        }
    }

    /// Starts a new episode from any phase. Actuators are not touched.
    pub fn reset(&mut self) -> Vec<Emission> {
        let mut out = Vec::new();
        self.phase = PlantPhase::Inbound;
        self.jam_elapsed = None;
        self.color = if self.rng.gen_bool(0.5) {
            MaterialColor::Green
        } else {
            MaterialColor::Blue
        };
        for s in [
            Sensor::LightBarrier,
            Sensor::ColorInspection,
            Sensor::LeftStationColor,
            Sensor::RightStationColor,
            Sensor::LightGrid,
            Sensor::StuckDetected,
        ] {
            self.set(&mut out, s, 0);
        }
        out
    }

    pub fn actuate(&mut self, a: Actuation) -> Vec<Emission> {
        let mut out = Vec::new();
        match self.phase {
            PlantPhase::Terminal(_) => {
                warn!("actuation {a:?} ignored: episode already ended");
            }
            PlantPhase::Inbound if self.jam_elapsed.is_some() => {
                warn!("actuation {a:?} ignored: material is jammed");
            }
            PlantPhase::Inbound if a.rotate => {
                self.jam_elapsed = Some(0);
                self.check_watchdog(&mut out);
            }
            PlantPhase::Inbound => {
                self.set(&mut out, Sensor::ColorInspection, self.color.code());
                self.phase = PlantPhase::AtColorStation(self.color);
            }
            PlantPhase::AtColorStation(color) if a.rotate => {
                self.set(&mut out, Sensor::ColorInspection, 0);
                let station = match a.direction {
                    Side::Left => Sensor::LeftStationColor,
                    Side::Right => Sensor::RightStationColor,
                };
                self.set(&mut out, station, color.code());
                let outcome = if a.direction == self.target_side(color) {
                    Outcome::Correct
                } else {
                    Outcome::Wrong
                };
                self.phase = PlantPhase::Terminal(outcome);
            }
            PlantPhase::AtColorStation(_) => {
                self.set(&mut out, Sensor::ColorInspection, 0);
                self.set(&mut out, Sensor::LightBarrier, 1);
                self.phase = PlantPhase::OnTable;
            }
            PlantPhase::OnTable => {
                self.set(&mut out, Sensor::LightBarrier, 0);
                self.set(&mut out, Sensor::LightGrid, 1);
                self.phase = PlantPhase::Terminal(Outcome::Dropped);
            }
        }
        out
    }

    /// Advances the stuck watchdog by `n` time units.
    pub fn tick(&mut self, n: u64) -> Vec<Emission> {
        let mut out = Vec::new();
        if let Some(elapsed) = self.jam_elapsed.as_mut() {
            *elapsed = elapsed.saturating_add(n);
            self.check_watchdog(&mut out);
        }
        out
    }

    fn check_watchdog(&mut self, out: &mut Vec<Emission>) {
        if self
            .jam_elapsed
            .is_some_and(|e| e >= self.config.stuck_timeout)
        {
            self.jam_elapsed = None;
            self.set(out, Sensor::StuckDetected, 1);
            self.phase = PlantPhase::Terminal(Outcome::Stuck);
        }
    }
}

/// Node ids of the plant's address space.
#[derive(Debug, Clone)]
pub struct PlantNodes {
    pub turntable: NodeId,
    pub rotate_table: NodeId,
    pub belt_direction: NodeId,
    pub light_barrier: NodeId,
    pub color_inspection: NodeId,
    pub stations: NodeId,
    pub left_station_color: NodeId,
    pub right_station_color: NodeId,
    pub light_grid: NodeId,
    pub stuck_detected: NodeId,
    pub control: NodeId,
    pub reset: NodeId,
    pub tick: NodeId,
}

impl Default for PlantNodes {
    fn default() -> Self {
        let n = |i| NodeId::numeric(PLANT_NAMESPACE, i);
        PlantNodes {
            turntable: n(1000),
            rotate_table: n(1001),
            belt_direction: n(1002),
            light_barrier: n(1003),
            color_inspection: n(1004),
            stations: n(1100),
            left_station_color: n(1101),
            right_station_color: n(1102),
            light_grid: n(1103),
            stuck_detected: n(1104),
            control: n(1200),
            reset: n(1201),
            tick: n(1202),
        }
    }
}

impl PlantNodes {
    pub fn sensor(&self, s: Sensor) -> &NodeId {
        match s {
            Sensor::LightBarrier => &self.light_barrier,
            Sensor::ColorInspection => &self.color_inspection,
            Sensor::LeftStationColor => &self.left_station_color,
            Sensor::RightStationColor => &self.right_station_color,
            Sensor::LightGrid => &self.light_grid,
            Sensor::StuckDetected => &self.stuck_detected,
        }
    }
}

pub const PLANT_NAMESPACE: u16 = 2;

/// Builds the plant information model. Only the two actuators and the two
/// observation sensors are marked; the reward sensors are plain variables.
pub fn build_address_space() -> (AddressSpace, PlantNodes) {
    let ids = PlantNodes::default();
    let mut space = AddressSpace::new();
    let int = |id: &NodeId, name: &str| Node::variable(id.clone(), name, Value::Int32(0));
    let build = |space: &mut AddressSpace| -> Result<(), crate::address_space::AddressSpaceError> {
        use ReferenceType::{HasComponent, Organizes};
        space.add_child(
            &OBJECTS_FOLDER,
            Organizes,
            Node::object(ids.turntable.clone(), "Turntable"),
        )?;
        space.add_child(
            &ids.turntable,
            HasComponent,
            int(&ids.rotate_table, "RotateTable"),
        )?;
        space.add_child(
            &ids.turntable,
            HasComponent,
            int(&ids.belt_direction, "BeltDirection"),
        )?;
        space.add_child(
            &ids.turntable,
            HasComponent,
            int(&ids.light_barrier, "LightBarrier"),
        )?;
        space.add_child(
            &ids.turntable,
            HasComponent,
            int(&ids.color_inspection, "ColorInspection"),
        )?;
        space.attach_marker(&ids.rotate_table, RlMarker::int_action(0, 1, 1)?)?;
        space.attach_marker(&ids.belt_direction, RlMarker::int_action(0, 1, 1)?)?;
        space.attach_marker(&ids.light_barrier, RlMarker::int_observation(0, 1, 1)?)?;
        space.attach_marker(&ids.color_inspection, RlMarker::int_observation(0, 2, 1)?)?;

        space.add_child(
            &OBJECTS_FOLDER,
            Organizes,
            Node::object(ids.stations.clone(), "Stations"),
        )?;
        space.add_child(
            &ids.stations,
            HasComponent,
            int(&ids.left_station_color, "LeftStationColor"),
        )?;
        space.add_child(
            &ids.stations,
            HasComponent,
            int(&ids.right_station_color, "RightStationColor"),
        )?;
        space.add_child(
            &ids.stations,
            HasComponent,
            int(&ids.light_grid, "LightGrid"),
        )?;
        space.add_child(
            &ids.stations,
            HasComponent,
            int(&ids.stuck_detected, "StuckDetected"),
        )?;

        space.add_child(
            &OBJECTS_FOLDER,
            Organizes,
            Node::object(ids.control.clone(), "Control"),
        )?;
        space.add_child(
            &ids.control,
            HasComponent,
            Node::method(ids.reset.clone(), "Reset"),
        )?;
        space.add_child(
            &ids.control,
            HasComponent,
            Node::method(ids.tick.clone(), "Tick"),
        )?;
        Ok(())
    };
    build(&mut space).expect("plant model is well-formed");
    (space, ids)
}

/// Reward rules of the sorting task: a correctly routed material earns +5,
/// a wrongly routed one -1, a dropped one -3 and a jam -5. All end the
/// episode.
pub fn default_reward_rules(green_side: Side) -> Vec<RewardRule> {
    let ids = PlantNodes::default();
    let station = |side: Side| match side {
        Side::Left => ids.left_station_color.clone(),
        Side::Right => ids.right_station_color.clone(),
    };
    let rule = |node: NodeId, value: i32, reward: f64, label: &str| RewardRule {
        server: 0,
        node,
        value: Value::Int32(value),
        reward,
        terminal: true,
        label: label.to_string(),
    };
    let green = MaterialColor::Green.code();
    let blue = MaterialColor::Blue.code();
    vec![
        rule(station(green_side), green, 5.0, "correct"),
        rule(station(green_side.other()), blue, 5.0, "correct"),
        rule(station(green_side), blue, -1.0, "wrong"),
        rule(station(green_side.other()), green, -1.0, "wrong"),
        rule(ids.light_grid.clone(), 1, -3.0, "dropped"),
        rule(ids.stuck_detected.clone(), 1, -5.0, "stuck"),
    ]
}

#[derive(Debug, Clone, Default)]
pub struct PlantServerOptions {
    pub plant: PlantConfig,
    /// Wall-clock duration of one simulated time unit; `None` runs accelerated.
    pub realtime_tick: Option<Duration>,
    pub name: Option<String>,
}

struct Binding {
    plant: Plant,
    ids: PlantNodes,
    command_pending: bool,
}

impl Binding {
    fn apply(&self, space: &mut AddressSpace, emissions: Vec<Emission>) {
        for (sensor, v) in emissions {
            space
                .set_value(self.ids.sensor(sensor), Value::Int32(v))
                .expect("plant sensor nodes accept Int32");
        }
    }

    fn actuators(&self, space: &AddressSpace) -> Actuation {
        let read = |id: &NodeId| match space.value(id) {
            Ok(Value::Int32(v)) => *v,
            _ => 0,
        };
        Actuation::from_values(read(&self.ids.rotate_table), read(&self.ids.belt_direction))
    }
}

/// Serves a simulated plant at `endpoint`. The initial sensor state is the
/// `Inbound` phase; clients should call `Reset` to start each episode.
pub fn serve_plant(
    endpoint: &str,
    options: PlantServerOptions,
) -> Result<ServerHandle, ServerError> {
    let (space, ids) = build_address_space();
    let binding = Arc::new(Mutex::new(Binding {
        plant: Plant::new(options.plant.clone()),
        ids: ids.clone(),
        command_pending: false,
    }));

    let on_write = {
        let binding = binding.clone();
        move |_: &mut AddressSpace, node: &NodeId, _: &Value| {
            let mut b = binding.lock().expect("plant poisoned");
            if *node == b.ids.rotate_table || *node == b.ids.belt_direction {
                b.command_pending = true;
            }
        }
    };
    let reset = {
        let binding = binding.clone();
        move |space: &mut AddressSpace, args: &[Value]| {
            if !args.is_empty() {
                return Err(format!("Reset takes no arguments, got {}", args.len()));
            }
            let mut b = binding.lock().expect("plant poisoned");
            b.command_pending = false;
            let emissions = b.plant.reset();
            b.apply(space, emissions);
            Ok(Vec::new())
        }
    };
    let realtime = options.realtime_tick;
    let tick = {
        let binding = binding.clone();
        move |space: &mut AddressSpace, args: &[Value]| {
            let n = match args {
                [Value::Int32(n)] if *n >= 0 => *n as u64,
                _ => return Err("Tick takes one non-negative Int32".to_string()),
            };
            if let Some(unit) = realtime {
                std::thread::sleep(unit * n as u32);
            }
            let mut b = binding.lock().expect("plant poisoned");
            if b.command_pending {
                b.command_pending = false;
                let a = b.actuators(space);
                let emissions = b.plant.actuate(a);
                b.apply(space, emissions);
            }
            let emissions = b.plant.tick(n);
            b.apply(space, emissions);
            Ok(Vec::new())
        }
    };

    server::serve_with(
        endpoint,
        space,
        ServerOptions {
            name: options
                .name
                .unwrap_or_else(|| "uarl sorting plant".to_string()),
            methods: vec![
                MethodHandler::new(ids.reset.clone(), reset),
                MethodHandler::new(ids.tick.clone(), tick),
            ],
            write_hook: Some(Box::new(on_write)),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROTATE_LEFT: Actuation = Actuation {
        rotate: true,
        direction: Side::Left,
    };
    const ROTATE_RIGHT: Actuation = Actuation {
        rotate: true,
        direction: Side::Right,
    };
    const ADVANCE: Actuation = Actuation {
        rotate: false,
        direction: Side::Left,
    };

    fn plant_with(color: MaterialColor) -> Plant {
        // Search seeds until the first draw matches; draws are deterministic.
        (0..)
            .map(|seed| {
                Plant::new(PlantConfig {
                    seed,
                    ..PlantConfig::default()
                })
            })
            .find(|p| p.color() == color)
            .unwrap()
    }

    #[test]
    fn advance_reports_color() {
        let mut p = plant_with(MaterialColor::Green);
        assert_eq!(p.actuate(ADVANCE), vec![(Sensor::ColorInspection, 1)]);
        assert_eq!(p.phase(), PlantPhase::AtColorStation(MaterialColor::Green));
        let mut p = plant_with(MaterialColor::Blue);
        assert_eq!(p.actuate(ADVANCE), vec![(Sensor::ColorInspection, 2)]);
    }

    #[test]
    fn routing_outcomes() {
        let mut p = plant_with(MaterialColor::Green);
        p.actuate(ADVANCE);
        let e = p.actuate(ROTATE_LEFT);
        assert_eq!(
            e,
            vec![(Sensor::ColorInspection, 0), (Sensor::LeftStationColor, 1)]
        );
        assert_eq!(p.outcome(), Some(Outcome::Correct));

        let mut p = plant_with(MaterialColor::Green);
        p.actuate(ADVANCE);
        p.actuate(ROTATE_RIGHT);
        assert_eq!(p.sensors().right_station_color, 1);
        assert_eq!(p.outcome(), Some(Outcome::Wrong));

        let mut p = plant_with(MaterialColor::Blue);
        p.actuate(ADVANCE);
        p.actuate(ROTATE_RIGHT);
        assert_eq!(p.sensors().right_station_color, 2);
        assert_eq!(p.outcome(), Some(Outcome::Correct));

        let mut p = plant_with(MaterialColor::Blue);
        p.actuate(ADVANCE);
        p.actuate(ROTATE_LEFT);
        assert_eq!(p.sensors().left_station_color, 2);
        assert_eq!(p.outcome(), Some(Outcome::Wrong));
    }

    #[test]
    fn green_side_is_configurable() {
        let mut p = (0..)
            .map(|seed| {
                Plant::new(PlantConfig {
                    seed,
                    green_side: Side::Right,
                    ..PlantConfig::default()
                })
            })
            .find(|p| p.color() == MaterialColor::Green)
            .unwrap();
        p.actuate(ADVANCE);
        p.actuate(ROTATE_RIGHT);
        assert_eq!(p.outcome(), Some(Outcome::Correct));
    }

    #[test]
    fn unrotated_table_drops_material() {
        let mut p = plant_with(MaterialColor::Blue);
        p.actuate(ADVANCE);
        assert_eq!(
            p.actuate(ADVANCE),
            vec![(Sensor::ColorInspection, 0), (Sensor::LightBarrier, 1)]
        );
        assert_eq!(p.phase(), PlantPhase::OnTable);
        assert_eq!(
            p.actuate(ROTATE_RIGHT),
            vec![(Sensor::LightBarrier, 0), (Sensor::LightGrid, 1)]
        );
        assert_eq!(p.outcome(), Some(Outcome::Dropped));
    }

    #[test]
    fn stuck_watchdog() {
        let mut p = Plant::new(PlantConfig::default());
        assert!(p.actuate(ROTATE_LEFT).is_empty());
        assert!(p.jam_pending());
        assert!(p.tick(9).is_empty());
        assert_eq!(p.tick(1), vec![(Sensor::StuckDetected, 1)]);
        assert_eq!(p.outcome(), Some(Outcome::Stuck));

        let mut p = Plant::new(PlantConfig::default());
        p.actuate(ROTATE_RIGHT);
        assert_eq!(p.tick(10), vec![(Sensor::StuckDetected, 1)]);

        let mut p = Plant::new(PlantConfig::default());
        p.actuate(ROTATE_RIGHT);
        assert!(p.tick(9).is_empty());
        assert_eq!(p.phase(), PlantPhase::Inbound);
    }

    #[test]
    fn idle_watchdog_is_silent() {
        let mut p = Plant::new(PlantConfig::default());
        assert!(p.tick(1000).is_empty());
        assert_eq!(p.phase(), PlantPhase::Inbound);
    }

    #[test]
    fn zero_timeout_sticks_immediately() {
        let mut p = Plant::new(PlantConfig {
            stuck_timeout: 0,
            ..PlantConfig::default()
        });
        assert_eq!(p.actuate(ROTATE_LEFT), vec![(Sensor::StuckDetected, 1)]);
    }

    #[test]
    fn terminal_ignores_actuation() {
        let mut p = plant_with(MaterialColor::Green);
        p.actuate(ADVANCE);
        p.actuate(ROTATE_LEFT);
        let before = p.sensors();
        for a in Actuation::ALL {
            assert!(p.actuate(a).is_empty());
        }
        assert_eq!(p.sensors(), before);
    }

    #[test]
    fn reset_restores_initial_sensors() {
        let mut p = plant_with(MaterialColor::Green);
        p.actuate(ADVANCE);
        p.actuate(ROTATE_LEFT);
        let e = p.reset();
        assert_eq!(e, vec![(Sensor::LeftStationColor, 0)]);
        assert_eq!(p.sensors(), SensorReadings::default());
        assert_eq!(p.phase(), PlantPhase::Inbound);
    }

    #[test]
    fn seeded_color_sequence() {
        let draws = |seed| {
            let mut p = Plant::new(PlantConfig {
                seed,
                ..PlantConfig::default()
            });
            (0..50)
                .map(|_| {
                    p.reset();
                    p.color()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draws(7), draws(7));
        assert_ne!(draws(7), draws(8));
    }

    #[test]
    fn color_draw_is_fair() {
        let mut greens = 0;
        let mut total = 0;
        for seed in 0..10 {
            let mut p = Plant::new(PlantConfig {
                seed,
                ..PlantConfig::default()
            });
            for _ in 0..1000 {
                p.reset();
                total += 1;
                greens += usize::from(p.color() == MaterialColor::Green);
            }
        }
        let freq = greens as f64 / total as f64;
        assert!((freq - 0.5).abs() <= 0.02, "green frequency {freq}");
    }

    #[test]
    fn address_space_markers() {
        let (space, ids) = build_address_space();
        let marked: Vec<_> = space
            .nodes()
            .filter_map(|n| n.marker.map(|m| (n.browse_name.clone(), m)))
            .collect();
        assert_eq!(marked.len(), 4);
        assert_eq!(marked[0].0, "RotateTable");
        assert_eq!(marked[3].0, "ColorInspection");
        for id in [
            &ids.left_station_color,
            &ids.light_grid,
            &ids.stuck_detected,
        ] {
            assert!(space.resolve_marker(id).is_none());
        }
    }
}

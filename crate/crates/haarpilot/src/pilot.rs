//! Debounced gesture-to-command mapping, safety-gated action planning, and a
//! simulated first-order kinematics model.
//!
//! The same tick-level integrator drives both the in-process simulation and
//! the wire endpoint, so a mission flown over UDP reproduces the in-process
//! state exactly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::GestureLabel;

/// Simulation timestep in seconds; one PCMD datagram advances one tick.
pub const TICK: f64 = 0.05;
/// Horizontal and vertical speed cap, ft/s.
pub const MAX_SPEED_FT_S: f64 = 3.0;
/// Altitude reached after takeoff, ft.
pub const HOVER_ALTITUDE_FT: f64 = 3.0;
/// Displacement of a single move command, ft.
pub const MOVE_DISPLACEMENT_FT: f64 = 1.5;
/// Default obstacle/operator clearance, ft.
pub const DEFAULT_CLEARANCE_FT: f64 = 3.0;
/// Duration of an explicit hover command, s.
pub const HOLD_DURATION_S: f64 = 0.5;
/// Floor altitude while airborne; descending to ground requires Land.
pub const MIN_AIRBORNE_ALT_FT: f64 = 0.1;
/// Ticks for a full vertical transit between ground and hover altitude.
/// A power of two keeps the per-tick altitude delta exactly representable,
/// so a climb lands on the hover altitude with no rounding drift.
pub const VERTICAL_TICKS: usize = 32;
/// Altitude gained per tick during a vertical transit, ft (exactly 3/32).
pub const CLIMB_TICK_FT: f64 = HOVER_ALTITUDE_FT / VERTICAL_TICKS as f64;
/// Vertical transit speed, ft/s.
pub const CLIMB_RATE_FT_S: f64 = CLIMB_TICK_FT / TICK;

// ---------------------------------------------------------------------------
// Commands and the gesture map

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    TakeOff,
    Land,
    MoveLeft,
    MoveRight,
    MoveForward,
    MoveBackward,
    Hover,
    TakePicture,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::TakeOff,
        Command::Land,
        Command::MoveLeft,
        Command::MoveRight,
        Command::MoveForward,
        Command::MoveBackward,
        Command::Hover,
        Command::TakePicture,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::TakeOff => "takeoff",
            Command::Land => "land",
            Command::MoveLeft => "move-left",
            Command::MoveRight => "move-right",
            Command::MoveForward => "move-forward",
            Command::MoveBackward => "move-backward",
            Command::Hover => "hover",
            Command::TakePicture => "take-picture",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown command {s:?}")))
    }
}

fn gesture_slot(g: GestureLabel) -> Option<usize> {
    crate::GESTURES.iter().position(|&x| x == g)
}

/// Total gesture-to-command mapping plus the temporal-stabilization knobs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GestureMap {
    commands: [Command; 5],
    /// Consecutive identical frames required before a command fires.
    pub debounce: usize,
    /// Frames ignored after each emission.
    pub cooldown: usize,
}

impl Default for GestureMap {
    fn default() -> Self {
        GestureMap {
            // Indexed in canonical gesture order: fist, palm, gs, vs, lf.
            commands: [
                Command::Land,
                Command::TakeOff,
                Command::MoveLeft,
                Command::MoveForward,
                Command::TakePicture,
            ],
            debounce: 3,
            cooldown: 10,
        }
    }
}

impl GestureMap {
    pub fn command_for(&self, g: GestureLabel) -> Option<Command> {
        gesture_slot(g).map(|i| self.commands[i])
    }

    pub fn set(&mut self, g: GestureLabel, cmd: Command) {
        let slot = gesture_slot(g).expect("a gesture label, not none");
        self.commands[slot] = cmd;
    }

    /// Parse `gesture=command` override lines on top of the default map.
    /// Blank lines and `#` comments are tolerated.
    pub fn parse(text: &str) -> Result<GestureMap> {
        let mut map = GestureMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let Some((g, c)) = s.split_once('=') else {
                return Err(Error::ParseLine { line, msg: "expected `gesture=command`".into() });
            };
            let gesture: GestureLabel =
                g.trim().parse().map_err(|e| Error::ParseLine { line, msg: format!("{e}") })?;
            if gesture == GestureLabel::None {
                return Err(Error::ParseLine { line, msg: "none cannot map to a command".into() });
            }
            let command: Command =
                c.trim().parse().map_err(|e| Error::ParseLine { line, msg: format!("{e}") })?;
            map.set(gesture, command);
        }
        Ok(map)
    }
}

// ---------------------------------------------------------------------------
// Debouncing

/// Requires `debounce` consecutive identical labels before emitting, then
/// ignores `cooldown` frames entirely; a None frame resets the run.
#[derive(Clone, Debug, Default)]
pub struct Debouncer {
    run_label: Option<GestureLabel>,
    run_len: usize,
    cooldown_left: usize,
}

impl Debouncer {
    pub fn new() -> Self {
        Debouncer::default()
    }

    pub fn push(&mut self, label: GestureLabel, map: &GestureMap) -> Option<Command> {
        assert!(map.debounce >= 1, "debounce length must be at least 1");
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            return None;
        }
        if label == GestureLabel::None {
            self.run_label = None;
            self.run_len = 0;
            return None;
        }
        if self.run_label == Some(label) {
            self.run_len += 1;
        } else {
            self.run_label = Some(label);
            self.run_len = 1;
        }
        if self.run_len >= map.debounce {
            self.run_label = None;
            self.run_len = 0;
            self.cooldown_left = map.cooldown;
            Some(map.command_for(label).expect("run labels are never None"))
        } else {
            None
        }
    }
}

/// Debounce a whole label stream; returns (1-based frame, command) pairs.
pub fn debounce(labels: &[GestureLabel], map: &GestureMap) -> Vec<(usize, Command)> {
    let mut deb = Debouncer::new();
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| deb.push(l, map).map(|c| (i + 1, c)))
        .collect()
}

// ---------------------------------------------------------------------------
// Drone state and the world model

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Landed,
    TakingOff,
    Hovering,
    Moving,
    Landing,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Landed => "landed",
            Mode::TakingOff => "taking-off",
            Mode::Hovering => "hovering",
            Mode::Moving => "moving",
            Mode::Landing => "landing",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroneState {
    pub mode: Mode,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub heading: f64,
    pub pictures_taken: u64,
}

impl Default for DroneState {
    fn default() -> Self {
        DroneState {
            mode: Mode::Landed,
            position: [0.0; 3],
            velocity: [0.0; 3],
            heading: 0.0,
            pictures_taken: 0,
        }
    }
}

/// Axis-aligned box: minimum corner plus positive extents, in feet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldBox {
    pub min: [f64; 3],
    pub size: [f64; 3],
}

impl WorldBox {
    pub fn max(&self) -> [f64; 3] {
        [self.min[0] + self.size[0], self.min[1] + self.size[1], self.min[2] + self.size[2]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub operator: [f64; 3],
    pub obstacles: Vec<WorldBox>,
    pub clearance: f64,
}

impl Default for World {
    fn default() -> Self {
        // The default operator stands far away, so unconfigured worlds are
        // effectively empty.
        World { operator: [0.0, 1000.0, 0.0], obstacles: Vec::new(), clearance: DEFAULT_CLEARANCE_FT }
    }
}

fn finite3(v: [f64; 3]) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl World {
    /// Parse `operator x y z` and `obstacle x y z w h d` lines; blank lines
    /// and `#` comments are tolerated. Omitting the operator leaves the
    /// far-away default.
    pub fn parse(text: &str) -> Result<World> {
        let mut world = World::default();
        let mut saw_operator = false;
        let num = |tok: &str, line: usize| -> Result<f64> {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ParseLine { line, msg: format!("invalid number {tok:?}") })
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match toks.as_slice() {
                [] => continue,
                [first, ..] if first.starts_with('#') => continue,
                ["operator", x, y, z] => {
                    if saw_operator {
                        return Err(Error::ParseLine { line, msg: "duplicate operator line".into() });
                    }
                    saw_operator = true;
                    world.operator = [num(x, line)?, num(y, line)?, num(z, line)?];
                }
                ["obstacle", x, y, z, w, h, d] => {
                    let bx = WorldBox {
                        min: [num(x, line)?, num(y, line)?, num(z, line)?],
                        size: [num(w, line)?, num(h, line)?, num(d, line)?],
                    };
                    if bx.size.iter().any(|&s| s <= 0.0) {
                        return Err(Error::ParseLine { line, msg: "obstacle extents must be positive".into() });
                    }
                    world.obstacles.push(bx);
                }
                _ => {
                    return Err(Error::ParseLine {
                        line,
                        msg: "expected `operator x y z` or `obstacle x y z w h d`".into(),
                    })
                }
            }
        }
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if !finite3(self.operator) || !self.clearance.is_finite() || self.clearance <= 0.0 {
            return Err(Error::Input("world has non-finite operator or clearance".into()));
        }
        for bx in &self.obstacles {
            if !finite3(bx.min) || !finite3(bx.size) || bx.size.iter().any(|&s| s <= 0.0) {
                return Err(Error::Input("world has a degenerate obstacle box".into()));
            }
        }
        Ok(())
    }

    /// Smallest distance from a point to the operator or any obstacle.
    pub fn min_separation(&self, p: [f64; 3]) -> f64 {
        let mut best = dist(p, self.operator);
        for bx in &self.obstacles {
            best = best.min(point_box_dist(p, bx));
        }
        best
    }

    /// Minimum separations of the swept segment a→b from the operator and
    /// from the nearest obstacle, respectively.
    fn sweep_separation(&self, a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
        let op = seg_point_dist(a, b, self.operator);
        let mut obs = f64::INFINITY;
        for bx in &self.obstacles {
            obs = obs.min(seg_box_dist(a, b, bx));
        }
        (op, obs)
    }
}

// ---------------------------------------------------------------------------
// Geometry

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(v: [f64; 3]) -> f64 {
    dot(v, v).sqrt()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn seg_point_dist(a: [f64; 3], b: [f64; 3], p: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 == 0.0 { 0.0 } else { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) };
    dist(lerp(a, b, t), p)
}

fn point_box_dist(p: [f64; 3], bx: &WorldBox) -> f64 {
    let hi = bx.max();
    let mut acc = 0.0;
    for i in 0..3 {
        let d = (bx.min[i] - p[i]).max(0.0).max(p[i] - hi[i]);
        acc += d * d;
    }
    acc.sqrt()
}

/// Minimum distance from segment a→b to an axis-aligned box. The point-to-box
/// distance is convex, so its restriction to the segment is unimodal and
/// ternary search converges.
fn seg_box_dist(a: [f64; 3], b: [f64; 3], bx: &WorldBox) -> f64 {
    let f = |t: f64| point_box_dist(lerp(a, b, t), bx);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..120 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
}

// ---------------------------------------------------------------------------
// Planning

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefusalReason {
    OperatorProximity,
    ObstacleProximity,
    GroundedMove,
    AlreadyAirborne,
    AlreadyLanded,
}

impl RefusalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RefusalReason::OperatorProximity => "operator-proximity",
            RefusalReason::ObstacleProximity => "obstacle-proximity",
            RefusalReason::GroundedMove => "grounded-move",
            RefusalReason::AlreadyAirborne => "already-airborne",
            RefusalReason::AlreadyLanded => "already-landed",
        }
    }
}

impl fmt::Display for RefusalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refusal {
    pub command: Command,
    pub reason: RefusalReason,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlannedAction {
    Ascend,
    Descend,
    Motion { velocity: [f64; 3], duration: f64 },
    Hold { duration: f64 },
    Picture,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Plan {
    Action(PlannedAction),
    Refused(Refusal),
}

fn move_velocity(cmd: Command) -> Option<[f64; 3]> {
    // x grows rightward, y grows forward (toward the operator), z upward.
    match cmd {
        Command::MoveLeft => Some([-MAX_SPEED_FT_S, 0.0, 0.0]),
        Command::MoveRight => Some([MAX_SPEED_FT_S, 0.0, 0.0]),
        Command::MoveForward => Some([0.0, MAX_SPEED_FT_S, 0.0]),
        Command::MoveBackward => Some([0.0, -MAX_SPEED_FT_S, 0.0]),
        _ => None,
    }
}

/// Translate a command into a velocity setpoint with a duration, refusing
/// anything whose swept path would breach the safety clearance, moves while
/// landed, redundant takeoff/land, and forward motion toward a close
/// operator.
pub fn plan(
    cmd: Command,
    state: &DroneState,
    world: &World,
    est_operator_distance: Option<f64>,
) -> Result<Plan> {
    world.validate()?;
    if !finite3(state.position) || !finite3(state.velocity) {
        return Err(Error::Input("drone state has non-finite components".into()));
    }
    if est_operator_distance.is_some_and(|d| !d.is_finite()) {
        return Err(Error::Input("operator distance estimate is not finite".into()));
    }

    let airborne = state.mode != Mode::Landed;
    let refused = |reason: RefusalReason, detail: String| {
        Ok(Plan::Refused(Refusal { command: cmd, reason, detail }))
    };
    let p = state.position;

    let sweep_gate = |target: [f64; 3]| -> Option<Refusal> {
        let (op, obs) = world.sweep_separation(p, target);
        if op < world.clearance {
            Some(Refusal {
                command: cmd,
                reason: RefusalReason::OperatorProximity,
                detail: format!("swept path comes within {op:.2} ft of the operator"),
            })
        } else if obs < world.clearance {
            Some(Refusal {
                command: cmd,
                reason: RefusalReason::ObstacleProximity,
                detail: format!("swept path comes within {obs:.2} ft of an obstacle"),
            })
        } else {
            None
        }
    };

    match cmd {
        Command::TakeOff if airborne => {
            refused(RefusalReason::AlreadyAirborne, "takeoff while airborne".into())
        }
        Command::TakeOff => {
            if let Some(r) = sweep_gate([p[0], p[1], HOVER_ALTITUDE_FT]) {
                return Ok(Plan::Refused(r));
            }
            Ok(Plan::Action(PlannedAction::Ascend))
        }
        Command::Land if !airborne => {
            refused(RefusalReason::AlreadyLanded, "land while landed".into())
        }
        Command::Land => {
            if let Some(r) = sweep_gate([p[0], p[1], 0.0]) {
                return Ok(Plan::Refused(r));
            }
            Ok(Plan::Action(PlannedAction::Descend))
        }
        Command::Hover if !airborne => {
            refused(RefusalReason::GroundedMove, "hover requires flight".into())
        }
        Command::Hover => Ok(Plan::Action(PlannedAction::Hold { duration: HOLD_DURATION_S })),
        Command::TakePicture => Ok(Plan::Action(PlannedAction::Picture)),
        _ => {
            let velocity = move_velocity(cmd).expect("remaining commands are moves");
            if !airborne {
                return refused(RefusalReason::GroundedMove, format!("{cmd} while landed"));
            }
            if cmd == Command::MoveForward {
                if let Some(d) = est_operator_distance {
                    if d < world.clearance {
                        return refused(
                            RefusalReason::OperatorProximity,
                            format!("estimated operator distance {d:.2} ft is inside the {:.1} ft clearance", world.clearance),
                        );
                    }
                }
            }
            let duration = MOVE_DISPLACEMENT_FT / MAX_SPEED_FT_S;
            let target = [
                p[0] + velocity[0] * duration,
                p[1] + velocity[1] * duration,
                p[2] + velocity[2] * duration,
            ];
            if let Some(r) = sweep_gate(target) {
                return Ok(Plan::Refused(r));
            }
            Ok(Plan::Action(PlannedAction::Motion { velocity, duration }))
        }
    }
}

// ---------------------------------------------------------------------------
// Kinematics

/// Advance one timeslice. `commanded` is the velocity setpoint while
/// airborne; `None` means hold position. Vertical transits (taking off,
/// landing) ignore the setpoint and run at the fixed climb rate.
fn advance(state: &mut DroneState, commanded: Option<[f64; 3]>, dt: f64) {
    match state.mode {
        Mode::Landed => {
            state.velocity = [0.0; 3];
        }
        Mode::TakingOff => {
            state.velocity = [0.0, 0.0, CLIMB_RATE_FT_S];
            // dt/TICK is exactly 1 for tick-sized steps, so the climb adds
            // the dyadic CLIMB_TICK_FT and reaches the altitude exactly.
            state.position[2] += CLIMB_TICK_FT * (dt / TICK);
            if state.position[2] >= HOVER_ALTITUDE_FT {
                state.position[2] = HOVER_ALTITUDE_FT;
                state.mode = Mode::Hovering;
                state.velocity = [0.0; 3];
            }
        }
        Mode::Landing => {
            state.velocity = [0.0, 0.0, -CLIMB_RATE_FT_S];
            state.position[2] -= CLIMB_TICK_FT * (dt / TICK);
            if state.position[2] <= 0.0 {
                state.position[2] = 0.0;
                state.mode = Mode::Landed;
                state.velocity = [0.0; 3];
            }
        }
        Mode::Hovering | Mode::Moving => {
            let mut v = commanded.unwrap_or([0.0; 3]);
            let speed = norm(v);
            if speed > MAX_SPEED_FT_S {
                let k = MAX_SPEED_FT_S / speed;
                v = [v[0] * k, v[1] * k, v[2] * k];
            }
            state.velocity = v;
            if v == [0.0; 3] {
                state.mode = Mode::Hovering;
            } else {
                state.mode = Mode::Moving;
                for i in 0..3 {
                    state.position[i] += v[i] * dt;
                }
                if state.position[2] < MIN_AIRBORNE_ALT_FT {
                    state.position[2] = MIN_AIRBORNE_ALT_FT;
                }
            }
        }
    }
}

/// Mode-flip side of a REF control word: takeoff arms a climb from the
/// ground; land starts a descent from any airborne mode.
pub fn ref_event(state: &mut DroneState, takeoff: bool) {
    if takeoff {
        if state.mode == Mode::Landed {
            state.mode = Mode::TakingOff;
            state.velocity = [0.0, 0.0, CLIMB_RATE_FT_S];
        }
    } else if !matches!(state.mode, Mode::Landed | Mode::Landing) {
        state.mode = Mode::Landing;
        state.velocity = [0.0, 0.0, -CLIMB_RATE_FT_S];
    }
}

/// First-order step: integrate `dt` seconds of the action from `state`.
pub fn step(state: &DroneState, action: &PlannedAction, dt: f64) -> DroneState {
    assert!(dt > 0.0 && dt.is_finite(), "dt must be positive and finite");
    let mut s = state.clone();
    match action {
        PlannedAction::Ascend => {
            ref_event(&mut s, true);
            advance(&mut s, None, dt);
        }
        PlannedAction::Descend => {
            ref_event(&mut s, false);
            advance(&mut s, None, dt);
        }
        PlannedAction::Motion { velocity, .. } => advance(&mut s, Some(*velocity), dt),
        PlannedAction::Hold { .. } => advance(&mut s, Some([0.0; 3]), dt),
        PlannedAction::Picture => s.pictures_taken += 1,
    }
    s
}

// ---------------------------------------------------------------------------
// Tick-level execution shared with the wire protocol

/// One wire-representable simulation event. A `Pcmd` advances exactly
/// [`TICK`] seconds; a `Ref` flips modes without advancing time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WireTick {
    Ref { takeoff: bool },
    Pcmd { flag: u8, roll: f32, pitch: f32, gaz: f32, yaw: f32 },
}

/// Velocity (ft/s) to normalized PCMD axes. Pitch is inverted: nose-down
/// (negative pitch) flies forward.
pub fn velocity_axes(v: [f64; 3]) -> (f32, f32, f32) {
    (
        (v[0] / MAX_SPEED_FT_S) as f32,
        (-v[1] / MAX_SPEED_FT_S) as f32,
        (v[2] / MAX_SPEED_FT_S) as f32,
    )
}

/// Inverse of [`velocity_axes`].
pub fn axes_velocity(roll: f32, pitch: f32, gaz: f32) -> [f64; 3] {
    [
        roll as f64 * MAX_SPEED_FT_S,
        -(pitch as f64) * MAX_SPEED_FT_S,
        gaz as f64 * MAX_SPEED_FT_S,
    ]
}

const HOVER_TICK: WireTick = WireTick::Pcmd { flag: 0, roll: 0.0, pitch: 0.0, gaz: 0.0, yaw: 0.0 };

/// Lower a planned action to its wire tick sequence. Pictures produce no
/// wire traffic (the camera is sender-local).
pub fn action_ticks(action: &PlannedAction) -> Vec<WireTick> {
    match action {
        PlannedAction::Ascend => {
            let mut out = vec![WireTick::Ref { takeoff: true }];
            out.extend(std::iter::repeat(HOVER_TICK).take(VERTICAL_TICKS));
            out
        }
        PlannedAction::Descend => {
            let mut out = vec![WireTick::Ref { takeoff: false }];
            out.extend(std::iter::repeat(HOVER_TICK).take(VERTICAL_TICKS));
            out
        }
        PlannedAction::Motion { velocity, duration } => {
            let n = ((duration / TICK).round() as usize).max(1);
            let (roll, pitch, gaz) = velocity_axes(*velocity);
            let mut out = vec![WireTick::Pcmd { flag: 1, roll, pitch, gaz, yaw: 0.0 }; n];
            // Trailing stop: zero the setpoint so the mode settles back to
            // Hovering on both sides of the wire.
            out.push(WireTick::Pcmd { flag: 1, roll: 0.0, pitch: 0.0, gaz: 0.0, yaw: 0.0 });
            out
        }
        PlannedAction::Hold { duration } => {
            let n = ((duration / TICK).round() as usize).max(1);
            vec![HOVER_TICK; n]
        }
        PlannedAction::Picture => Vec::new(),
    }
}

/// Apply one wire tick; this is the single integrator both the in-process
/// simulation and the UDP endpoint run.
pub fn apply_tick(state: &mut DroneState, tick: &WireTick) {
    match *tick {
        WireTick::Ref { takeoff } => ref_event(state, takeoff),
        WireTick::Pcmd { flag, roll, pitch, gaz, .. } => {
            let commanded = (flag & 1 == 1).then(|| axes_velocity(roll, pitch, gaz));
            advance(state, commanded, TICK);
        }
    }
}

/// Run an action to completion in place; returns the tick count consumed.
pub fn execute(state: &mut DroneState, action: &PlannedAction) -> usize {
    if let PlannedAction::Picture = action {
        state.pictures_taken += 1;
        return 0;
    }
    let ticks = action_ticks(action);
    for t in &ticks {
        apply_tick(state, t);
    }
    ticks.len()
}

// ---------------------------------------------------------------------------
// Mission loop

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub mode: Mode,
    pub position: [f64; 3],
    pub command: Option<Command>,
    pub refusal: Option<Refusal>,
}

pub const TRACE_CSV_HEADER: &str = "t,mode,x,y,z,command,refusal_reason";

impl TraceRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{:.2},{},{:.3},{:.3},{:.3},{},{}",
            self.t,
            self.mode,
            self.position[0],
            self.position[1],
            self.position[2],
            self.command.map(Command::as_str).unwrap_or(""),
            self.refusal.as_ref().map(|r| r.reason.as_str()).unwrap_or(""),
        )
    }
}

#[derive(Debug)]
pub struct MissionOutcome {
    pub trace: Vec<TraceRow>,
    pub state: DroneState,
    /// Executed commands as (1-based frame, command).
    pub commands: Vec<(usize, Command)>,
    pub refusals: Vec<(usize, Refusal)>,
}

/// Drive the full classify→debounce→plan→step loop over per-frame labels
/// (each with an optional vision-side operator-distance estimate). A TakeOff
/// emitted while airborne is downgraded to Hover. Every wire tick is also
/// offered to `sink` so a UDP session can mirror the mission.
pub fn fly_labels(
    frames: &[(GestureLabel, Option<f64>)],
    map: &GestureMap,
    world: &World,
    mut sink: Option<&mut dyn FnMut(&WireTick) -> Result<()>>,
) -> Result<MissionOutcome> {
    let mut state = DroneState::default();
    let mut deb = Debouncer::new();
    let mut trace = Vec::with_capacity(frames.len());
    let mut commands = Vec::new();
    let mut refusals = Vec::new();
    let mut ticks_elapsed = 0usize;

    for (i, &(label, est)) in frames.iter().enumerate() {
        let frame_no = i + 1;
        let mut command = deb.push(label, map);
        let mut refusal = None;
        if let Some(cmd) = &mut command {
            if *cmd == Command::TakeOff && state.mode != Mode::Landed {
                *cmd = Command::Hover;
            }
            match plan(*cmd, &state, world, est)? {
                Plan::Refused(r) => {
                    refusals.push((frame_no, r.clone()));
                    refusal = Some(r);
                }
                Plan::Action(action) => {
                    if let PlannedAction::Picture = action {
                        state.pictures_taken += 1;
                    }
                    for tick in action_ticks(&action) {
                        apply_tick(&mut state, &tick);
                        if let Some(s) = sink.as_mut() {
                            s(&tick)?;
                        }
                        if matches!(tick, WireTick::Pcmd { .. }) {
                            ticks_elapsed += 1;
                        }
                    }
                    commands.push((frame_no, *cmd));
                }
            }
        }
        trace.push(TraceRow {
            t: ticks_elapsed as f64 * TICK,
            mode: state.mode,
            position: state.position,
            command,
            refusal,
        });
    }
    Ok(MissionOutcome { trace, state, commands, refusals })
}

/// A random operator ring plus a few obstacle boxes, with the spawn point
/// and initial ascent corridor kept clear so missions are not refused
/// wholesale.
fn random_world(rng: &mut impl rand::Rng) -> World {
    let mut world = World::default();
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let radius = rng.gen_range(3.5..25.0);
    world.operator = [radius * angle.cos(), radius * angle.sin(), 0.0];
    let ascent_a = [0.0, 0.0, 0.0];
    let ascent_b = [0.0, 0.0, HOVER_ALTITUDE_FT];
    for _ in 0..rng.gen_range(0..=4) {
        let center =
            [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(0.0..10.0)];
        let size = [rng.gen_range(0.5..6.0), rng.gen_range(0.5..6.0), rng.gen_range(0.5..6.0)];
        let bx = WorldBox {
            min: [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0, center[2] - size[2] / 2.0],
            size,
        };
        if seg_box_dist(ascent_a, ascent_b, &bx) > DEFAULT_CLEARANCE_FT + 0.2 {
            world.obstacles.push(bx);
        }
    }
    world
}

/// Randomized worlds and command streams, asserting the planner never lets
/// the drone inside the clearance ring of the operator or any obstacle.
pub fn run_safety_simulations(sims: usize, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for sim in 0..sims {
        let world = random_world(&mut rng);
        let mut state = DroneState::default();
        assert!(world.min_separation(state.position) >= world.clearance);
        for _ in 0..12 {
            let cmd = Command::ALL[rng.gen_range(0..Command::ALL.len())];
            let est =
                if rng.gen_bool(0.5) { Some(dist(state.position, world.operator)) } else { None };
            match plan(cmd, &state, &world, est).unwrap() {
                Plan::Refused(_) => {}
                Plan::Action(action) => {
                    if let PlannedAction::Picture = action {
                        state.pictures_taken += 1;
                        continue;
                    }
                    for tick in action_ticks(&action) {
                        apply_tick(&mut state, &tick);
                        let sep = world.min_separation(state.position);
                        assert!(
                            sep >= world.clearance - 1e-6,
                            "sim {sim}: separation {sep} < clearance at {:?}",
                            state.position
                        );
                    }
                }
            }
        }
    }
}

//! Seedable continuous-control environments.
//!
//! All three integrate with semi-implicit Euler. Physical constants are
//! listed by [`manifest`], whose text is hashed into every results file.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write;
use core::str::FromStr;

use rand::Rng as _;

use crate::numcore::math;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("action contains NaN")]
    NanAction,
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("step called before reset or after the episode ended")]
    NotRunning,
    #[error("unknown environment `{0}`")]
    Unknown(String),
}

/// Static description of an environment's interface.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    /// Bound on `|reward|` for any single step.
    pub reward_bound: f64,
}

impl EnvSpec {
    pub fn action_range(&self) -> Vec<f64> {
        self.action_high
            .iter()
            .zip(&self.action_low)
            .map(|(h, l)| h - l)
            .collect()
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.max(lo).min(hi))
            .collect()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// A terminal predicate fired (no bootstrapping past this state).
    pub terminated: bool,
    /// The step budget ran out.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Env {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Clips the action into bounds and advances one control step.
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError>;
    fn observation(&self) -> Vec<f64>;
    fn step_counter(&self) -> usize;
}

fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>, EnvError> {
    if action.len() != spec.action_dim {
        return Err(EnvError::ActionDim {
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(EnvError::NanAction);
    }
    Ok(spec.clip_action(action))
}

/// Wraps an angle into `[-pi, pi)`.
pub fn angle_normalize(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let y = (x + PI) - two_pi * math::floor((x + PI) / two_pi);
    y - PI
}

// ---- pendulum ---------------------------------------------------------------

pub mod pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const SPEED_COST: f64 = 0.1;
    pub const TORQUE_COST: f64 = 0.001;
    pub const INIT_MAX_SPEED: f64 = 1.0;
    pub const MAX_STEPS: usize = 200;
}

/// Rod pendulum with torque control; `theta = 0` is upright.
///
/// Reward is `-(theta^2 + 0.1 thetadot^2 + 0.001 u^2)` with the angle
/// wrapped to `[-pi, pi)`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    running: bool,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        use pendulum::*;
        Self {
            spec: EnvSpec {
                name: "pendulum",
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-MAX_TORQUE],
                action_high: vec![MAX_TORQUE],
                max_episode_steps: MAX_STEPS,
                reward_bound: PI * PI
                    + SPEED_COST * MAX_SPEED * MAX_SPEED
                    + TORQUE_COST * MAX_TORQUE * MAX_TORQUE,
            },
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            running: false,
        }
    }

    /// Places the pendulum at an explicit state and starts an episode.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps = 0;
        self.running = true;
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_dot(&self) -> f64 {
        self.theta_dot
    }

    /// Total mechanical energy of the rod (potential measured from the pivot).
    pub fn energy(&self) -> f64 {
        use pendulum::*;
        let inertia = MASS * LENGTH * LENGTH / 3.0;
        0.5 * inertia * self.theta_dot * self.theta_dot
            + MASS * GRAVITY * 0.5 * LENGTH * math::cos(self.theta)
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-pendulum::INIT_MAX_SPEED..pendulum::INIT_MAX_SPEED);
        self.set_state(theta, theta_dot);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        use pendulum::*;
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        let u = check_action(&self.spec, action)?[0];
        let th = angle_normalize(self.theta);
        let cost = th * th + SPEED_COST * self.theta_dot * self.theta_dot + TORQUE_COST * u * u;
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * math::sin(self.theta)
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        self.steps += 1;
        let truncated = self.steps >= MAX_STEPS;
        self.running = !truncated;
        Ok(Step {
            observation: self.observation(),
            reward: -cost,
            terminated: false,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![math::cos(self.theta), math::sin(self.theta), self.theta_dot]
    }

    fn step_counter(&self) -> usize {
        self.steps
    }
}

// ---- point mass -------------------------------------------------------------

pub mod point_mass {
    pub const MASS: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const DRAG: f64 = 0.5;
    pub const MAX_FORCE: f64 = 1.0;
    pub const MAX_SPEED: f64 = 2.0;
    pub const ARENA: f64 = 2.0;
    pub const INIT_RADIUS: f64 = 1.0;
    pub const MAX_STEPS: usize = 100;
}

/// Planar point mass pushed towards the origin. Reward is the negative
/// Euclidean distance to the goal at the origin.
#[derive(Debug, Clone)]
pub struct PointMass2D {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    running: bool,
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMass2D {
    pub fn new() -> Self {
        use point_mass::*;
        Self {
            spec: EnvSpec {
                name: "point_mass",
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-MAX_FORCE; 2],
                action_high: vec![MAX_FORCE; 2],
                max_episode_steps: MAX_STEPS,
                reward_bound: ARENA * core::f64::consts::SQRT_2,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            steps: 0,
            running: false,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.steps = 0;
        self.running = true;
    }
}

impl Env for PointMass2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        use point_mass::*;
        let mut rng = seeded(seed);
        let x = rng.random_range(-INIT_RADIUS..INIT_RADIUS);
        let y = rng.random_range(-INIT_RADIUS..INIT_RADIUS);
        self.set_state([x, y], [0.0, 0.0]);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        use point_mass::*;
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        let f = check_action(&self.spec, action)?;
        for (i, fi) in f.iter().enumerate() {
            let acc = (fi - DRAG * self.vel[i]) / MASS;
            self.vel[i] = (self.vel[i] + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.pos[i] += self.vel[i] * DT;
            if self.pos[i].abs() > ARENA {
                self.pos[i] = self.pos[i].clamp(-ARENA, ARENA);
                self.vel[i] = 0.0;
            }
        }
        let dist = math::sqrt(self.pos[0] * self.pos[0] + self.pos[1] * self.pos[1]);
        self.steps += 1;
        let truncated = self.steps >= MAX_STEPS;
        self.running = !truncated;
        Ok(Step {
            observation: self.observation(),
            reward: -dist,
            terminated: false,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    fn step_counter(&self) -> usize {
        self.steps
    }
}

// ---- mountain car -------------------------------------------------------------

pub mod mountain_car {
    pub const DT: f64 = 0.01;
    pub const SUBSTEPS: usize = 3;
    pub const POWER: f64 = 0.0015 / 0.0009;
    pub const HILL_GRAVITY: f64 = 0.0025 / 0.0009;
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07 / 0.03;
    pub const GOAL_POSITION: f64 = 0.45;
    pub const GOAL_BONUS: f64 = 100.0;
    pub const ACTION_COST: f64 = 0.1;
    pub const MAX_STEPS: usize = 300;
}

/// Underpowered car in a valley (`height = sin(3x)`). Each control step
/// integrates three substeps of `dt = 0.01`; constants are the classic
/// per-step ones rescaled to that time base. Reaching the goal ends the
/// episode with a bonus of 100; every step costs `0.1 u^2`.
#[derive(Debug, Clone)]
pub struct MountainCarContinuous {
    spec: EnvSpec,
    position: f64,
    velocity: f64,
    steps: usize,
    running: bool,
}

impl Default for MountainCarContinuous {
    fn default() -> Self {
        Self::new()
    }
}

impl MountainCarContinuous {
    pub fn new() -> Self {
        use mountain_car::*;
        Self {
            spec: EnvSpec {
                name: "mountain_car",
                state_dim: 2,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: MAX_STEPS,
                reward_bound: GOAL_BONUS + ACTION_COST,
            },
            position: -0.5,
            velocity: 0.0,
            steps: 0,
            running: false,
        }
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
        self.steps = 0;
        self.running = true;
    }
}

impl Env for MountainCarContinuous {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        let p = rng.random_range(-0.6..-0.4);
        self.set_state(p, 0.0);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        use mountain_car::*;
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        let u = check_action(&self.spec, action)?[0];
        for _ in 0..SUBSTEPS {
            let acc = u * POWER - HILL_GRAVITY * math::cos(3.0 * self.position);
            self.velocity = (self.velocity + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.position += self.velocity * DT;
            if self.position < MIN_POSITION {
                self.position = MIN_POSITION;
                self.velocity = self.velocity.max(0.0);
            }
            if self.position > MAX_POSITION {
                self.position = MAX_POSITION;
            }
        }
        let terminated = self.position >= GOAL_POSITION;
        let mut reward = -ACTION_COST * u * u;
        if terminated {
            reward += GOAL_BONUS;
        }
        self.steps += 1;
        let truncated = !terminated && self.steps >= MAX_STEPS;
        self.running = !(terminated || truncated);
        Ok(Step {
            observation: self.observation(),
            reward,
            terminated,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }

    fn step_counter(&self) -> usize {
        self.steps
    }
}

// ---- registry ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Pendulum,
    PointMass,
    MountainCar,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Pendulum, EnvKind::PointMass, EnvKind::MountainCar];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "point_mass",
            EnvKind::MountainCar => "mountain_car",
        }
    }

    pub fn make(self) -> Environment {
        match self {
            EnvKind::Pendulum => Environment::Pendulum(Pendulum::new()),
            EnvKind::PointMass => Environment::PointMass(PointMass2D::new()),
            EnvKind::MountainCar => Environment::MountainCar(MountainCarContinuous::new()),
        }
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "point_mass" | "pointmass" | "point_mass_2d" => Ok(EnvKind::PointMass),
            "mountain_car" | "mountaincar" | "mountain_car_continuous" => Ok(EnvKind::MountainCar),
            other => Err(EnvError::Unknown(other.into())),
        }
    }
}

/// Closed set of the built-in environments.
#[derive(Debug, Clone)]
pub enum Environment {
    Pendulum(Pendulum),
    PointMass(PointMass2D),
    MountainCar(MountainCarContinuous),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Environment::Pendulum($e) => $body,
            Environment::PointMass($e) => $body,
            Environment::MountainCar($e) => $body,
        }
    };
}

impl Env for Environment {
    fn spec(&self) -> &EnvSpec {
        dispatch!(self, e => e.spec())
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        dispatch!(self, e => e.reset(seed))
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        dispatch!(self, e => e.step(action))
    }

    fn observation(&self) -> Vec<f64> {
        dispatch!(self, e => e.observation())
    }

    fn step_counter(&self) -> usize {
        dispatch!(self, e => e.step_counter())
    }
}

pub const MANIFEST_VERSION: u32 = 1;

/// Text listing of every physical constant, one `env.key = value` per line.
pub fn manifest() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "manifest_version = {MANIFEST_VERSION}");
    let _ = writeln!(s, "integrator = semi_implicit_euler");
    {
        use pendulum::*;
        for (k, v) in [
            ("gravity", GRAVITY),
            ("mass", MASS),
            ("length", LENGTH),
            ("dt", DT),
            ("max_speed", MAX_SPEED),
            ("max_torque", MAX_TORQUE),
            ("speed_cost", SPEED_COST),
            ("torque_cost", TORQUE_COST),
            ("init_max_speed", INIT_MAX_SPEED),
        ] {
            let _ = writeln!(s, "pendulum.{k} = {v:?}");
        }
        let _ = writeln!(s, "pendulum.max_steps = {MAX_STEPS}");
    }
    {
        use point_mass::*;
        for (k, v) in [
            ("mass", MASS),
            ("dt", DT),
            ("drag", DRAG),
            ("max_force", MAX_FORCE),
            ("max_speed", MAX_SPEED),
            ("arena", ARENA),
            ("init_radius", INIT_RADIUS),
        ] {
            let _ = writeln!(s, "point_mass.{k} = {v:?}");
        }
        let _ = writeln!(s, "point_mass.max_steps = {MAX_STEPS}");
    }
    {
        use mountain_car::*;
        for (k, v) in [
            ("dt", DT),
            ("power", POWER),
            ("hill_gravity", HILL_GRAVITY),
            ("min_position", MIN_POSITION),
            ("max_position", MAX_POSITION),
            ("max_speed", MAX_SPEED),
            ("goal_position", GOAL_POSITION),
            ("goal_bonus", GOAL_BONUS),
            ("action_cost", ACTION_COST),
        ] {
            let _ = writeln!(s, "mountain_car.{k} = {v:?}");
        }
        let _ = writeln!(s, "mountain_car.substeps = {SUBSTEPS}");
        let _ = writeln!(s, "mountain_car.max_steps = {MAX_STEPS}");
    }
    s
}

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::geometry::wrap_angle;
use super::{EnvAction, EnvId, Environment, Observation, Pose, Rect, RenderFrame, StepOutcome};
use crate::{Error, Result};

const OBS_LEN: usize = 5;
/// Longest translation between collision checks while moving straight.
const SWEEP_STEP: f64 = 0.05;

pub const TURN_REWARD: f64 = -0.1;
pub const STRAIGHT_REWARD: f64 = 0.0;
pub const COLLISION_REWARD: f64 = -100.0;
pub const GOAL_REWARD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavAction {
    Straight = 0,
    TurnLeft = 1,
    TurnRight = 2,
}

impl NavAction {
    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(NavAction::Straight),
            1 => Ok(NavAction::TurnLeft),
            2 => Ok(NavAction::TurnRight),
            a => Err(Error::InvalidAction {
                action: a,
                count: 3,
            }),
        }
    }
}

/// Static description of a navigation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavWorld {
    /// Width and height; the arena spans `[0, w] × [0, h]`.
    pub arena: [f64; 2],
    pub obstacles: Vec<Rect>,
    pub start: Pose,
    pub goal: Rect,
    pub speed: f64,
    /// Radians per turn action.
    pub turn_increment: f64,
    pub dt: f64,
    /// Sensor rays point at `heading ± sensor_angle`.
    pub sensor_angle: f64,
    pub sensor_range: f64,
    pub robot_radius: f64,
    /// Nearer-sensor distance below which the oracle steers away.
    pub clearance: f64,
    pub max_steps: usize,
}

impl Default for NavWorld {
    fn default() -> Self {
        Self {
            arena: [8.0, 8.0],
            obstacles: vec![
                Rect::new(2.2, 0.0, 8.0, 1.5),
                Rect::new(0.0, 2.2, 1.5, 8.0),
                Rect::new(3.8, 2.6, 8.0, 3.4),
            ],
            start: Pose {
                x: 1.0,
                y: 1.0,
                heading: 0.0,
            },
            goal: Rect::new(6.5, 6.5, 7.5, 7.5),
            speed: 3.0,
            turn_increment: 15.0_f64.to_radians(),
            dt: 0.25,
            sensor_angle: 30.0_f64.to_radians(),
            sensor_range: 5.0,
            robot_radius: 0.2,
            clearance: 0.5,
            max_steps: 400,
        }
    }
}

impl NavWorld {
    pub fn empty(width: f64, height: f64, start: Pose, goal: Rect) -> Self {
        Self {
            arena: [width, height],
            obstacles: Vec::new(),
            start,
            goal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.arena;
        let positive = [
            w,
            h,
            self.speed,
            self.turn_increment,
            self.dt,
            self.sensor_range,
            self.robot_radius,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_steps == 0 {
            return Err(Error::Config(
                "navigation world parameters must be positive".into(),
            ));
        }
        if !self.goal.is_valid()
            || self.goal.x0 < 0.0
            || self.goal.y0 < 0.0
            || self.goal.x1 > w
            || self.goal.y1 > h
        {
            return Err(Error::Config(
                "goal region must lie inside the arena".into(),
            ));
        }
        if self.obstacles.iter().any(|o| !o.is_valid()) {
            return Err(Error::Config(
                "obstacles must be non-degenerate rectangles".into(),
            ));
        }
        if self.collides(self.start.x, self.start.y) {
            return Err(Error::Config(
                "start pose collides with an obstacle or wall".into(),
            ));
        }
        Ok(())
    }

    /// Whether the robot disc at `(x, y)` touches a wall or an obstacle.
    pub fn collides(&self, x: f64, y: f64) -> bool {
        let r = self.robot_radius;
        let [w, h] = self.arena;
        x - r < 0.0
            || y - r < 0.0
            || x + r > w
            || y + r > h
            || self.obstacles.iter().any(|o| o.overlaps_circle(x, y, r))
    }

    /// Ray-cast distance from `(x, y)` along `angle`, capped at the sensor range.
    pub fn sense(&self, x: f64, y: f64, angle: f64) -> f64 {
        let (dx, dy) = (libm::cos(angle), libm::sin(angle));
        let [w, h] = self.arena;
        let mut best = self.sensor_range;
        // Walls, seen from inside the arena.
        if dx > 1e-12 {
            best = best.min((w - x) / dx);
        } else if dx < -1e-12 {
            best = best.min(-x / dx);
        }
        if dy > 1e-12 {
            best = best.min((h - y) / dy);
        } else if dy < -1e-12 {
            best = best.min(-y / dy);
        }
        for o in &self.obstacles {
            if let Some(t) = o.ray_hit(x, y, dx, dy) {
                best = best.min(t);
            }
        }
        best.max(0.0)
    }

    fn sensor_angles(&self, heading: f64) -> [f64; 2] {
        [heading + self.sensor_angle, heading - self.sensor_angle]
    }

    /// Sweeps a straight move and reports where it ends.
    fn sweep(&self, pose: &Pose) -> Sweep {
        let dist = self.speed * self.dt;
        let n = libm::ceil(dist / SWEEP_STEP).max(1.0) as usize;
        let (dx, dy) = (libm::cos(pose.heading), libm::sin(pose.heading));
        for i in 1..=n {
            let t = dist * i as f64 / n as f64;
            let (x, y) = (pose.x + dx * t, pose.y + dy * t);
            if self.collides(x, y) {
                return Sweep::Collision;
            }
            if self.goal.contains(x, y) {
                return Sweep::Goal(x, y);
            }
        }
        Sweep::Free(pose.x + dx * dist, pose.y + dy * dist)
    }
}

enum Sweep {
    Free(f64, f64),
    Goal(f64, f64),
    Collision,
}

/// Observation `(x, y, heading, left distance, right distance)` at `pose`.
pub fn nav_observe(world: &NavWorld, pose: &Pose) -> Observation {
    let [l, r] = world.sensor_angles(pose.heading);
    Observation::new(vec![
        pose.x,
        pose.y,
        pose.heading,
        world.sense(pose.x, pose.y, l),
        world.sense(pose.x, pose.y, r),
    ])
}

pub fn nav_reset(world: &NavWorld) -> Observation {
    nav_observe(world, &world.start)
}

fn pose_of(obs: &Observation) -> Pose {
    let v = obs.values();
    Pose {
        x: v[0],
        y: v[1],
        heading: v[2],
    }
}

/// Advances the robot by one control step.
///
/// A collision costs 100 and puts the robot back at the start pose without
/// ending the episode; entering the goal region pays 1000 and ends it.
pub fn nav_step(obs: &Observation, action: EnvAction, world: &NavWorld) -> Result<StepOutcome> {
    obs.validate(OBS_LEN)?;
    let pose = pose_of(obs);
    let (pose, reward, terminal) = match NavAction::from_index(action.index)? {
        NavAction::TurnLeft => (
            Pose {
                heading: wrap_angle(pose.heading + world.turn_increment),
                ..pose
            },
            TURN_REWARD,
            false,
        ),
        NavAction::TurnRight => (
            Pose {
                heading: wrap_angle(pose.heading - world.turn_increment),
                ..pose
            },
            TURN_REWARD,
            false,
        ),
        NavAction::Straight => match world.sweep(&pose) {
            Sweep::Free(x, y) => (Pose { x, y, ..pose }, STRAIGHT_REWARD, false),
            Sweep::Goal(x, y) => (Pose { x, y, ..pose }, GOAL_REWARD, true),
            Sweep::Collision => (world.start, COLLISION_REWARD, false),
        },
    };
    Ok(StepOutcome {
        next_obs: nav_observe(world, &pose),
        reward,
        terminal,
        truncated: false,
    })
}

/// Steers toward the goal centre and away from obstacles.
pub(crate) fn nav_oracle(world: &NavWorld, obs: &Observation) -> NavAction {
    let v = obs.values();
    let pose = pose_of(obs);
    let (left, right) = (v[3], v[4]);
    let blocked = matches!(world.sweep(&pose), Sweep::Collision);
    if blocked || left.min(right) < world.clearance {
        return if left < right {
            NavAction::TurnRight
        } else {
            NavAction::TurnLeft
        };
    }
    let (gx, gy) = world.goal.center();
    let error = wrap_angle(libm::atan2(gy - pose.y, gx - pose.x) - pose.heading);
    if error > world.turn_increment / 2.0 {
        NavAction::TurnLeft
    } else if error < -world.turn_increment / 2.0 {
        NavAction::TurnRight
    } else {
        NavAction::Straight
    }
}

#[derive(Debug, Clone)]
pub struct Nav {
    world: NavWorld,
    state: Observation,
    steps: usize,
}

impl Nav {
    pub fn new(world: NavWorld) -> Result<Self> {
        world.validate()?;
        let state = nav_reset(&world);
        Ok(Self {
            world,
            state,
            steps: 0,
        })
    }

    pub fn world(&self) -> &NavWorld {
        &self.world
    }
}

impl Environment for Nav {
    fn id(&self) -> EnvId {
        EnvId::Nav
    }

    fn max_steps(&self) -> usize {
        self.world.max_steps
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.steps = 0;
        self.state = nav_reset(&self.world);
        self.state.clone()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let action = EnvId::Nav.action(action)?;
        let mut outcome = nav_step(&self.state, action, &self.world)?;
        self.steps += 1;
        outcome.truncated = !outcome.terminal && self.steps >= self.world.max_steps;
        self.state = outcome.next_obs.clone();
        Ok(outcome)
    }

    fn oracle_action(&self, obs: &Observation) -> Result<EnvAction> {
        obs.validate(OBS_LEN)?;
        EnvId::Nav.action(nav_oracle(&self.world, obs) as usize)
    }

    fn render(&self, obs: &Observation) -> RenderFrame {
        let v = obs.values();
        let pose = pose_of(obs);
        let [l, r] = self.world.sensor_angles(pose.heading);
        RenderFrame::Nav {
            pose,
            robot_radius: self.world.robot_radius,
            arena: self.world.arena,
            obstacles: self.world.obstacles.clone(),
            goal: self.world.goal,
            sensors: vec![[l, v[3]], [r, v[4]]],
        }
    }
}

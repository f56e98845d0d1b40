use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{EnvAction, EnvId, Environment, Observation, RenderFrame, StepOutcome};
use crate::rng::StreamRng;
use crate::{Error, Result};

const OBS_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub dt: f64,
    /// Radians.
    pub angle_limit: f64,
    pub position_limit: f64,
    pub max_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            dt: 0.02,
            angle_limit: 15.0_f64.to_radians(),
            position_limit: 2.4,
            max_steps: 200,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.gravity,
            self.cart_mass,
            self.pole_mass,
            self.pole_half_length,
            self.force_magnitude,
            self.dt,
            self.angle_limit,
            self.position_limit,
        ];
        if reals.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_steps == 0 {
            return Err(Error::Config(
                "cart-pole parameters must all be positive".into(),
            ));
        }
        Ok(())
    }

    fn out_of_bounds(&self, state: &[f64]) -> bool {
        state[0].abs() > self.position_limit || state[2].abs() > self.angle_limit
    }
}

/// Initial state with every feature uniform in [-0.05, 0.05].
pub fn cartpole_reset(_params: &CartPoleParams, seed: u64) -> Observation {
    let mut rng = StreamRng::seed_from_u64(seed);
    Observation::new(
        (0..OBS_LEN)
            .map(|_| rng.random_range(-0.05..=0.05))
            .collect(),
    )
}

/// One semi-implicit Euler step of the cart-pole dynamics under `force`.
pub(crate) fn integrate(state: &[f64], force: f64, p: &CartPoleParams) -> [f64; 4] {
    let [x, x_dot, theta, theta_dot] = [state[0], state[1], state[2], state[3]];
    let total_mass = p.cart_mass + p.pole_mass;
    let pole_moment = p.pole_mass * p.pole_half_length;
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));

    let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

    let x_dot = x_dot + p.dt * x_acc;
    let theta_dot = theta_dot + p.dt * theta_acc;
    [x + p.dt * x_dot, x_dot, theta + p.dt * theta_dot, theta_dot]
}

/// Advances the cart-pole by one control step.
///
/// Action 0 pushes left and 1 pushes right. The transition is terminal when
/// either the incoming or the resulting state is outside the angle or
/// position limits, in which case the reward is 0 instead of 1.
pub fn cartpole_step(
    obs: &Observation,
    action: EnvAction,
    params: &CartPoleParams,
) -> Result<StepOutcome> {
    obs.validate(OBS_LEN)?;
    let force = match action.index {
        0 => -params.force_magnitude,
        1 => params.force_magnitude,
        a => {
            return Err(Error::InvalidAction {
                action: a,
                count: 2,
            })
        }
    };
    let next = integrate(obs.values(), force, params);
    let terminal = params.out_of_bounds(obs.values()) || params.out_of_bounds(&next);
    Ok(StepOutcome {
        next_obs: Observation::new(Vec::from(next)),
        reward: if terminal { 0.0 } else { 1.0 },
        terminal,
        truncated: false,
    })
}

/// Push toward the side the pole is falling; ties push right.
pub(crate) fn cartpole_oracle(obs: &Observation) -> usize {
    let v = obs.values();
    if v[2] + 0.5 * v[3] >= 0.0 {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    state: Observation,
    steps: usize,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        params.validate()?;
        let state = Observation::new(alloc::vec![0.0; OBS_LEN]);
        Ok(Self {
            params,
            state,
            steps: 0,
        })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    pub fn state(&self) -> &Observation {
        &self.state
    }
}

impl Environment for CartPole {
    fn id(&self) -> EnvId {
        EnvId::CartPole
    }

    fn max_steps(&self) -> usize {
        self.params.max_steps
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.steps = 0;
        self.state = cartpole_reset(&self.params, seed);
        self.state.clone()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let action = EnvId::CartPole.action(action)?;
        let mut outcome = cartpole_step(&self.state, action, &self.params)?;
        self.steps += 1;
        outcome.truncated = !outcome.terminal && self.steps >= self.params.max_steps;
        self.state = outcome.next_obs.clone();
        Ok(outcome)
    }

    fn oracle_action(&self, obs: &Observation) -> Result<EnvAction> {
        obs.validate(OBS_LEN)?;
        EnvId::CartPole.action(cartpole_oracle(obs))
    }

    fn render(&self, obs: &Observation) -> RenderFrame {
        let v = obs.values();
        RenderFrame::CartPole {
            cart_x: v.first().copied().unwrap_or(0.0),
            pole_angle: v.get(2).copied().unwrap_or(0.0),
            pole_length: 2.0 * self.params.pole_half_length,
            position_limit: self.params.position_limit,
        }
    }
}

//! Planar point-mass locomotion environment.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Environment, MdpSpec, StepOutcome, Trajectory};

/// Dynamics knobs for [`PointMass2d`]. `force_scale` is the analog of the
/// robot's inverse mass and `friction` the damping coefficient; both act as
/// environment-variation knobs in adaptation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassConfig<T: Real> {
    pub arena_halfwidth: T,
    pub force_scale: T,
    pub friction: T,
    pub dt: T,
}

impl<T: Real> PointMassConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena_halfwidth > T::zero()) {
            return Err(Error::config("arena_halfwidth must be positive"));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::config("dt must be positive"));
        }
        if self.friction < T::zero() {
            return Err(Error::config("friction must be nonnegative"));
        }
        Ok(())
    }
}

impl<T: Real> Default for PointMassConfig<T> {
    fn default() -> Self {
        PointMassConfig {
            arena_halfwidth: T::of(2.0),
            force_scale: T::of(2.0),
            friction: T::of(1.0),
            dt: T::of(0.1),
        }
    }
}

/// Scales the variation knobs: friction is multiplied by `friction_scale`
/// and force_scale divided by `mass_scale` (a heavier body accelerates
/// less). The base config is left untouched.
pub fn vary_env<T: Real>(
    base: &PointMassConfig<T>,
    friction_scale: T,
    mass_scale: T,
) -> Result<PointMassConfig<T>> {
    if !(friction_scale > T::zero()) || !(mass_scale > T::zero()) {
        return Err(Error::domain("variation scales must be positive"));
    }
    Ok(PointMassConfig {
        arena_halfwidth: base.arena_halfwidth,
        force_scale: base.force_scale / mass_scale,
        friction: base.friction * friction_scale,
        dt: base.dt,
    })
}

/// A point mass on a bounded plane. State is (x, y, vx, vy); actions are
/// accelerations in [-1, 1]^2. Per step:
///
/// ```text
/// pos += dt * vel
/// vel += dt * (force_scale * a - friction * vel)
/// ```
///
/// with positions clamped to the arena box. The reward is the clamped
/// forward displacement per step plus a constant shift that keeps episode
/// returns nonnegative (min_objective = 0). A velocity-based reward would
/// keep paying while pushed against a wall, so displacement is measured from
/// the clamped positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointMass2d<T: Real> {
    pub config: PointMassConfig<T>,
    /// Std of Gaussian noise added to actions; 0 gives fully deterministic
    /// dynamics.
    pub action_noise: T,
    /// Halfwidth of the uniform spawn box around the origin.
    pub spawn_jitter: T,
    spec: MdpSpec<T>,
    reward_shift: T,
}

impl<T: Real> PointMass2d<T> {
    pub fn new(
        config: PointMassConfig<T>,
        gamma: T,
        horizon: usize,
        action_noise: T,
        spawn_jitter: T,
    ) -> Self {
        let spec = MdpSpec {
            state_dim: 4,
            action_dim: 2,
            action_low: vec![-T::one(), -T::one()],
            action_high: vec![T::one(), T::one()],
            gamma,
            horizon,
        };
        // Worst-case net displacement is 2*halfwidth, spread over the
        // episode, so this shift makes every return land in [0, 4*halfwidth].
        let reward_shift =
            T::of(2.0) * config.arena_halfwidth / T::from_usize(horizon).unwrap();
        PointMass2d { config, action_noise, spawn_jitter, spec, reward_shift }
    }

    pub fn default_env() -> Self {
        PointMass2d::new(PointMassConfig::default(), T::of(0.99), 60, T::zero(), T::zero())
    }

    fn clamp_pos(&self, x: T) -> T {
        let h = self.config.arena_halfwidth;
        x.clamp(-h, h)
    }
}

impl<T: Real> Environment<T> for PointMass2d<T> {
    fn spec(&self) -> &MdpSpec<T> {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> DVector<T> {
        let mut state = DVector::zeros(4);
        if self.spawn_jitter > T::zero() {
            let two = T::of(2.0);
            state[0] = (T::uniform_01(rng) * two - T::one()) * self.spawn_jitter;
            state[1] = (T::uniform_01(rng) * two - T::one()) * self.spawn_jitter;
        }
        state
    }

    fn step(
        &self,
        state: &DVector<T>,
        action: &DVector<T>,
        rng: &mut ChaCha8Rng,
    ) -> StepOutcome<T> {
        let cfg = &self.config;
        let mut ax = action[0];
        let mut ay = action[1];
        if self.action_noise > T::zero() {
            ax += T::standard_normal(rng) * self.action_noise;
            ay += T::standard_normal(rng) * self.action_noise;
        }
        let (px, py, vx, vy) = (state[0], state[1], state[2], state[3]);
        let npx = self.clamp_pos(px + cfg.dt * vx);
        let npy = self.clamp_pos(py + cfg.dt * vy);
        let nvx = vx + cfg.dt * (cfg.force_scale * ax - cfg.friction * vx);
        let nvy = vy + cfg.dt * (cfg.force_scale * ay - cfg.friction * vy);
        let reward = (npx - px) + self.reward_shift;
        StepOutcome {
            next_state: DVector::from_vec(vec![npx, npy, nvx, nvy]),
            reward,
            terminal: false,
        }
    }

    fn gt_descriptor(&self, traj: &Trajectory<T>) -> DVector<T> {
        let last = traj.final_state();
        let h = self.config.arena_halfwidth;
        DVector::from_vec(vec![last[0] / h, last[1] / h])
    }

    fn gt_bounds(&self) -> (Vec<T>, Vec<T>) {
        (vec![-T::one(), -T::one()], vec![T::one(), T::one()])
    }
}

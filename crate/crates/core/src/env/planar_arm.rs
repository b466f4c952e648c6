//! Torque-controlled two-link planar arm.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Environment, MdpSpec, StepOutcome, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarArmConfig<T: Real> {
    /// Length of each link.
    pub link_length: T,
    /// Torque multiplier; divided by the mass scale in adaptation sweeps.
    pub force_scale: T,
    /// Angular damping; multiplied by the friction scale in sweeps.
    pub friction: T,
    pub dt: T,
}

impl<T: Real> Default for PlanarArmConfig<T> {
    fn default() -> Self {
        PlanarArmConfig {
            link_length: T::one(),
            force_scale: T::of(4.0),
            friction: T::of(1.0),
            dt: T::of(0.05),
        }
    }
}

impl<T: Real> PlanarArmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.link_length > T::zero()) || !(self.dt > T::zero()) {
            return Err(Error::config("link_length and dt must be positive"));
        }
        if self.friction < T::zero() {
            return Err(Error::config("friction must be nonnegative"));
        }
        Ok(())
    }

    pub fn vary(&self, friction_scale: T, mass_scale: T) -> Result<Self> {
        if !(friction_scale > T::zero()) || !(mass_scale > T::zero()) {
            return Err(Error::domain("variation scales must be positive"));
        }
        Ok(PlanarArmConfig {
            link_length: self.link_length,
            force_scale: self.force_scale / mass_scale,
            friction: self.friction * friction_scale,
            dt: self.dt,
        })
    }
}

/// Two revolute joints driven by bounded torques. State is
/// (theta1, theta2, omega1, omega2); the reward is the end effector's
/// forward (x) displacement per step plus a constant shift that keeps
/// returns nonnegative. The hand-crafted descriptor is the final end
/// effector position scaled by the arm's reach.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanarArm<T: Real> {
    pub config: PlanarArmConfig<T>,
    pub action_noise: T,
    pub spawn_jitter: T,
    spec: MdpSpec<T>,
    reward_shift: T,
}

impl<T: Real> PlanarArm<T> {
    pub fn new(
        config: PlanarArmConfig<T>,
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
        // Tip x ranges over [-reach, reach].
        let reach = T::of(2.0) * config.link_length;
        let reward_shift = T::of(2.0) * reach / T::from_usize(horizon).unwrap();
        PlanarArm { config, action_noise, spawn_jitter, spec, reward_shift }
    }

    pub fn default_env() -> Self {
        PlanarArm::new(PlanarArmConfig::default(), T::of(0.99), 60, T::zero(), T::zero())
    }

    fn tip(&self, theta1: T, theta2: T) -> (T, T) {
        let l = self.config.link_length;
        let x = l * theta1.cos() + l * (theta1 + theta2).cos();
        let y = l * theta1.sin() + l * (theta1 + theta2).sin();
        (x, y)
    }
}

impl<T: Real> Environment<T> for PlanarArm<T> {
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
        let mut t1 = action[0];
        let mut t2 = action[1];
        if self.action_noise > T::zero() {
            t1 += T::standard_normal(rng) * self.action_noise;
            t2 += T::standard_normal(rng) * self.action_noise;
        }
        let (a1, a2, w1, w2) = (state[0], state[1], state[2], state[3]);
        let (old_x, _) = self.tip(a1, a2);
        let na1 = a1 + cfg.dt * w1;
        let na2 = a2 + cfg.dt * w2;
        let nw1 = w1 + cfg.dt * (cfg.force_scale * t1 - cfg.friction * w1);
        let nw2 = w2 + cfg.dt * (cfg.force_scale * t2 - cfg.friction * w2);
        let (new_x, _) = self.tip(na1, na2);
        let reward = (new_x - old_x) + self.reward_shift;
        StepOutcome {
            next_state: DVector::from_vec(vec![na1, na2, nw1, nw2]),
            reward,
            terminal: false,
        }
    }

    fn gt_descriptor(&self, traj: &Trajectory<T>) -> DVector<T> {
        let last = traj.final_state();
        let (x, y) = self.tip(last[0], last[1]);
        let reach = T::of(2.0) * self.config.link_length;
        DVector::from_vec(vec![x / reach, y / reach])
    }

    fn gt_bounds(&self) -> (Vec<T>, Vec<T>) {
        (vec![-T::one(), -T::one()], vec![T::one(), T::one()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tip_descriptor_is_within_reach() {
        let env = PlanarArm::<f64>::default_env();
        let traj = Trajectory {
            transitions: vec![super::super::Transition {
                state: DVector::zeros(4),
                action: DVector::zeros(2),
                reward: 0.0,
                next_state: DVector::from_vec(vec![1.3, -2.1, 0.0, 0.0]),
                terminal: false,
            }],
        };
        let d = env.gt_descriptor(&traj);
        assert!(d.amax() <= 1.0 + 1e-12);
    }

    #[test]
    fn returns_are_nonnegative() {
        let env = PlanarArm::<f64>::default_env();
        let mut rng = crate::seeding::rng_from_seed(17);
        let mut state = env.reset(&mut rng);
        let action = DVector::from_vec(vec![-0.8, 0.3]);
        let mut total = 0.0;
        for _ in 0..env.spec.horizon {
            let out = env.step(&state, &action, &mut rng);
            total += out.reward;
            state = out.next_state;
        }
        assert!(total >= 0.0, "return {total}");
    }

    #[test]
    fn vary_scales_config() {
        let cfg = PlanarArmConfig::<f64>::default();
        let v = cfg.vary(3.0, 2.0).unwrap();
        assert_eq!(v.friction, 3.0);
        assert_eq!(v.force_scale, 2.0);
    }
}

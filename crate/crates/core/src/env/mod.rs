//! MDP abstraction, desk-scale environments, and rollout collection.

mod finite;
mod planar_arm;
mod point_mass;

pub use finite::{random_finite_mdp, random_policy_table, FiniteMdp, PolicyTable};
pub use planar_arm::{PlanarArm, PlanarArmConfig};
pub use point_mass::{vary_env, PointMass2d, PointMassConfig};

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyNet;
use crate::scalar::Real;
use crate::seeding;

/// Static description of an MDP: dimensions, action bounds, discount and
/// episode cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpSpec<T: Real> {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<T>,
    pub action_high: Vec<T>,
    pub gamma: T,
    pub horizon: usize,
}

impl<T: Real> MdpSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return Err(Error::config("state_dim, action_dim and horizon must be positive"));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::config("action bound lengths must match action_dim"));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !(*lo < *hi) {
                return Err(Error::config("action_low must be below action_high elementwise"));
            }
        }
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            return Err(Error::config("gamma must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One environment step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition<T: Real> {
    pub state: DVector<T>,
    pub action: DVector<T>,
    pub reward: T,
    pub next_state: DVector<T>,
    pub terminal: bool,
}

/// An episode: a nonempty, contiguous sequence of transitions. Truncation at
/// the horizon is not a terminal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory<T: Real> {
    pub transitions: Vec<Transition<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn final_state(&self) -> &DVector<T> {
        &self.transitions[self.transitions.len() - 1].next_state
    }
}

pub struct StepOutcome<T: Real> {
    pub next_state: DVector<T>,
    pub reward: T,
    pub terminal: bool,
}

/// A stateless environment: dynamics are pure functions of (state, action,
/// rng), so rollouts can run concurrently without shared mutable state.
pub trait Environment<T: Real>: Send + Sync {
    fn spec(&self) -> &MdpSpec<T>;

    fn reset(&self, rng: &mut ChaCha8Rng) -> DVector<T>;

    fn step(&self, state: &DVector<T>, action: &DVector<T>, rng: &mut ChaCha8Rng)
        -> StepOutcome<T>;

    /// Hand-crafted behavior descriptor of a finished episode.
    fn gt_descriptor(&self, traj: &Trajectory<T>) -> DVector<T>;

    /// Bounds of the hand-crafted descriptor space, per axis.
    fn gt_bounds(&self) -> (Vec<T>, Vec<T>);
}

/// Shared per-environment knobs that sit outside the dynamics config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSettings<T: Real> {
    pub gamma: T,
    pub horizon: usize,
    pub action_noise: T,
    pub spawn_jitter: T,
}

impl<T: Real> Default for EpisodeSettings<T> {
    fn default() -> Self {
        EpisodeSettings {
            gamma: T::of(0.99),
            horizon: 60,
            action_noise: T::zero(),
            spawn_jitter: T::zero(),
        }
    }
}

/// Buildable description of an environment, as stored in experiment
/// configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvSpec<T: Real> {
    PointMass2d { dynamics: PointMassConfig<T>, episode: EpisodeSettings<T> },
    PlanarArm { dynamics: PlanarArmConfig<T>, episode: EpisodeSettings<T> },
}

impl<T: Real> EnvSpec<T> {
    pub fn default_point_mass() -> Self {
        EnvSpec::PointMass2d {
            dynamics: PointMassConfig::default(),
            episode: EpisodeSettings::default(),
        }
    }

    pub fn default_planar_arm() -> Self {
        EnvSpec::PlanarArm {
            dynamics: PlanarArmConfig::default(),
            episode: EpisodeSettings::default(),
        }
    }

    pub fn episode(&self) -> &EpisodeSettings<T> {
        match self {
            EnvSpec::PointMass2d { episode, .. } => episode,
            EnvSpec::PlanarArm { episode, .. } => episode,
        }
    }

    pub fn episode_mut(&mut self) -> &mut EpisodeSettings<T> {
        match self {
            EnvSpec::PointMass2d { episode, .. } => episode,
            EnvSpec::PlanarArm { episode, .. } => episode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ep = self.episode();
        if !(ep.gamma > T::zero() && ep.gamma < T::one()) {
            return Err(Error::config("gamma must lie in (0, 1)"));
        }
        if ep.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        match self {
            EnvSpec::PointMass2d { dynamics, .. } => dynamics.validate(),
            EnvSpec::PlanarArm { dynamics, .. } => dynamics.validate(),
        }
    }

    pub fn build(&self) -> Box<dyn Environment<T>> {
        match self {
            EnvSpec::PointMass2d { dynamics, episode } => Box::new(PointMass2d::new(
                *dynamics,
                episode.gamma,
                episode.horizon,
                episode.action_noise,
                episode.spawn_jitter,
            )),
            EnvSpec::PlanarArm { dynamics, episode } => Box::new(PlanarArm::new(
                *dynamics,
                episode.gamma,
                episode.horizon,
                episode.action_noise,
                episode.spawn_jitter,
            )),
        }
    }

    /// Applies the friction/mass variation knobs, leaving `self` untouched.
    pub fn vary(&self, friction_scale: T, mass_scale: T) -> Result<EnvSpec<T>> {
        Ok(match self {
            EnvSpec::PointMass2d { dynamics, episode } => EnvSpec::PointMass2d {
                dynamics: vary_env(dynamics, friction_scale, mass_scale)?,
                episode: *episode,
            },
            EnvSpec::PlanarArm { dynamics, episode } => EnvSpec::PlanarArm {
                dynamics: dynamics.vary(friction_scale, mass_scale)?,
                episode: *episode,
            },
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            EnvSpec::PointMass2d { .. } => "pointmass2d",
            EnvSpec::PlanarArm { .. } => "planararm",
        }
    }
}

/// Runs one episode of `policy` in `env`. Deterministic given the seed.
pub fn rollout<T: Real>(
    env: &dyn Environment<T>,
    policy: &PolicyNet<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    let spec = env.spec();
    if policy.input_dim() != spec.state_dim || policy.output_dim() != spec.action_dim {
        return Err(Error::config(format!(
            "policy dims ({} -> {}) do not match environment ({} -> {})",
            policy.input_dim(),
            policy.output_dim(),
            spec.state_dim,
            spec.action_dim
        )));
    }
    let mut rng = seeding::rng_from_seed(seed);
    let mut state = env.reset(&mut rng);
    let mut transitions = Vec::with_capacity(spec.horizon);
    for _ in 0..spec.horizon {
        let action = policy.act(&state, &spec.action_low, &spec.action_high);
        let out = env.step(&state, &action, &mut rng);
        let terminal = out.terminal;
        transitions.push(Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            terminal,
        });
        state = out.next_state;
        if terminal {
            break;
        }
    }
    Ok(Trajectory { transitions })
}

/// Discounted return of an episode. `gamma` may be 0 or 1 here (degenerate
/// values are useful in tests); the episode must be nonempty.
pub fn discounted_return<T: Real>(traj: &Trajectory<T>, gamma: T) -> Result<T> {
    if traj.is_empty() {
        return Err(Error::domain("discounted_return of an empty trajectory"));
    }
    if gamma < T::zero() || gamma > T::one() {
        return Err(Error::domain("gamma must lie in [0, 1]"));
    }
    let mut total = T::zero();
    let mut discount = T::one();
    for tr in &traj.transitions {
        total += discount * tr.reward;
        discount *= gamma;
    }
    Ok(total)
}

/// Undiscounted episode return: the fitness convention used by the driver.
pub fn episode_return<T: Real>(traj: &Trajectory<T>) -> T {
    traj.transitions.iter().map(|t| t.reward).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyArchitecture, PolicyNet, PolicyParams};

    fn zero_policy(arch: &PolicyArchitecture) -> PolicyNet<f64> {
        let params = PolicyParams::zeros(arch.param_count());
        PolicyNet::compile(arch, &params).unwrap()
    }

    #[test]
    fn rollout_is_deterministic_given_seed() {
        let env = PointMass2d::<f64>::default_env();
        let arch = PolicyArchitecture::new(vec![4, 8, 2], true);
        let policy = zero_policy(&arch);
        let a = rollout(&env, &policy, 99).unwrap();
        let b = rollout(&env, &policy, 99).unwrap();
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.transitions.iter().zip(&b.transitions) {
            assert_eq!(ta.state, tb.state);
            assert_eq!(ta.action, tb.action);
            assert_eq!(ta.reward, tb.reward);
        }
    }

    #[test]
    fn zero_policy_holds_point_mass_at_spawn() {
        let env = PointMass2d::<f64>::default_env();
        let arch = PolicyArchitecture::new(vec![4, 8, 2], true);
        let policy = zero_policy(&arch);
        let traj = rollout(&env, &policy, 0).unwrap();
        // tanh(0) = 0 action in symmetric bounds keeps the point at spawn.
        let last = traj.final_state();
        assert_eq!(last[0], 0.0);
        assert_eq!(last[1], 0.0);
    }

    #[test]
    fn constant_action_integrates_as_hand_computed() {
        // Hand-integrated three steps of
        //   pos += dt*vel; vel += dt*(force_scale*a - friction*vel)
        // from rest with a = (1, 0).
        let cfg = PointMassConfig {
            arena_halfwidth: 10.0,
            force_scale: 2.0,
            friction: 0.5,
            dt: 0.1,
        };
        let (mut px, mut vx) = (0.0f64, 0.0f64);
        let mut expect = Vec::new();
        for _ in 0..3 {
            px += cfg.dt * vx;
            vx += cfg.dt * (cfg.force_scale * 1.0 - cfg.friction * vx);
            expect.push((px, vx));
        }

        let env = PointMass2d::new(cfg, 0.99, 10, 0.0, 0.0);
        let mut rng = seeding::rng_from_seed(1);
        let mut state = env.reset(&mut rng);
        let action = DVector::from_vec(vec![1.0, 0.0]);
        for (epx, evx) in expect {
            let out = env.step(&state, &action, &mut rng);
            state = out.next_state;
            assert!((state[0] - epx).abs() < 1e-12, "pos {} vs {}", state[0], epx);
            assert!((state[2] - evx).abs() < 1e-12, "vel {} vs {}", state[2], evx);
        }
    }

    #[test]
    fn discounted_return_matches_hand_sum() {
        let traj = Trajectory {
            transitions: (0..3)
                .map(|_| Transition {
                    state: DVector::zeros(1),
                    action: DVector::zeros(1),
                    reward: 1.0f64,
                    next_state: DVector::zeros(1),
                    terminal: false,
                })
                .collect(),
        };
        // 1 + 0.5 + 0.25
        assert_eq!(discounted_return(&traj, 0.5).unwrap(), 1.75);
        // gamma = 0 keeps only r_0
        assert_eq!(discounted_return(&traj, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn discounted_return_rejects_empty() {
        let traj = Trajectory::<f64> { transitions: vec![] };
        assert!(discounted_return(&traj, 0.9).is_err());
    }

    #[test]
    fn zero_rewards_give_zero_return() {
        let traj = Trajectory {
            transitions: (0..5)
                .map(|_| Transition {
                    state: DVector::zeros(1),
                    action: DVector::zeros(1),
                    reward: 0.0f64,
                    next_state: DVector::zeros(1),
                    terminal: false,
                })
                .collect(),
        };
        assert_eq!(discounted_return(&traj, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn rollout_rejects_mismatched_policy() {
        let env = PointMass2d::<f64>::default_env();
        let arch = PolicyArchitecture::new(vec![3, 2], false);
        let params = PolicyParams::zeros(arch.param_count());
        let policy = PolicyNet::compile(&arch, &params).unwrap();
        assert!(matches!(rollout(&env, &policy, 0), Err(Error::Config(_))));
    }

    #[test]
    fn gt_descriptor_stays_in_unit_box() {
        let env = PointMass2d::<f64>::default_env();
        let arch = PolicyArchitecture::new(vec![4, 8, 2], true);
        let mut rng = seeding::rng_from_seed(5);
        for _ in 0..20 {
            let params = PolicyParams::random(arch.param_count(), 1.0, &mut rng);
            let policy = PolicyNet::compile(&arch, &params).unwrap();
            let traj = rollout(&env, &policy, 3).unwrap();
            let d = env.gt_descriptor(&traj);
            for i in 0..d.len() {
                assert!(d[i] >= -1.0 && d[i] <= 1.0, "descriptor {d:?}");
            }
        }
    }
}

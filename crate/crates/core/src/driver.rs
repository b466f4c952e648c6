//! The optimization loop: emitters feeding the annealing archive, with
//! periodic descriptor refits.
//!
//! Each iteration, every emitter samples a batch of candidate parameter
//! vectors, evaluates each over a few episodes, embeds the trajectories,
//! projects the embedding to a descriptor, and offers the result to the
//! archive. Candidates are ranked by their improvement over the cell
//! thresholds and the ranking drives the CMA-ES update. At scheduled
//! iterations the descriptor map is refit on the archive's embeddings and
//! both archives are rebuilt in the new coordinates.
//!
//! All randomness is derived from the master seed per (iteration, emitter,
//! candidate, episode), so runs are reproducible and candidate evaluations
//! can be parallelized without changing results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveConfig, GridArchive, Occupant};
use crate::descriptor::{self, CwPcaFit};
use crate::embedding::{sample_rff, RffMap};
use crate::env::{episode_return, rollout, EnvSpec, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::EvaluatedMember;
use crate::optimizer::{rank_by_improvement, CmaEs};
use crate::policy::{PolicyArchitecture, PolicyNet, PolicyParams};
use crate::scalar::Real;
use crate::seeding::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Learned descriptors from embedding projections.
    Auto,
    /// Hand-crafted environment descriptors; no descriptor updates.
    Regular,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Auto => "auto",
            Mode::Regular => "regular",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<T: Real> {
    pub env: EnvSpec<T>,
    pub mode: Mode,
    pub master_seed: u64,
    pub iterations: usize,
    pub episodes_per_eval: usize,
    /// Candidates per emitter per iteration.
    pub batch_size: usize,
    pub n_emitters: usize,
    /// Initial step sizes, one per emitter (cycled if shorter).
    pub sigma0_ladder: Vec<T>,
    pub hidden_layers: Vec<usize>,
    pub toeplitz: bool,
    /// Embedding dimension D.
    pub n_features: usize,
    /// Kernel bandwidth; `None` selects sqrt(state_dim + action_dim).
    pub kernel_sigma: Option<T>,
    /// Descriptor dimension k (learned mode).
    pub descriptor_dim: usize,
    /// Iterations at whose start the descriptor map is refit.
    pub update_schedule: Vec<usize>,
    pub cells_per_dim: usize,
    pub archive_lower: T,
    pub archive_upper: T,
    pub archive_alpha: T,
    pub min_objective: T,
}

impl<T: Real> RunConfig<T> {
    pub fn desk_default(env: EnvSpec<T>) -> Self {
        RunConfig {
            env,
            mode: Mode::Auto,
            master_seed: 0,
            iterations: 500,
            episodes_per_eval: 5,
            batch_size: 64,
            n_emitters: 5,
            sigma0_ladder: (1..=5).map(|i| T::of(0.01 * (1 << i) as f64)).collect(),
            hidden_layers: vec![16],
            toeplitz: true,
            n_features: 100,
            kernel_sigma: None,
            descriptor_dim: 4,
            update_schedule: vec![20, 50, 100, 200, 300],
            cells_per_dim: 10,
            archive_lower: T::of(-1.2),
            archive_upper: T::of(1.2),
            archive_alpha: T::of(0.01),
            min_objective: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.episodes_per_eval == 0 {
            return Err(Error::config("episodes_per_eval must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.n_emitters == 0 || self.sigma0_ladder.is_empty() {
            return Err(Error::config("need at least one emitter and one sigma0"));
        }
        if self.sigma0_ladder.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::config("sigma0 values must be positive"));
        }
        if self.n_features == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if self.descriptor_dim == 0 {
            return Err(Error::config("descriptor dimension must be positive"));
        }
        if self.mode == Mode::Auto && self.descriptor_dim > self.n_features {
            return Err(Error::config("descriptor dimension cannot exceed embedding dimension"));
        }
        let mut prev = 0usize;
        for &s in &self.update_schedule {
            if s <= prev {
                return Err(Error::config("update schedule must be strictly increasing"));
            }
            if s >= self.iterations && self.iterations > 0 {
                return Err(Error::config("update schedule entries must be below iterations"));
            }
            prev = s;
        }
        if self.cells_per_dim == 0 {
            return Err(Error::config("cells_per_dim must be positive"));
        }
        if !(self.archive_lower < self.archive_upper) {
            return Err(Error::config("archive bounds must be ordered"));
        }
        if !(self.archive_alpha > T::zero() && self.archive_alpha <= T::one()) {
            return Err(Error::config("archive alpha must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn policy_architecture(&self) -> PolicyArchitecture {
        let env = self.env.build();
        let spec = env.spec();
        let mut layers = Vec::with_capacity(self.hidden_layers.len() + 2);
        layers.push(spec.state_dim);
        layers.extend_from_slice(&self.hidden_layers);
        layers.push(spec.action_dim);
        PolicyArchitecture::new(layers, self.toeplitz)
    }

    /// Archive geometry for the active mode: the learned box in auto mode,
    /// the environment's hand-crafted bounds in regular mode.
    pub fn archive_config(&self) -> ArchiveConfig<T> {
        match self.mode {
            Mode::Auto => ArchiveConfig {
                dims: self.descriptor_dim,
                cells_per_dim: self.cells_per_dim,
                lower: vec![self.archive_lower; self.descriptor_dim],
                upper: vec![self.archive_upper; self.descriptor_dim],
                alpha: self.archive_alpha,
                min_objective: self.min_objective,
            },
            Mode::Regular => {
                let env = self.env.build();
                let (lower, upper) = env.gt_bounds();
                let mut cfg = ArchiveConfig::with_bounds(
                    lower,
                    upper,
                    self.cells_per_dim,
                    self.archive_alpha,
                );
                cfg.min_objective = self.min_objective;
                cfg
            }
        }
    }

    /// Hand-crafted descriptor grid used for cross-mode comparisons.
    pub fn gt_archive_config(&self) -> ArchiveConfig<T> {
        let env = self.env.build();
        let (lower, upper) = env.gt_bounds();
        let mut cfg =
            ArchiveConfig::with_bounds(lower, upper, self.cells_per_dim, self.archive_alpha);
        cfg.min_objective = self.min_objective;
        cfg
    }

    pub fn sigma0_for(&self, emitter: usize) -> T {
        self.sigma0_ladder[emitter % self.sigma0_ladder.len()]
    }

    pub fn kernel_sigma_value(&self) -> T {
        let env = self.env.build();
        let spec = env.spec();
        self.kernel_sigma
            .unwrap_or_else(|| RffMap::<T>::default_sigma(spec.state_dim + spec.action_dim))
    }

    /// Episodes consumed by one full iteration.
    pub fn evaluations_per_iteration(&self) -> u64 {
        (self.n_emitters * self.batch_size * self.episodes_per_eval) as u64
    }
}

/// The projection from embeddings to descriptors. Before the first refit a
/// fixed random row-orthonormal projection stands in (unscaled); refits
/// replace it with a calibrated fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DescriptorMap<T: Real> {
    Bootstrap { rows: DMatrix<T> },
    Fitted { fit: CwPcaFit<T>, fitted_at_iteration: usize },
}

impl<T: Real> DescriptorMap<T> {
    /// Random k x D projection with orthonormal rows: distances in
    /// embedding space are preserved in expectation, so improvements are
    /// meaningful even before calibration data exists.
    pub fn bootstrap(k: usize, d: usize, seed: u64) -> Self {
        let mut rng = seeding::derive_rng(seed, &[tag::BOOTSTRAP_MAP]);
        let mut rows: Vec<DVector<T>> = Vec::with_capacity(k);
        while rows.len() < k {
            let mut candidate = DVector::from_fn(d, |_, _| T::standard_normal(&mut rng));
            for prev in &rows {
                let proj = prev.dot(&candidate);
                candidate.axpy(-proj, prev, T::one());
            }
            let n = candidate.norm();
            if n > T::of(1e-8) {
                rows.push(candidate / n);
            }
        }
        let mut mat = DMatrix::zeros(k, d);
        for (i, r) in rows.iter().enumerate() {
            mat.row_mut(i).copy_from(&r.transpose());
        }
        DescriptorMap::Bootstrap { rows: mat }
    }

    pub fn project(&self, psi: &DVector<T>) -> Result<DVector<T>> {
        match self {
            DescriptorMap::Bootstrap { rows } => {
                if psi.len() != rows.ncols() {
                    return Err(Error::config("embedding length does not match projection"));
                }
                Ok(rows * psi)
            }
            DescriptorMap::Fitted { fit, .. } => descriptor::project(fit, psi),
        }
    }
}

/// One emitter: a CMA-ES instance plus its restart bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Emitter<T: Real> {
    pub cma: CmaEs<T>,
    pub sigma0: T,
    pub iterations_since_restart: u64,
    pub restarts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow<T: Real> {
    pub iteration: usize,
    pub evaluations: u64,
    pub qd_score: T,
    pub coverage: T,
    pub best_fitness: T,
    pub mean_fitness: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState<T: Real> {
    pub config: RunConfig<T>,
    pub rff: RffMap<T>,
    pub descriptor_map: DescriptorMap<T>,
    /// The annealing archive driving the optimization signal.
    pub soft: GridArchive<T>,
    /// The passive elitist archive: source of metrics and restart elites.
    pub elitist: GridArchive<T>,
    pub emitters: Vec<Emitter<T>>,
    pub iteration: usize,
    pub evaluations: u64,
    pub metrics: Vec<MetricsRow<T>>,
    pub skipped_updates: Vec<usize>,
}

/// Worker context for a run; holds the optional rayon pool so `RunState`
/// itself stays serializable.
pub struct Runner {
    pool: Option<rayon::ThreadPool>,
    pub workers: usize,
}

impl Runner {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Runner { pool, workers: workers.max(1) })
    }
}

/// Evaluation result for one candidate.
struct CandidateEval<T: Real> {
    fitness: T,
    descriptor: Vec<T>,
    embedding: Vec<T>,
    eval_seeds: Vec<u64>,
    trajectories: Vec<Trajectory<T>>,
}

/// Initializes a run: empty archives with thresholds at the objective
/// floor, one CMA-ES emitter per ladder entry centered at zero, the
/// feature map sampled from the master seed, and the bootstrap projection.
pub fn init<T: Real>(config: RunConfig<T>) -> Result<RunState<T>> {
    config.validate()?;
    let env = config.env.build();
    let spec = env.spec();
    let arch = config.policy_architecture();
    arch.validate()?;
    let dim = arch.param_count();

    let rff_seed = seeding::derive_seed(config.master_seed, &[tag::RFF]);
    let rff = sample_rff(
        rff_seed,
        config.n_features,
        spec.state_dim + spec.action_dim,
        spec.state_dim,
        config.kernel_sigma_value(),
    )?;

    let descriptor_map = DescriptorMap::bootstrap(
        config.descriptor_dim,
        config.n_features,
        config.master_seed,
    );

    let archive_cfg = config.archive_config();
    let soft = GridArchive::new(archive_cfg.clone())?;
    let elitist = GridArchive::elitist(archive_cfg)?;

    let mut emitters = Vec::with_capacity(config.n_emitters);
    for e in 0..config.n_emitters {
        let sigma0 = config.sigma0_for(e);
        emitters.push(Emitter {
            cma: CmaEs::new(dim, &vec![T::zero(); dim], sigma0, config.batch_size)?,
            sigma0,
            iterations_since_restart: 0,
            restarts: 0,
        });
    }

    Ok(RunState {
        config,
        rff,
        descriptor_map,
        soft,
        elitist,
        emitters,
        iteration: 0,
        evaluations: 0,
        metrics: Vec::new(),
        skipped_updates: Vec::new(),
    })
}

fn evaluate_candidate<T: Real>(
    env: &dyn Environment<T>,
    rff: &RffMap<T>,
    map: &DescriptorMap<T>,
    mode: Mode,
    arch: &PolicyArchitecture,
    params: &DVector<T>,
    seeds: Vec<u64>,
    gamma: T,
) -> CandidateEval<T> {
    let failure = |seeds: Vec<u64>| CandidateEval {
        fitness: -T::of(f64::INFINITY),
        descriptor: vec![T::zero(); 1],
        embedding: vec![],
        eval_seeds: seeds,
        trajectories: vec![],
    };
    let flat = PolicyParams::new(params.iter().copied().collect());
    let Ok(net) = PolicyNet::compile(arch, &flat) else {
        return failure(seeds);
    };
    let mut trajectories = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        match rollout(env, &net, seed) {
            Ok(traj) => trajectories.push(traj),
            Err(_) => return failure(seeds),
        }
    }
    let returns: Vec<T> = trajectories.iter().map(episode_return).collect();
    let fitness = returns.iter().copied().sum::<T>() / T::from_usize(returns.len()).unwrap();

    let (descriptor, embedding) = match mode {
        Mode::Auto => {
            let Ok(emb) = rff.embed_policy(&trajectories, gamma) else {
                return failure(seeds);
            };
            let Ok(desc) = map.project(&emb.psi) else {
                return failure(seeds);
            };
            (desc.iter().copied().collect(), emb.psi.iter().copied().collect())
        }
        Mode::Regular => {
            let mut acc: Option<DVector<T>> = None;
            for traj in &trajectories {
                let d = env.gt_descriptor(traj);
                acc = Some(match acc {
                    None => d,
                    Some(a) => a + d,
                });
            }
            let mean = acc.unwrap() / T::from_usize(trajectories.len()).unwrap();
            (mean.iter().copied().collect(), vec![])
        }
    };

    CandidateEval { fitness, descriptor, embedding, eval_seeds: seeds, trajectories }
}

/// Runs one full iteration: every emitter asks, evaluates, inserts, ranks,
/// tells, and possibly restarts. Returns the number of episodes consumed.
pub fn step<T: Real>(state: &mut RunState<T>, runner: &Runner) -> Result<()> {
    let iteration = state.iteration + 1;
    let env = state.config.env.build();
    let gamma = state.config.env.episode().gamma;
    let arch = state.config.policy_architecture();
    let episodes = state.config.episodes_per_eval;
    let mode = state.config.mode;
    let master = state.config.master_seed;

    for e in 0..state.emitters.len() {
        let mut ask_rng =
            seeding::derive_rng(master, &[tag::EMITTER, e as u64, iteration as u64]);
        let candidates = match state.emitters[e].cma.ask(&mut ask_rng) {
            Ok(c) => c,
            Err(_) => {
                // Non-finite emitter state: restart and retry once.
                restart_emitter(state, e, iteration)?;
                let mut retry_rng = seeding::derive_rng(
                    master,
                    &[tag::EMITTER, e as u64, iteration as u64, 1],
                );
                state.emitters[e].cma.ask(&mut retry_rng)?
            }
        };

        // Evaluate the batch; the normalizer stays frozen during it.
        let jobs: Vec<(usize, DVector<T>, Vec<u64>)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let seeds: Vec<u64> = (0..episodes)
                    .map(|ep| {
                        seeding::derive_seed(
                            master,
                            &[tag::EVAL, iteration as u64, e as u64, i as u64, ep as u64],
                        )
                    })
                    .collect();
                (i, c.clone(), seeds)
            })
            .collect();

        let eval_one = |(_, params, seeds): &(usize, DVector<T>, Vec<u64>)| {
            evaluate_candidate(
                env.as_ref(),
                &state.rff,
                &state.descriptor_map,
                mode,
                &arch,
                params,
                seeds.clone(),
                gamma,
            )
        };
        let evals: Vec<CandidateEval<T>> = match &runner.pool {
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                jobs.par_iter().map(eval_one).collect()
            }),
            None => jobs.iter().map(eval_one).collect(),
        };

        // Feed the normalizer between batches, in candidate order.
        if mode == Mode::Auto {
            for ev in &evals {
                state.rff.observe_trajectories(&ev.trajectories);
            }
        }

        // Insert in candidate order; improvements drive the ranking.
        let mut improvements = Vec::with_capacity(evals.len());
        let fitnesses: Vec<T> = evals.iter().map(|ev| ev.fitness).collect();
        for (i, ev) in evals.iter().enumerate() {
            let occupant = Occupant {
                params: candidates[i].iter().copied().collect(),
                fitness: ev.fitness,
                descriptor: ev.descriptor.clone(),
                embedding: ev.embedding.clone(),
                eval_seeds: ev.eval_seeds.clone(),
            };
            let outcome = state.soft.insert(occupant.clone());
            state.elitist.insert(occupant);
            improvements.push(outcome.improvement);
        }

        let ranking = rank_by_improvement(&improvements, &fitnesses);
        state.emitters[e].cma.tell(&candidates, &ranking)?;
        state.emitters[e].iterations_since_restart += 1;

        let since = state.emitters[e].iterations_since_restart;
        if state.emitters[e].cma.needs_restart(since) {
            restart_emitter(state, e, iteration)?;
        }
        state.evaluations += (candidates.len() * episodes) as u64;
    }

    state.iteration = iteration;
    state.metrics.push(MetricsRow {
        iteration,
        evaluations: state.evaluations,
        qd_score: state.elitist.qd_score(),
        coverage: state.elitist.coverage(),
        best_fitness: state.elitist.best_fitness().unwrap_or(T::zero()),
        mean_fitness: state.elitist.mean_fitness().unwrap_or(T::zero()),
    });
    Ok(())
}

/// Reinitializes an emitter at a uniformly random elite of the elitist
/// archive (or the origin when it is empty), with identity covariance and
/// the emitter's original step size.
fn restart_emitter<T: Real>(
    state: &mut RunState<T>,
    emitter: usize,
    iteration: usize,
) -> Result<()> {
    let dim = state.emitters[emitter].cma.dim;
    let lambda = state.emitters[emitter].cma.lambda;
    let sigma0 = state.emitters[emitter].sigma0;
    let mut rng = seeding::derive_rng(
        state.config.master_seed,
        &[tag::RESTART, iteration as u64, emitter as u64, state.emitters[emitter].restarts],
    );
    let x0: Vec<T> = if state.elitist.is_empty() {
        vec![T::zero(); dim]
    } else {
        let cells: Vec<usize> = state.elitist.occupants().map(|(c, _)| c).collect();
        let pick = (T::uniform_01(&mut rng).to_f64_lossy() * cells.len() as f64) as usize;
        let cell = cells[pick.min(cells.len() - 1)];
        state.elitist.get(cell).unwrap().params.clone()
    };
    state.emitters[emitter].cma = CmaEs::new(dim, &x0, sigma0, lambda)?;
    state.emitters[emitter].iterations_since_restart = 0;
    state.emitters[emitter].restarts += 1;
    Ok(())
}

/// Refits the descriptor map on the soft archive's embeddings and rebuilds
/// both archives in the new coordinates. Skipped (with a warning) when the
/// archive holds fewer than two occupants.
pub fn update_descriptors<T: Real>(state: &mut RunState<T>) -> Result<()> {
    let m = state.soft.len();
    if m < 2 {
        log::warn!(
            "descriptor update at iteration {} skipped: archive has {} occupant(s)",
            state.iteration + 1,
            m
        );
        state.skipped_updates.push(state.iteration + 1);
        return Ok(());
    }
    let d = state.config.n_features;
    let k = state.config.descriptor_dim;
    let mut embeddings = DMatrix::zeros(m, d);
    let mut fitness = Vec::with_capacity(m);
    for (row, (_, occ)) in state.soft.occupants().enumerate() {
        for j in 0..d {
            embeddings[(row, j)] = occ.embedding[j];
        }
        fitness.push(occ.fitness);
    }
    let fit = descriptor::fit_cwpca(&embeddings, &fitness, k)?;
    state.descriptor_map =
        DescriptorMap::Fitted { fit, fitted_at_iteration: state.iteration + 1 };

    let map = state.descriptor_map.clone();
    let remap = |occ: &Occupant<T>| -> Vec<T> {
        let psi = DVector::from_column_slice(&occ.embedding);
        map.project(&psi).map(|d| d.iter().copied().collect()).unwrap_or_else(|_| {
            vec![T::of(f64::NAN); state.config.descriptor_dim]
        })
    };
    state.soft = state.soft.rebuild(&remap)?;
    state.elitist = state.elitist.rebuild(&remap)?;
    Ok(())
}

/// Runs the full loop. Descriptor updates fire at the start of scheduled
/// iterations (auto mode only), before that iteration's step.
pub fn run<T: Real>(config: RunConfig<T>, runner: &Runner) -> Result<RunState<T>> {
    let mut state = init(config)?;
    let schedule = state.config.update_schedule.clone();
    for t in 1..=state.config.iterations {
        if state.config.mode == Mode::Auto && schedule.contains(&t) {
            update_descriptors(&mut state)?;
        }
        step(&mut state, runner)?;
    }
    Ok(state)
}

/// Budget-matched random-search reference: draws the same number of
/// candidates per iteration from a fixed Gaussian, evaluates them with the
/// same episode budget, and keeps the best per hand-crafted-descriptor
/// cell. Used to sanity-check that the optimizer earns its QD score.
pub fn random_search_baseline<T: Real>(
    config: &RunConfig<T>,
    runner: &Runner,
) -> Result<GridArchive<T>> {
    config.validate()?;
    let env = config.env.build();
    let arch = config.policy_architecture();
    let dim = arch.param_count();
    let sigma_max =
        config.sigma0_ladder.iter().copied().fold(config.sigma0_ladder[0], |a, b| a.max(b));
    let mut gt = GridArchive::elitist(config.gt_archive_config())?;
    let gamma = config.env.episode().gamma;
    let per_iter = config.n_emitters * config.batch_size;
    let map = DescriptorMap::bootstrap(1, 1, config.master_seed);
    // Regular-mode evaluation never touches the feature map; a minimal one
    // satisfies the signature.
    let spec_dims = {
        let spec = env.spec();
        (spec.state_dim + spec.action_dim, spec.state_dim)
    };
    let dummy_rff = sample_rff::<T>(0, 1, spec_dims.0, spec_dims.1, T::one())?;

    for t in 1..=config.iterations {
        let jobs: Vec<(DVector<T>, Vec<u64>)> = (0..per_iter)
            .map(|i| {
                let mut rng = seeding::derive_rng(
                    config.master_seed,
                    &[tag::BASELINE, t as u64, i as u64],
                );
                let params =
                    DVector::from_fn(dim, |_, _| T::standard_normal(&mut rng) * sigma_max);
                let seeds: Vec<u64> = (0..config.episodes_per_eval)
                    .map(|ep| {
                        seeding::derive_seed(
                            config.master_seed,
                            &[tag::BASELINE, tag::EVAL, t as u64, i as u64, ep as u64],
                        )
                    })
                    .collect();
                (params, seeds)
            })
            .collect();

        let eval_one = |(params, seeds): &(DVector<T>, Vec<u64>)| {
            evaluate_candidate(
                env.as_ref(),
                &dummy_rff,
                &map,
                Mode::Regular,
                &arch,
                params,
                seeds.clone(),
                gamma,
            )
        };
        let evals: Vec<CandidateEval<T>> = match &runner.pool {
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                jobs.par_iter().map(eval_one).collect()
            }),
            None => jobs.iter().map(eval_one).collect(),
        };
        for ((params, _), ev) in jobs.iter().zip(evals) {
            gt.insert(Occupant {
                params: params.iter().copied().collect(),
                fitness: ev.fitness,
                descriptor: ev.descriptor,
                embedding: vec![],
                eval_seeds: ev.eval_seeds,
            });
        }
    }
    Ok(gt)
}

/// Re-evaluates a stored population against the hand-crafted descriptors:
/// fresh rollouts (seeded from `eval_seed`), mean return as fitness, mean
/// final descriptor.
pub fn evaluate_population_gt<T: Real>(
    env_spec: &EnvSpec<T>,
    arch: &PolicyArchitecture,
    population: &[Vec<T>],
    episodes: usize,
    eval_seed: u64,
) -> Result<Vec<EvaluatedMember<T>>> {
    let env = env_spec.build();
    let mut out = Vec::with_capacity(population.len());
    for (i, params) in population.iter().enumerate() {
        let flat = PolicyParams::new(params.clone());
        let net = PolicyNet::compile(arch, &flat)?;
        let mut returns = T::zero();
        let mut acc: Option<DVector<T>> = None;
        for ep in 0..episodes {
            let seed = seeding::derive_seed(eval_seed, &[tag::METRICS, i as u64, ep as u64]);
            let traj = rollout(env.as_ref(), &net, seed)?;
            returns += episode_return(&traj);
            let d = env.gt_descriptor(&traj);
            acc = Some(match acc {
                None => d,
                Some(a) => a + d,
            });
        }
        let n = T::from_usize(episodes).unwrap();
        out.push(EvaluatedMember {
            fitness: returns / n,
            gt_descriptor: (acc.unwrap() / n).iter().copied().collect(),
        });
    }
    Ok(out)
}

/// Per-rollout descriptor samples of one policy: each sample embeds a
/// single trajectory and projects it, which is the unit of the descriptor
/// stability study.
pub fn descriptor_samples<T: Real>(
    env_spec: &EnvSpec<T>,
    arch: &PolicyArchitecture,
    params: &[T],
    rff: &RffMap<T>,
    map: &DescriptorMap<T>,
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<DVector<T>>> {
    if n_rollouts < 2 {
        return Err(Error::domain("descriptor stability needs at least two rollouts"));
    }
    let env = env_spec.build();
    let gamma = env_spec.episode().gamma;
    let net = PolicyNet::compile(arch, &PolicyParams::new(params.to_vec()))?;
    let mut out = Vec::with_capacity(n_rollouts);
    for r in 0..n_rollouts {
        let rollout_seed = seeding::derive_seed(seed, &[tag::METRICS, 0xd5, r as u64]);
        let traj = rollout(env.as_ref(), &net, rollout_seed)?;
        let z = rff.embed_trajectory(&traj, gamma)?;
        out.push(map.project(&z)?);
    }
    Ok(out)
}

/// Descriptor estimates that average `n_per_estimate` rollouts each; the
/// spread of these means shrinks as the per-estimate rollout count grows.
pub fn descriptor_mean_samples<T: Real>(
    env_spec: &EnvSpec<T>,
    arch: &PolicyArchitecture,
    params: &[T],
    rff: &RffMap<T>,
    map: &DescriptorMap<T>,
    n_per_estimate: usize,
    n_estimates: usize,
    seed: u64,
) -> Result<Vec<DVector<T>>> {
    if n_per_estimate == 0 || n_estimates < 2 {
        return Err(Error::domain("need positive rollouts per estimate and at least two estimates"));
    }
    let env = env_spec.build();
    let gamma = env_spec.episode().gamma;
    let net = PolicyNet::compile(arch, &PolicyParams::new(params.to_vec()))?;
    let mut out = Vec::with_capacity(n_estimates);
    for est in 0..n_estimates {
        let mut trajectories = Vec::with_capacity(n_per_estimate);
        for r in 0..n_per_estimate {
            let rollout_seed =
                seeding::derive_seed(seed, &[tag::METRICS, 0xd6, est as u64, r as u64]);
            trajectories.push(rollout(env.as_ref(), &net, rollout_seed)?);
        }
        let emb = rff.embed_policy(&trajectories, gamma)?;
        out.push(map.project(&emb.psi)?);
    }
    Ok(out)
}

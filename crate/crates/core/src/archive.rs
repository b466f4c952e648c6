//! Annealing grid archive plus the passive elitist variant.
//!
//! The soft archive accepts a solution whenever its fitness beats the
//! cell's acceptance threshold `t_e`, then anneals the threshold toward the
//! fitness with learning rate alpha; this can replace a better occupant
//! with a worse one, which is what keeps the optimization signal smooth.
//! The elitist variant (`alpha = 1`, replace only on strictly greater
//! fitness) shadows every insertion and is the source of all reported
//! metrics and restart elites, so those stay monotone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveConfig<T: Real> {
    /// Descriptor dimension.
    pub dims: usize,
    pub cells_per_dim: usize,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Threshold learning rate.
    pub alpha: T,
    /// Floor for acceptance thresholds and offset for QD scores.
    pub min_objective: T,
}

impl<T: Real> ArchiveConfig<T> {
    /// Uniform grid over [-1.2, 1.2]^k with 10 cells per axis and the
    /// annealing rate 0.01.
    pub fn learned_default(dims: usize) -> Self {
        ArchiveConfig {
            dims,
            cells_per_dim: 10,
            lower: vec![T::of(-1.2); dims],
            upper: vec![T::of(1.2); dims],
            alpha: T::of(0.01),
            min_objective: T::zero(),
        }
    }

    /// Grid over explicit bounds, for hand-crafted descriptor spaces.
    pub fn with_bounds(lower: Vec<T>, upper: Vec<T>, cells_per_dim: usize, alpha: T) -> Self {
        ArchiveConfig {
            dims: lower.len(),
            cells_per_dim,
            lower,
            upper,
            alpha,
            min_objective: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.cells_per_dim == 0 {
            return Err(Error::config("archive dims and cells_per_dim must be positive"));
        }
        if self.lower.len() != self.dims || self.upper.len() != self.dims {
            return Err(Error::config("bound lengths must match dims"));
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(*lo < *hi) {
                return Err(Error::config("lower bounds must be below upper bounds"));
            }
        }
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(Error::config("alpha must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn total_cells(&self) -> usize {
        self.cells_per_dim.pow(self.dims as u32)
    }

    /// Grid index of a descriptor, per axis
    /// `floor((d - lower) / (upper - lower) * cells)` clamped to the edge
    /// cells; out-of-bounds descriptors clamp rather than vanish. Returns
    /// `None` for non-finite descriptors.
    pub fn cell_index(&self, descriptor: &[T]) -> Option<Vec<usize>> {
        if descriptor.len() != self.dims {
            return None;
        }
        let cells = T::from_usize(self.cells_per_dim).unwrap();
        let mut idx = Vec::with_capacity(self.dims);
        for axis in 0..self.dims {
            let d = descriptor[axis];
            if !d.is_finite_scalar() {
                return None;
            }
            let span = self.upper[axis] - self.lower[axis];
            let rel = (d - self.lower[axis]) / span * cells;
            let i = rel.floor().to_isize().unwrap_or(isize::MAX);
            let clamped = i.clamp(0, self.cells_per_dim as isize - 1) as usize;
            idx.push(clamped);
        }
        Some(idx)
    }

    /// Flattens a grid index tuple to a linear cell id (row-major).
    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0usize, |acc, &i| acc * self.cells_per_dim + i)
    }

    pub fn unflatten(&self, mut linear: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dims];
        for axis in (0..self.dims).rev() {
            idx[axis] = linear % self.cells_per_dim;
            linear /= self.cells_per_dim;
        }
        idx
    }
}

/// A stored elite: parameters, mean fitness, descriptor, embedding, and the
/// evaluation seeds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupant<T: Real> {
    pub params: Vec<T>,
    pub fitness: T,
    pub descriptor: Vec<T>,
    pub embedding: Vec<T>,
    pub eval_seeds: Vec<u64>,
}

/// Result of an insertion attempt: the improvement over the cell threshold
/// (the ranking signal) and whether the solution was stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertOutcome<T: Real> {
    pub improvement: T,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridArchive<T: Real> {
    pub config: ArchiveConfig<T>,
    cells: BTreeMap<usize, Occupant<T>>,
    thresholds: Vec<T>,
    pub insertions: u64,
    pub rejected_non_finite: u64,
}

impl<T: Real> GridArchive<T> {
    pub fn new(config: ArchiveConfig<T>) -> Result<Self> {
        config.validate()?;
        let thresholds = vec![config.min_objective; config.total_cells()];
        Ok(GridArchive { config, cells: BTreeMap::new(), thresholds, insertions: 0, rejected_non_finite: 0 })
    }

    /// Elitist variant: thresholds track the occupant fitness exactly, so
    /// a cell only ever improves.
    pub fn elitist(mut config: ArchiveConfig<T>) -> Result<Self> {
        config.alpha = T::one();
        GridArchive::new(config)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn threshold(&self, linear_cell: usize) -> T {
        self.thresholds[linear_cell]
    }

    /// Occupants in deterministic (linear cell id) order.
    pub fn occupants(&self) -> impl Iterator<Item = (usize, &Occupant<T>)> {
        self.cells.iter().map(|(k, v)| (*k, v))
    }

    pub fn get(&self, linear_cell: usize) -> Option<&Occupant<T>> {
        self.cells.get(&linear_cell)
    }

    /// Attempts to insert. Always returns the improvement `f - t_e`;
    /// non-finite fitness or descriptors are rejected with a negative
    /// infinity sentinel so they rank last.
    pub fn insert(&mut self, occupant: Occupant<T>) -> InsertOutcome<T> {
        self.insertions += 1;
        if !occupant.fitness.is_finite_scalar() {
            self.rejected_non_finite += 1;
            return InsertOutcome { improvement: -T::of(f64::INFINITY), accepted: false };
        }
        let Some(idx) = self.config.cell_index(&occupant.descriptor) else {
            self.rejected_non_finite += 1;
            return InsertOutcome { improvement: -T::of(f64::INFINITY), accepted: false };
        };
        let cell = self.config.flatten(&idx);
        let t_e = self.thresholds[cell];
        let f = occupant.fitness;
        let improvement = f - t_e;
        if f > t_e {
            self.cells.insert(cell, occupant);
            let alpha = self.config.alpha;
            self.thresholds[cell] = (T::one() - alpha) * t_e + alpha * f;
            InsertOutcome { improvement, accepted: true }
        } else {
            InsertOutcome { improvement, accepted: false }
        }
    }

    /// Sum of `fitness - min_objective` over occupied cells.
    pub fn qd_score(&self) -> T {
        self.cells
            .values()
            .map(|o| o.fitness - self.config.min_objective)
            .fold(T::zero(), |a, b| a + b)
    }

    /// Occupied fraction of the grid.
    pub fn coverage(&self) -> T {
        T::from_usize(self.cells.len()).unwrap() / T::from_usize(self.config.total_cells()).unwrap()
    }

    pub fn best_fitness(&self) -> Option<T> {
        self.cells.values().map(|o| o.fitness).fold(None, |acc, f| match acc {
            None => Some(f),
            Some(b) => Some(b.max(f)),
        })
    }

    pub fn mean_fitness(&self) -> Option<T> {
        if self.cells.is_empty() {
            return None;
        }
        let total: T = self.cells.values().map(|o| o.fitness).sum();
        Some(total / T::from_usize(self.cells.len()).unwrap())
    }

    /// Rebuilds the archive after a descriptor-map change: thresholds reset
    /// to `min_objective`, every occupant is re-projected via `remap` (its
    /// stored embedding decides the new descriptor) and re-inserted through
    /// the standard rule. Collision losers are discarded. Occupants are
    /// processed in cell order, so rebuilds are deterministic.
    pub fn rebuild(&self, remap: impl Fn(&Occupant<T>) -> Vec<T>) -> Result<GridArchive<T>> {
        let mut fresh = GridArchive::new(self.config.clone())?;
        for (_, occupant) in self.occupants() {
            let mut moved = occupant.clone();
            moved.descriptor = remap(occupant);
            fresh.insert(moved);
        }
        Ok(fresh)
    }
}

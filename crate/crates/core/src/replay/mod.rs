//! Capacity-bounded experience replay with proportional prioritization.
//!
//! Entry `k` is drawn with probability `p_k = m_k / Σ_j m_j` where the mass is
//! `m_k = priority_k^α` and `priority_k = |δ_k| + ε_p`. Each draw carries the
//! importance-sampling weight `1 / (N p_k)^β`, `N` being the number of stored
//! entries. `α = 0` is uniform replay.

mod sum_tree;

pub use sum_tree::SumTree;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Stable handle to a pushed entry. Handles of evicted entries go stale and
/// are ignored by [`PrioritizedBuffer::update_priorities`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryId(u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Fraction of `capacity` that must be stored before sampling is allowed.
    pub min_fill: f64,
    pub priority_floor: f64,
    /// Divide IS weights by the batch maximum. Off by default: the weights
    /// are used exactly as `1 / (N p_k)^β`.
    pub normalize_weights: bool,
}

impl ReplayConfig {
    pub fn new(capacity: usize, alpha: f64, beta: f64) -> Self {
        ReplayConfig { capacity, alpha, beta, min_fill: 0.2, priority_floor: 1e-6, normalize_weights: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() || self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::config("replay α and β must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.min_fill) {
            return Err(Error::config("min_fill must lie in [0, 1]"));
        }
        if self.priority_floor.is_nan() || self.priority_floor <= 0.0 {
            return Err(Error::config("priority floor must be positive"));
        }
        Ok(())
    }
}

/// One sampled minibatch.
#[derive(Debug)]
pub struct Batch<'a, T> {
    pub entries: Vec<&'a T>,
    pub weights: Vec<f64>,
    pub ids: Vec<EntryId>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub stored: usize,
    pub capacity: usize,
    pub fill: f64,
    /// Counts of priorities per decade: bucket `i` holds priorities in
    /// `[10^(i-7), 10^(i-6))`, with the ends open.
    pub priority_histogram: Vec<u64>,
}

pub const HISTOGRAM_DECADES: usize = 10;

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer<T> {
    cfg: ReplayConfig,
    items: Vec<T>,
    priorities: Vec<f64>,
    tree: SumTree,
    next_id: u64,
    node_visits: u64,
    draws: u64,
}

impl<T> PrioritizedBuffer<T> {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PrioritizedBuffer {
            cfg,
            items: Vec::with_capacity(cfg.capacity.min(1 << 20)),
            priorities: Vec::with_capacity(cfg.capacity.min(1 << 20)),
            tree: SumTree::new(cfg.capacity),
            next_id: 0,
            node_visits: 0,
            draws: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn fill_fraction(&self) -> f64 {
        self.len() as f64 / self.cfg.capacity as f64
    }

    fn required(&self) -> usize {
        ((self.cfg.min_fill * self.cfg.capacity as f64).ceil() as usize).max(1)
    }

    pub fn can_sample(&self) -> bool {
        self.len() >= self.required()
    }

    fn mass(&self, priority: f64) -> f64 {
        if self.cfg.alpha == 0.0 {
            1.0
        } else {
            priority.powf(self.cfg.alpha)
        }
    }

    fn priority_of(&self, td_error: f64) -> f64 {
        let p = td_error.abs() + self.cfg.priority_floor;
        // a non-finite error must not poison the tree; treat it as the floor
        if p.is_finite() {
            p
        } else {
            self.cfg.priority_floor
        }
    }

    fn slot(&self, id: EntryId) -> Option<usize> {
        let cap = self.cfg.capacity as u64;
        (id.0 < self.next_id && id.0 + cap >= self.next_id).then_some((id.0 % cap) as usize)
    }

    /// Store `item` with priority `|initial_td_error| + ε_p`, evicting the
    /// oldest entry when full.
    pub fn push(&mut self, item: T, initial_td_error: f64) -> EntryId {
        let id = EntryId(self.next_id);
        let slot = (self.next_id % self.cfg.capacity as u64) as usize;
        let priority = self.priority_of(initial_td_error);
        if slot == self.items.len() {
            self.items.push(item);
            self.priorities.push(priority);
        } else {
            self.items[slot] = item;
            self.priorities[slot] = priority;
        }
        self.tree.set(slot, self.mass(priority));
        self.next_id += 1;
        id
    }

    pub fn get(&self, id: EntryId) -> Option<&T> {
        self.slot(id).map(|s| &self.items[s])
    }

    pub fn priority(&self, id: EntryId) -> Option<f64> {
        self.slot(id).map(|s| self.priorities[s])
    }

    /// Current sampling probability `p_k` of an entry.
    pub fn probability(&self, id: EntryId) -> Option<f64> {
        self.slot(id).map(|s| self.tree.get(s) / self.tree.total())
    }

    /// Sum of all sampling masses as held by the tree root.
    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    /// Brute-force `Σ priority^α`, independent of the tree.
    pub fn brute_force_mass(&self) -> f64 {
        self.priorities.iter().map(|&p| self.mass(p)).sum()
    }

    /// Stratified proportional sampling of `batch` entries: the total mass is
    /// split into `batch` equal strata and one point is drawn in each.
    pub fn sample<R: Rng + ?Sized>(&mut self, batch: usize, rng: &mut R) -> Result<Batch<'_, T>> {
        if batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !self.can_sample() {
            return Err(Error::Underfilled { stored: self.len(), required: self.required() });
        }
        let total = self.tree.total();
        let stratum = total / batch as f64;
        let n = self.len() as f64;
        let first_id = self.next_id - self.len() as u64;
        let cap = self.cfg.capacity as u64;

        let mut slots = Vec::with_capacity(batch);
        for i in 0..batch {
            let point = (i as f64 + rng.gen::<f64>()) * stratum;
            let (slot, visits) = self.tree.find(point);
            self.node_visits += visits as u64;
            self.draws += 1;
            slots.push(slot.min(self.len() - 1));
        }

        let mut out = Batch {
            entries: Vec::with_capacity(batch),
            weights: Vec::with_capacity(batch),
            ids: Vec::with_capacity(batch),
            probabilities: Vec::with_capacity(batch),
        };
        for slot in slots {
            let mass = self.tree.get(slot);
            // (N p_k)^-β written as (total / (N m_k))^β so uniform masses give exactly 1
            let weight = (total / (n * mass)).powf(self.cfg.beta);
            // recover the id of whatever occupies the slot now
            let offset = (slot as u64 + cap - first_id % cap) % cap;
            out.entries.push(&self.items[slot]);
            out.weights.push(weight);
            out.ids.push(EntryId(first_id + offset));
            out.probabilities.push(mass / total);
        }
        if self.cfg.normalize_weights {
            let max = out.weights.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                out.weights.iter_mut().for_each(|w| *w /= max);
            }
        }
        Ok(out)
    }

    /// Refresh priorities to `|δ_k| + ε_p`. Stale ids are ignored.
    pub fn update_priorities(&mut self, ids: &[EntryId], td_errors: &[f64]) {
        for (&id, &delta) in ids.iter().zip(td_errors) {
            if let Some(slot) = self.slot(id) {
                let p = self.priority_of(delta);
                self.priorities[slot] = p;
                self.tree.set(slot, self.mass(p));
            }
        }
    }

    /// Average number of tree nodes visited per draw so far.
    pub fn mean_visits_per_draw(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.node_visits as f64 / self.draws as f64
        }
    }

    /// Upper bound on visits per draw: the tree depth.
    pub fn tree_depth(&self) -> usize {
        self.tree.capacity().trailing_zeros() as usize
    }

    pub fn stats(&self) -> BufferStats {
        let mut hist = vec![0u64; HISTOGRAM_DECADES];
        for &p in &self.priorities {
            let bucket = (p.log10().floor() + 7.0).clamp(0.0, (HISTOGRAM_DECADES - 1) as f64) as usize;
            hist[bucket] += 1;
        }
        BufferStats {
            stored: self.len(),
            capacity: self.cfg.capacity,
            fill: self.fill_fraction(),
            priority_histogram: hist,
        }
    }
}

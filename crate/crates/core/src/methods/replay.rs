//! Budgeted, task-balanced rehearsal memory.

use serde::{Deserialize, Serialize};

use crate::data::preprocess::{write_standardized, NormStats};
use crate::rng::{self, Rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    #[default]
    Float32,
    Uint8,
}

/// Images that fit in the memory of `param_overhead` 32-bit values.
/// Eight-bit pixels take a quarter of the bytes, so the division is done
/// on four times the budget.
pub fn capacity_from_overhead(param_overhead: usize, floats_per_image: usize, compression: Compression) -> usize {
    let per = floats_per_image.max(1);
    match compression {
        Compression::Float32 => param_overhead / per,
        Compression::Uint8 => 4 * param_overhead / per,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredPixels {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// One remembered example: pre-normalization pixels (already permuted for
/// permuted tasks), the statistics to normalize them with, its source class
/// and 1-based task.
#[derive(Debug, Clone, PartialEq)]
pub struct Stored {
    pub pixels: StoredPixels,
    pub stats: NormStats,
    pub class: usize,
    pub task: usize,
}

impl Stored {
    pub fn new(raw: &[f32], stats: NormStats, class: usize, task: usize, compression: Compression) -> Self {
        let pixels = match compression {
            Compression::Float32 => StoredPixels::F32(raw.to_vec()),
            Compression::Uint8 => StoredPixels::U8(raw.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()),
        };
        Stored { pixels, stats, class, task }
    }

    /// Pre-normalization values in `[0, 1]`.
    pub fn raw(&self) -> Vec<f32> {
        match &self.pixels {
            StoredPixels::F32(v) => v.clone(),
            StoredPixels::U8(v) => v.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// Writes the normalized model input into `out`.
    pub fn write_input(&self, out: &mut [f32]) {
        write_standardized(&self.raw(), self.stats, None, out);
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    compression: Compression,
    slots: Vec<Vec<Stored>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, compression: Compression) -> Self {
        ReplayBuffer {
            capacity,
            compression,
            slots: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn compression(&self) -> Compression {
        self.compression
    }

    pub fn tasks_seen(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot_sizes(&self) -> Vec<usize> {
        self.slots.iter().map(Vec::len).collect()
    }

    pub fn slots(&self) -> &[Vec<Stored>] {
        &self.slots
    }

    /// Share of slot `i` when `tasks` tasks are stored: the capacity split
    /// evenly, the remainder going to the earliest tasks.
    pub fn quota(&self, tasks: usize, i: usize) -> usize {
        self.capacity / tasks + usize::from(i < self.capacity % tasks)
    }

    /// Registers a finished task with `candidates` examples. Existing slots
    /// shrink to their new quota by random eviction; the new slot is filled
    /// by sampling without replacement, `fetch` materializing each pick.
    pub fn update(&mut self, candidates: usize, mut fetch: impl FnMut(usize) -> Stored, rng: &mut StreamRng) {
        if self.capacity == 0 {
            log::warn!("replay buffer has zero capacity; rehearsal degenerates to fine-tuning");
            self.slots.push(Vec::new());
            return;
        }
        let tasks = self.slots.len() + 1;
        for i in 0..self.slots.len() {
            let q = self.quota(tasks, i);
            let slot = &mut self.slots[i];
            if slot.len() > q {
                let mut keep = rng::sample_without_replacement(rng, slot.len(), q);
                keep.sort_unstable();
                let old = std::mem::take(slot);
                let mut k = keep.into_iter().peekable();
                for (j, item) in old.into_iter().enumerate() {
                    if k.peek() == Some(&j) {
                        slot.push(item);
                        k.next();
                    }
                }
            }
        }
        let q = self.quota(tasks, tasks - 1);
        let picks = rng::sample_without_replacement(rng, candidates, q);
        self.slots.push(picks.into_iter().map(&mut fetch).collect());
    }

    /// `k` stored examples drawn uniformly: without replacement when the
    /// buffer holds at least `k`, with replacement otherwise.
    pub fn sample(&self, k: usize, rng: &mut StreamRng) -> Vec<&Stored> {
        let flat: Vec<&Stored> = self.slots.iter().flatten().collect();
        if flat.is_empty() {
            return Vec::new();
        }
        if flat.len() >= k {
            rng::sample_without_replacement(rng, flat.len(), k).into_iter().map(|i| flat[i]).collect()
        } else {
            (0..k).map(|_| flat[rng.random_range(0..flat.len())]).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn item(task: usize, j: usize) -> Stored {
        Stored::new(&[j as f32 / 1000.0], NormStats::IDENTITY, j % 2, task, Compression::Float32)
    }

    #[test]
    fn capacities() {
        assert_eq!(capacity_from_overhead(1_139_200, 1024, Compression::Float32), 1112);
        assert_eq!(capacity_from_overhead(1_139_200, 1024, Compression::Uint8), 4450);
        assert_eq!(capacity_from_overhead(4_048_000, 1024, Compression::Float32), 3953);
        assert_eq!(capacity_from_overhead(4_048_000, 1024, Compression::Uint8), 15812);
    }

    #[test]
    fn three_tasks_balance() {
        let mut rng = rng::stream(0, Stream::Buffer);
        let mut b = ReplayBuffer::new(1112, Compression::Float32);
        for t in 1..=3 {
            b.update(12_000, |j| item(t, j), &mut rng);
        }
        assert_eq!(b.slot_sizes(), vec![371, 371, 370]);
        assert!(b.slots().iter().enumerate().all(|(i, s)| s.iter().all(|x| x.task == i + 1)));
    }

    #[test]
    fn uint8_round_trip_within_quantum() {
        let raw: Vec<f32> = (0..50).map(|i| i as f32 / 49.0).collect();
        let s = Stored::new(&raw, NormStats::IDENTITY, 0, 1, Compression::Uint8);
        assert!(s.raw().iter().zip(&raw).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-7));
    }

    #[test]
    fn small_buffer_samples_with_replacement() {
        let mut rng = rng::stream(1, Stream::Buffer);
        let mut b = ReplayBuffer::new(10, Compression::Float32);
        assert!(b.sample(64, &mut rng).is_empty());
        b.update(100, |j| item(1, j), &mut rng);
        assert_eq!(b.sample(64, &mut rng).len(), 64);
    }
}

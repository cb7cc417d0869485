//! Per-worker experience history with class-indexed sampling.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::maze::{Action, AngleCode, MazeSpec, Observation, Pose};
use crate::map_interp::RewardClass;
use crate::numerics::Grid2D;

/// Everything the off-policy losses need about one perception step.
#[derive(Clone, Debug)]
pub struct ExperienceFrame {
    /// First-person view; absent when position comes from ground truth.
    pub obs: Option<Arc<Observation>>,
    pub angle: AngleCode,
    pub last_action: Option<Action>,
    pub last_reward: f64,
    pub class: RewardClass,
    /// Wall offset of the step that produced `last_reward`, if one was hit.
    pub contact: Option<(isize, isize)>,
    pub pose: Pose,
    pub true_cell: usize,
    pub true_coords: (f64, f64),
    pub maze: Arc<MazeSpec>,
    /// Map image of `maze` (raster with the target mark).
    pub map_image: Arc<Grid2D>,
    /// Belief after this step, as computed while acting.
    pub belief: Arc<Vec<f64>>,
}

impl ExperienceFrame {
    pub fn maze_id(&self) -> (usize, u64) {
        (self.maze.width(), self.maze.seed())
    }

    /// Offset from the believed cell to where the reward arose.
    pub fn reward_offset(&self) -> (isize, isize) {
        match self.class {
            RewardClass::Negative => self.contact.unwrap_or((0, 0)),
            _ => (0, 0),
        }
    }
}

/// Fixed-capacity ring buffer; the oldest frame is evicted first.
#[derive(Clone, Debug)]
pub struct ExperienceHistory {
    capacity: usize,
    slots: Vec<ExperienceFrame>,
    head: usize,
    pushed: u64,
    members: [Vec<usize>; 3],
    // position of each slot inside its class list
    pos: Vec<usize>,
}

impl ExperienceHistory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        ExperienceHistory {
            capacity,
            slots: Vec::with_capacity(capacity.min(4096)),
            head: 0,
            pushed: 0,
            members: Default::default(),
            pos: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Frames pushed since creation, including evicted ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, frame: ExperienceFrame) {
        let class = frame.class.index();
        let slot = if self.slots.len() < self.capacity {
            self.slots.push(frame);
            self.pos.push(0);
            self.slots.len() - 1
        } else {
            let slot = self.head;
            self.remove_member(slot);
            self.slots[slot] = frame;
            slot
        };
        self.pos[slot] = self.members[class].len();
        self.members[class].push(slot);
        self.head = (slot + 1) % self.capacity;
        self.pushed += 1;
    }

    fn remove_member(&mut self, slot: usize) {
        let list = &mut self.members[self.slots[slot].class.index()];
        let at = self.pos[slot];
        list.swap_remove(at);
        if let Some(&moved) = list.get(at) {
            self.pos[moved] = at;
        }
    }

    /// Frames from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &ExperienceFrame> {
        let split = if self.slots.len() < self.capacity { 0 } else { self.head };
        self.slots[split..].iter().chain(self.slots[..split].iter())
    }

    pub fn newest(&self) -> Option<&ExperienceFrame> {
        self.slots.get((self.head + self.capacity - 1) % self.capacity)
    }

    pub fn class_count(&self, class: RewardClass) -> usize {
        self.members[class.index()].len()
    }

    /// Checks that the class lists partition the occupied slots.
    pub fn indices_consistent(&self) -> bool {
        let mut seen = vec![false; self.slots.len()];
        for (k, list) in self.members.iter().enumerate() {
            for (at, &slot) in list.iter().enumerate() {
                if slot >= self.slots.len() || seen[slot] || self.slots[slot].class.index() != k || self.pos[slot] != at {
                    return false;
                }
                seen[slot] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `n` frames drawn uniformly: without replacement when the history holds
    /// at least `n`, with replacement otherwise.
    pub fn sample_uniform(&self, n: usize, rng: &mut impl Rng) -> Vec<&ExperienceFrame> {
        let len = self.slots.len();
        if len == 0 {
            return Vec::new();
        }
        if len >= n {
            index::sample(rng, len, n).into_iter().map(|i| &self.slots[i]).collect()
        } else {
            (0..n).map(|_| &self.slots[rng.gen_range(0..len)]).collect()
        }
    }

    /// `n` frames, each drawn by picking a reward class uniformly among the
    /// classes present and then a uniform member of it.
    pub fn sample_reward_skewed(&self, n: usize, rng: &mut impl Rng) -> Vec<&ExperienceFrame> {
        let present: Vec<&Vec<usize>> = self.members.iter().filter(|m| !m.is_empty()).collect();
        if present.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let list = present[rng.gen_range(0..present.len())];
                &self.slots[list[rng.gen_range(0..list.len())]]
            })
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::maze::{discretize_angle, generate_maze};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn frame(tag: usize, class: RewardClass) -> ExperienceFrame {
        let maze = Arc::new(generate_maze(5, 1).unwrap());
        ExperienceFrame {
            obs: None,
            angle: discretize_angle(0.0),
            last_action: None,
            last_reward: tag as f64,
            class,
            contact: None,
            pose: Pose { row: 4.5, col: 4.5, heading: 0.0, vel: (0.0, 0.0) },
            true_cell: tag,
            true_coords: (4.5, 4.5),
            map_image: Arc::new(crate::maze::map_image(&maze)),
            maze,
            belief: Arc::new(vec![]),
        }
    }

    fn tag(f: &ExperienceFrame) -> usize {
        f.true_cell
    }

    #[test]
    fn evicts_oldest_and_keeps_capacity() {
        let mut h = ExperienceHistory::new(5);
        for i in 0..12 {
            let class = RewardClass::ALL[i % 3];
            h.push(frame(i, class));
            assert!(h.len() <= 5);
            assert!(h.indices_consistent());
            assert_eq!(tag(h.newest().unwrap()), i);
        }
        assert_eq!(h.iter().map(tag).collect::<Vec<_>>(), vec![7, 8, 9, 10, 11]);
        assert_eq!(h.pushed(), 12);
        let total: usize = RewardClass::ALL.iter().map(|&c| h.class_count(c)).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn uniform_exact_size_is_permutation() {
        let mut h = ExperienceHistory::new(100);
        for i in 0..20 {
            h.push(frame(i, RewardClass::Zero));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut got: Vec<usize> = h.sample_uniform(20, &mut rng).into_iter().map(tag).collect();
        got.sort_unstable();
        assert_eq!(got, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_small_history_uses_replacement() {
        let mut h = ExperienceHistory::new(100);
        for i in 0..3 {
            h.push(frame(i, RewardClass::Zero));
        }
        let s = h.sample_uniform(20, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|f| tag(f) < 3));
        assert!(ExperienceHistory::new(4).sample_uniform(20, &mut ChaCha8Rng::seed_from_u64(2)).is_empty());
    }

    #[test]
    fn uniform_inclusion_frequencies() {
        let mut h = ExperienceHistory::new(50);
        for i in 0..50 {
            h.push(frame(i, RewardClass::Zero));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut hits = vec![0usize; 50];
        for _ in 0..draws {
            for f in h.sample_uniform(20, &mut rng) {
                hits[tag(f)] += 1;
            }
        }
        // inclusion probability 20/50 for every frame
        for &k in &hits {
            let p = k as f64 / draws as f64;
            assert!((p - 0.4).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn skewed_balances_classes() {
        let mut h = ExperienceHistory::new(2000);
        for i in 0..1000 {
            let class = match i {
                0..=9 => RewardClass::Positive,
                10..=99 => RewardClass::Negative,
                _ => RewardClass::Zero,
            };
            h.push(frame(i, class));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            for f in h.sample_reward_skewed(20, &mut rng) {
                counts[f.class.index()] += 1;
            }
        }
        for c in counts {
            let mean = c as f64 / draws as f64;
            assert!((mean - 20.0 / 3.0).abs() < 0.1, "{counts:?}");
        }
    }

    #[test]
    fn skewed_single_class() {
        let mut h = ExperienceHistory::new(10);
        for i in 0..10 {
            h.push(frame(i, RewardClass::Zero));
        }
        let s = h.sample_reward_skewed(20, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|f| f.class == RewardClass::Zero));
    }
}

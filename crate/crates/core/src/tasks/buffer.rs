use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Example;
use crate::numkit::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayPolicy {
    /// Keep the first `m_B` examples seen per `(task, class)`.
    #[default]
    First,
    /// Reservoir sampling per `(task, class)`.
    Reservoir,
}

/// At most `m_b` examples per `(task, class)` key.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    m_b: usize,
    policy: ReplayPolicy,
    slots: BTreeMap<(usize, usize), Vec<Example>>,
    seen: BTreeMap<(usize, usize), usize>,
    rng: SeededRng,
}

impl ReplayBuffer {
    pub fn new(m_b: usize, policy: ReplayPolicy, rng: SeededRng) -> Self {
        Self {
            m_b,
            policy,
            slots: BTreeMap::new(),
            seen: BTreeMap::new(),
            rng,
        }
    }

    pub fn capacity_per_key(&self) -> usize {
        self.m_b
    }

    /// Returns whether the example is now stored.
    pub fn insert(&mut self, ex: Example) -> bool {
        let key = (ex.task_id, ex.label);
        let seen = self.seen.entry(key).or_insert(0);
        *seen += 1;
        let slot = self.slots.entry(key).or_default();
        if slot.len() < self.m_b {
            slot.push(ex);
            return true;
        }
        if self.policy == ReplayPolicy::Reservoir {
            let j = self.rng.random_range(0..*seen);
            if j < self.m_b {
                slot[j] = ex;
                return true;
            }
        }
        false
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tasks(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .slots
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| k.0)
            .collect();
        t.dedup();
        t
    }

    /// Stored items of one task in key order.
    pub fn items(&self, task: usize) -> Vec<&Example> {
        self.slots
            .range((task, 0)..(task + 1, 0))
            .flat_map(|(_, v)| v.iter())
            .collect()
    }

    pub fn items_for(&self, task: usize, class: usize) -> &[Example] {
        self.slots.get(&(task, class)).map_or(&[], Vec::as_slice)
    }

    /// Up to `per_task` items from each requested task, uniformly without
    /// replacement.
    pub fn sample(&self, per_task: usize, tasks: &[usize], rng: &mut SeededRng) -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for &t in tasks {
            let items = self.items(t);
            if items.is_empty() {
                return Err(Error::input(format!("replay buffer holds nothing for task {t}")));
            }
            let k = per_task.min(items.len());
            out.extend(index::sample(rng, items.len(), k).into_iter().map(|i| items[i].clone()));
        }
        Ok(out)
    }

    /// Up to `per_class` items from every class stored for `task`.
    pub fn sample_per_class(&self, per_class: usize, task: usize, rng: &mut SeededRng) -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for (_, v) in self.slots.range((task, 0)..(task + 1, 0)) {
            let k = per_class.min(v.len());
            out.extend(index::sample(rng, v.len(), k).into_iter().map(|i| v[i].clone()));
        }
        if out.is_empty() {
            return Err(Error::input(format!("replay buffer holds nothing for task {task}")));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Purpose;

    fn ex(task: usize, label: usize, v: f64) -> Example {
        Example {
            features: vec![v],
            label,
            task_id: task,
        }
    }

    fn buf(m_b: usize) -> ReplayBuffer {
        ReplayBuffer::new(m_b, ReplayPolicy::First, SeededRng::for_purpose(0, Purpose::Replay, 0))
    }

    #[test]
    fn keeps_first_per_key() {
        let mut b = buf(1);
        assert!(b.insert(ex(1, 3, 0.1)));
        assert!(!b.insert(ex(1, 3, 0.2)));
        assert_eq!(b.items_for(1, 3), &[ex(1, 3, 0.1)]);
    }

    #[test]
    fn full_pass_fills_one_per_class() {
        let mut b = buf(1);
        for t in 1..=20 {
            for i in 0..50 {
                b.insert(ex(t, i % 10, i as f64));
            }
            assert_eq!(b.items(t).len(), 10);
        }
        assert_eq!(b.len(), 200);
    }

    #[test]
    fn sample_returns_everything_when_short() {
        let mut b = buf(2);
        b.insert(ex(1, 0, 1.0));
        b.insert(ex(2, 0, 2.0));
        b.insert(ex(2, 1, 3.0));
        let mut rng = SeededRng::for_purpose(0, Purpose::Test, 0);
        assert_eq!(b.sample(1, &[1], &mut rng).unwrap(), vec![ex(1, 0, 1.0)]);
        let mut got = b.sample(10, &[2], &mut rng).unwrap();
        got.sort_by(|a, b| a.features[0].total_cmp(&b.features[0]));
        assert_eq!(got, vec![ex(2, 0, 2.0), ex(2, 1, 3.0)]);
        assert!(matches!(b.sample(1, &[3], &mut rng), Err(Error::Input(_))));
    }

    #[test]
    fn reservoir_respects_capacity() {
        let mut b = ReplayBuffer::new(3, ReplayPolicy::Reservoir, SeededRng::for_purpose(0, Purpose::Replay, 0));
        for i in 0..100 {
            b.insert(ex(1, i % 2, i as f64));
        }
        assert_eq!(b.items_for(1, 0).len(), 3);
        assert_eq!(b.items_for(1, 1).len(), 3);
    }
}

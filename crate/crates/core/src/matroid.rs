use std::collections::VecDeque;

use crate::error::{EpasError, Result};

/// Independence oracle over the ground set `0..ground_size()`.
pub trait IndependenceOracle {
    fn ground_size(&self) -> usize;
    /// `set` holds distinct in-range elements.
    fn independent(&self, set: &[usize]) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatroidHandle {
    Uniform { ground: usize, rank: usize },
    /// Elements outside every part are loops.
    Partition { ground: usize, parts: Vec<Vec<usize>>, limits: Vec<usize> },
    /// Independent sets are the subsets of the listed maximal sets.
    Explicit { ground: usize, bases: Vec<Vec<usize>> },
    Truncated { inner: Box<MatroidHandle>, k: usize },
}

impl MatroidHandle {
    pub fn uniform(ground: usize, rank: usize) -> Self {
        MatroidHandle::Uniform { ground, rank }
    }

    pub fn partition(ground: usize, parts: Vec<Vec<usize>>, limits: Vec<usize>) -> Result<Self> {
        if parts.len() != limits.len() {
            return Err(EpasError::Contract(format!(
                "{} parts but {} limits",
                parts.len(),
                limits.len()
            )));
        }
        let mut seen = vec![false; ground];
        for part in &parts {
            for &e in part {
                if e >= ground {
                    return Err(EpasError::Contract(format!("element {e} outside ground of size {ground}")));
                }
                if std::mem::replace(&mut seen[e], true) {
                    return Err(EpasError::Contract(format!("element {e} appears in two parts")));
                }
            }
        }
        Ok(MatroidHandle::Partition { ground, parts, limits })
    }

    pub fn explicit(ground: usize, bases: Vec<Vec<usize>>) -> Result<Self> {
        if bases.iter().flatten().any(|&e| e >= ground) {
            return Err(EpasError::Contract("basis element outside ground".into()));
        }
        let bases = bases
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b.dedup();
                b
            })
            .collect();
        Ok(MatroidHandle::Explicit { ground, bases })
    }

    pub fn ground_size(&self) -> usize {
        match self {
            MatroidHandle::Uniform { ground, .. }
            | MatroidHandle::Partition { ground, .. }
            | MatroidHandle::Explicit { ground, .. } => *ground,
            MatroidHandle::Truncated { inner, .. } => inner.ground_size(),
        }
    }

    /// Oracle query with contract checking on the input set.
    pub fn is_independent(&self, set: &[usize]) -> Result<bool> {
        let g = self.ground_size();
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        if let Some(&e) = sorted.iter().find(|&&e| e >= g) {
            return Err(EpasError::Contract(format!("element {e} is not in the ground set")));
        }
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Ok(false);
        }
        Ok(self.independent(&sorted))
    }

    /// Size of a maximum independent set, found greedily.
    pub fn rank(&self) -> usize {
        let mut s = Vec::new();
        for e in 0..self.ground_size() {
            s.push(e);
            if !self.independent(&s) {
                s.pop();
            }
        }
        s.len()
    }
}

impl IndependenceOracle for MatroidHandle {
    fn ground_size(&self) -> usize {
        MatroidHandle::ground_size(self)
    }

    fn independent(&self, set: &[usize]) -> bool {
        match self {
            MatroidHandle::Uniform { rank, .. } => set.len() <= *rank,
            MatroidHandle::Partition { parts, limits, .. } => {
                let mut used = vec![0usize; parts.len()];
                for &e in set {
                    match parts.iter().position(|p| p.contains(&e)) {
                        Some(j) => {
                            used[j] += 1;
                            if used[j] > limits[j] {
                                return false;
                            }
                        }
                        None => return false,
                    }
                }
                true
            }
            MatroidHandle::Explicit { bases, .. } => {
                set.is_empty() || bases.iter().any(|b| set.iter().all(|e| b.binary_search(e).is_ok()))
            }
            MatroidHandle::Truncated { inner, k } => set.len() <= *k && inner.independent(set),
        }
    }
}

/// Restricts `m` to independent sets of size at most `k`.
pub fn truncate(m: &MatroidHandle, k: usize) -> MatroidHandle {
    MatroidHandle::Truncated { inner: Box::new(m.clone()), k }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intersection {
    /// Sorted maximum common independent set.
    pub set: Vec<usize>,
    pub rounds: usize,
}

fn with_swap(set: &[usize], out: Option<usize>, add: usize) -> Vec<usize> {
    let mut v: Vec<usize> = set.iter().copied().filter(|&e| Some(e) != out).collect();
    v.push(add);
    v
}

/// Maximum-cardinality common independent set by shortest augmenting paths
/// in the exchange graph. Ties are broken toward smaller elements.
pub fn matroid_intersection<A, B>(m1: &A, m2: &B) -> Result<Intersection>
where
    A: IndependenceOracle + ?Sized,
    B: IndependenceOracle + ?Sized,
{
    if m1.ground_size() != m2.ground_size() {
        return Err(EpasError::Contract(format!(
            "ground sets differ: {} vs {}",
            m1.ground_size(),
            m2.ground_size()
        )));
    }
    let n = m1.ground_size();
    let mut in_set = vec![false; n];
    let mut rounds = 0;
    loop {
        let current: Vec<usize> = (0..n).filter(|&e| in_set[e]).collect();
        let outside: Vec<usize> = (0..n).filter(|&e| !in_set[e]).collect();
        let is_sink: Vec<bool> = (0..n)
            .map(|e| !in_set[e] && m2.independent(&with_swap(&current, None, e)))
            .collect();
        let mut prev = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for &x in &outside {
            if m1.independent(&with_swap(&current, None, x)) {
                seen[x] = true;
                queue.push_back(x);
            }
        }
        let mut end = None;
        while let Some(u) = queue.pop_front() {
            if is_sink[u] {
                end = Some(u);
                break;
            }
            if in_set[u] {
                // y -> x when S - y + x is independent in the first matroid.
                for &x in &outside {
                    if !seen[x] && m1.independent(&with_swap(&current, Some(u), x)) {
                        seen[x] = true;
                        prev[x] = u;
                        queue.push_back(x);
                    }
                }
            } else {
                // x -> y when S - y + x is independent in the second matroid.
                for &y in &current {
                    if !seen[y] && m2.independent(&with_swap(&current, Some(y), u)) {
                        seen[y] = true;
                        prev[y] = u;
                        queue.push_back(y);
                    }
                }
            }
        }
        let Some(mut v) = end else {
            return Ok(Intersection { set: current, rounds });
        };
        loop {
            in_set[v] = !in_set[v];
            if prev[v] == usize::MAX {
                break;
            }
            v = prev[v];
        }
        rounds += 1;
    }
}

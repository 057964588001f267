//! Transition counts over the augmented state space `S ∪ {s0}`.

use crate::mdp::{Shape, Transition};

/// Per-`(h, s, a)` visit counts, plus a fixed prior mass `n0` on the
/// pseudo-state `s0`. Real transitions never land on `s0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCounts {
    shape: Shape,
    n0: f64,
    /// Dense `(h, s, a, s')` counts over the real states.
    counts: Vec<u32>,
    /// Real visits `n_h(s, a)`.
    totals: Vec<u32>,
    /// Destinations with a positive count, ascending, per `(h, s, a)`.
    support: Vec<Vec<u32>>,
}

impl PseudoCounts {
    pub fn new(shape: Shape, n0: f64) -> Self {
        let pairs = shape.horizon * shape.states * shape.actions;
        PseudoCounts {
            shape,
            n0,
            counts: vec![0; pairs * shape.states],
            totals: vec![0; pairs],
            support: vec![Vec::new(); pairs],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Index of the pseudo-state in augmented vectors.
    pub fn pseudo_state(&self) -> usize {
        self.shape.states
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn record(&mut self, tr: &Transition) {
        let i = self.shape.sa(tr.h, tr.s, tr.a);
        let c = &mut self.counts[i * self.shape.states + tr.next];
        if *c == 0 {
            let list = &mut self.support[i];
            let at = list.partition_point(|&x| (x as usize) < tr.next);
            list.insert(at, tr.next as u32);
        }
        *c += 1;
        self.totals[i] += 1;
    }

    /// `n_h(s' | s, a)` for a real destination.
    #[inline]
    pub fn count(&self, h: usize, s: usize, a: usize, next: usize) -> u32 {
        self.counts[self.shape.sa(h, s, a) * self.shape.states + next]
    }

    /// `n_h(s, a)`, real visits only.
    #[inline]
    pub fn visits(&self, h: usize, s: usize, a: usize) -> u32 {
        self.totals[self.shape.sa(h, s, a)]
    }

    /// `n_bar_h(s, a) = n_h(s, a) + n0`.
    #[inline]
    pub fn total(&self, h: usize, s: usize, a: usize) -> f64 {
        f64::from(self.visits(h, s, a)) + self.n0
    }

    /// Real destinations with positive count, ascending.
    #[inline]
    pub fn support(&self, h: usize, s: usize, a: usize) -> &[u32] {
        &self.support[self.shape.sa(h, s, a)]
    }

    /// Dense row of real counts `n_h(. | s, a)`.
    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[u32] {
        let i = self.shape.sa(h, s, a) * self.shape.states;
        &self.counts[i..i + self.shape.states]
    }

    /// Augmented count vector of length `S + 1`, pseudo-state last.
    pub fn augmented_row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let mut row: Vec<f64> = self.row(h, s, a).iter().map(|&c| f64::from(c)).collect();
        row.push(self.n0);
        row
    }

    /// Empirical next-state distribution, uniform when unvisited.
    pub fn empirical_row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let n = self.visits(h, s, a);
        if n == 0 {
            return vec![1.0 / self.shape.states as f64; self.shape.states];
        }
        self.row(h, s, a)
            .iter()
            .map(|&c| f64::from(c) / f64::from(n))
            .collect()
    }

    /// `p_hat . v`, with the uniform row for unvisited pairs.
    #[inline]
    pub fn empirical_dot(&self, h: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        let n = self.visits(h, s, a);
        if n == 0 {
            return v.iter().sum::<f64>() / v.len() as f64;
        }
        let row = self.row(h, s, a);
        let acc: f64 = self
            .support(h, s, a)
            .iter()
            .map(|&k| f64::from(row[k as usize]) * v[k as usize])
            .sum();
        acc / f64::from(n)
    }

    /// `Var_{p_hat}[v]`, zero for unvisited pairs.
    pub fn empirical_variance(&self, h: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        let n = self.visits(h, s, a);
        if n == 0 {
            return 0.0;
        }
        let mean = self.empirical_dot(h, s, a, v);
        let row = self.row(h, s, a);
        let acc: f64 = self
            .support(h, s, a)
            .iter()
            .map(|&k| {
                let d = v[k as usize] - mean;
                f64::from(row[k as usize]) * d * d
            })
            .sum();
        (acc / f64::from(n)).max(0.0)
    }
}

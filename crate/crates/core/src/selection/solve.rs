//! Binary labeling solvers.

use super::SelectionProblem;

/// Problems up to this many variables are solved exactly.
pub const EXACT_LIMIT: usize = 20;
const PRUNE_SLACK: f64 = 1e-9;
const IMPROVE_EPS: f64 = 1e-12;

/// Minimum-energy selection, as sorted variable indices.
///
/// Exact by branch and bound up to [`EXACT_LIMIT`] variables, otherwise
/// greedy insertion refined by single flips and pair swaps. Among labelings
/// of equal energy the one selecting lower indices wins.
pub fn solve(problem: &SelectionProblem) -> Vec<usize> {
    if problem.len() <= EXACT_LIMIT {
        branch_and_bound(problem)
    } else {
        local_search(problem)
    }
}

fn branch_and_bound(p: &SelectionProblem) -> Vec<usize> {
    let n = p.len();
    let dense = p.dense_pairwise();
    let forbidden = p.dense_forbidden();
    let mut search = Search {
        p,
        n,
        dense: &dense,
        forbidden: &forbidden,
        chosen: Vec::new(),
        best: Vec::new(),
        best_energy: 0.0,
    };
    search.recurse(0, 0.0);
    search.best
}

struct Search<'a> {
    p: &'a SelectionProblem,
    n: usize,
    dense: &'a [f64],
    forbidden: &'a [bool],
    chosen: Vec<usize>,
    best: Vec<usize>,
    best_energy: f64,
}

impl Search<'_> {
    fn pair(&self, i: usize, j: usize) -> f64 {
        self.dense[i * self.n + j]
    }

    fn blocked(&self, k: usize) -> bool {
        self.chosen.iter().any(|&j| self.forbidden[j * self.n + k])
    }

    /// Lower bound on what variables `from..` can still add.
    fn bound(&self, from: usize) -> f64 {
        let mut total = 0.0;
        for k in from..self.n {
            if self.blocked(k) {
                continue;
            }
            let mut best = self.p.unary[k];
            for &j in &self.chosen {
                best += self.pair(j, k);
            }
            for l in k + 1..self.n {
                best += self.pair(k, l).min(0.0);
            }
            total += best.min(0.0);
        }
        total
    }

    fn recurse(&mut self, k: usize, partial: f64) {
        if k == self.n {
            // Leaves use the canonical summation so energies compare exactly.
            let e = self.p.energy(&self.chosen);
            if e < self.best_energy {
                self.best_energy = e;
                self.best = self.chosen.clone();
            }
            return;
        }
        if partial + self.bound(k) > self.best_energy + PRUNE_SLACK {
            return;
        }
        if !self.blocked(k) {
            let mut gain = self.p.unary[k];
            for &j in &self.chosen {
                gain += self.pair(j, k);
            }
            self.chosen.push(k);
            self.recurse(k + 1, partial + gain);
            self.chosen.pop();
        }
        self.recurse(k + 1, partial);
    }
}

fn local_search(p: &SelectionProblem) -> Vec<usize> {
    let n = p.len();
    let dense = p.dense_pairwise();
    let forbidden = p.dense_forbidden();
    let mut on = vec![false; n];

    // Change in energy from adding k (ignoring k itself if already on).
    let add_gain = |on: &[bool], k: usize| -> Option<f64> {
        let mut g = p.unary[k];
        for j in 0..n {
            if on[j] && j != k {
                if forbidden[j * n + k] {
                    return None;
                }
                g += dense[j * n + k];
            }
        }
        Some(g)
    };

    loop {
        let mut best: Option<(f64, usize)> = None;
        for k in (0..n).filter(|&k| !on[k]) {
            if let Some(g) = add_gain(&on, k) {
                if g < -IMPROVE_EPS && best.is_none_or(|(bg, _)| g < bg) {
                    best = Some((g, k));
                }
            }
        }
        match best {
            Some((_, k)) => on[k] = true,
            None => break,
        }
    }

    loop {
        let mut improved = false;
        // single flips
        for k in 0..n {
            if on[k] {
                let g = add_gain(&on, k).expect("selected set is feasible");
                if g > IMPROVE_EPS {
                    on[k] = false;
                    improved = true;
                }
            } else if let Some(g) = add_gain(&on, k) {
                if g < -IMPROVE_EPS {
                    on[k] = true;
                    improved = true;
                }
            }
        }
        // swaps: drop i, add k
        'swap: for i in 0..n {
            if !on[i] {
                continue;
            }
            let drop = add_gain(&on, i).expect("selected set is feasible");
            on[i] = false;
            for k in 0..n {
                if on[k] || k == i {
                    continue;
                }
                if let Some(g) = add_gain(&on, k) {
                    if g - drop < -IMPROVE_EPS {
                        on[k] = true;
                        improved = true;
                        break 'swap;
                    }
                }
            }
            on[i] = true;
        }
        if !improved {
            break;
        }
    }
    let chosen: Vec<usize> = (0..n).filter(|&k| on[k]).collect();
    if p.energy(&chosen) <= 0.0 {
        chosen
    } else {
        Vec::new()
    }
}

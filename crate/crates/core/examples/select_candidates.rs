//! Solves a small candidate-selection problem and checks it by brute force.

use std::collections::BTreeMap;

use scene_mockup::selection::{solve, SelectionProblem};

fn main() {
    // candidates 0 and 1 overlap; 2 fits well next to 0
    let problem = SelectionProblem {
        unary: vec![-3.0, -2.5, 0.4, 1.5],
        pairwise: BTreeMap::from([((0, 2), -1.2), ((1, 3), -2.0)]),
        forbidden: vec![(0, 1)],
    };
    let chosen = solve(&problem);
    println!(
        "selected {chosen:?} with energy {:.2}",
        problem.energy(&chosen)
    );

    let n = problem.len();
    let best = (0u32..1 << n)
        .map(|m| problem.energy(&(0..n).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>()))
        .fold(f64::INFINITY, f64::min);
    println!("exhaustive minimum {best:.2}");
}

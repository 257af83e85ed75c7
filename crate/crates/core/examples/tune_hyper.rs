//! Random search over the detection and selection thresholds.

use scene_mockup::harness::{random_search, tune, ExperimentConfig, HyperRanges};

fn main() -> scene_mockup::Result<()> {
    // the search on its own, with a toy objective peaked at tau_u = 0.3
    let toy = random_search(50, 1, &HyperRanges::default(), |h| {
        Ok(-(h.tau_u - 0.3).abs())
    })?;
    println!(
        "toy optimum tau_u {:.3} after {} trials",
        toy.best.tau_u,
        toy.trials.len()
    );

    let config = ExperimentConfig {
        count_max: 3,
        // one chair per held-out scene loses half of its keypoints
        drop_fractions: vec![0.5],
        occluded_per_scene: Some(1),
        ..ExperimentConfig::default()
    };
    let result = tune(&config, 4, 2)?;
    for t in &result.trials {
        println!("{:?} -> LocAng F1 {:.3}", t.hyper, t.score);
    }
    println!("best {:?} ({:.3})", result.best, result.best_score);
    Ok(())
}

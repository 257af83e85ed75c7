//! A small occlusion-binned ablation: full pipeline against the runs
//! without pairwise terms and with a single selection round. One chair per
//! scene is degraded, and the thresholds admit heavily occluded fits.

use scene_mockup::harness::{run_experiment, Condition, ExperimentConfig};
use scene_mockup::selection::Hyper;

fn main() -> scene_mockup::Result<()> {
    let config = ExperimentConfig {
        hyper: Hyper::heavy_occlusion(),
        drop_fractions: vec![0.0, 0.75],
        occluded_per_scene: Some(1),
        scenes_per_bin: 12,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&config)?;
    println!(
        "template modes {}, mixture components {}",
        report.template_modes, report.gmm_components
    );
    for (b, bin) in report.bins.iter().enumerate() {
        println!(
            "drop {:.2}: {} objects, mean occlusion {:.2}",
            bin.drop_fraction, bin.objects, bin.mean_occlusion
        );
        for c in [
            Condition::Full,
            Condition::NoPairwise,
            Condition::SingleIteration,
        ] {
            let r = report.condition(b, c);
            let l = &r.pooled.locang;
            println!(
                "  {:<16} LocAng precision {:.3} recall {:.3} F1 {:.3}",
                c.name(),
                l.precision.unwrap_or(0.0),
                l.recall.unwrap_or(0.0),
                l.f1
            );
        }
    }
    Ok(())
}

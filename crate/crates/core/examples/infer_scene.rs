//! Recovers a partly occluded scene from its keypoint maps and scores the
//! result against the ground truth.

use scene_mockup::harness::{build_models, corpus, render_scene, ExperimentConfig, Layout};
use scene_mockup::io::SceneFile;
use scene_mockup::metrics::{evaluate, Thresholds};
use scene_mockup::selection::infer_scene;

fn main() -> scene_mockup::Result<()> {
    let config = ExperimentConfig {
        layouts: vec![Layout::Row],
        count_min: 4,
        count_max: 4,
        ..ExperimentConfig::default()
    };
    let models = build_models(&config)?;
    let truth = corpus(&config, &models.template, 1, 21)?.remove(0);

    let drops = [0.0, 0.5, 0.0, 0.0];
    let maps = render_scene(&truth, &models.template, config.sigma(), &drops, 21)?;
    let estimate = infer_scene(
        &maps,
        &truth.camera,
        &models.template,
        Some(&models.gmm),
        &config.inference(),
    )?;

    for o in &estimate.objects {
        println!(
            "round {}: t=({:+.2}, {:.2}) azimuth {:+.1} deg scale {:.2}",
            o.iteration,
            o.params.translation.x,
            o.params.translation.y,
            o.params.azimuth.to_degrees(),
            o.params.scale
        );
    }
    let result = SceneFile::from_estimate(&estimate, &truth.camera);
    let report = evaluate(&result.to_eval(), &truth.to_eval(), &Thresholds::default());
    println!(
        "{} of {} chairs found; LocAng F1 {:.2}, IoU3D F1 {:.2}",
        estimate.objects.len(),
        truth.objects.len(),
        report.locang.f1,
        report.iou3d.f1
    );
    Ok(())
}

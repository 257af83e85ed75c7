//! Scene comparison measures, occlusion scoring and a threshold sweep on
//! hand-made scenes.

use nalgebra::Vector3;
use scene_mockup::geometry::OrientedBox;
use scene_mockup::harness::default_camera;
use scene_mockup::metrics::{
    evaluate, occlusion_score, sweep_csv, threshold_sweep, EvalObject, EvalScene, Thresholds,
    DEFAULT_OCCLUSION_BINS,
};

fn chair(x: f64, z: f64, azimuth_deg: f64) -> EvalObject {
    EvalObject::new(OrientedBox::new(
        Vector3::new(x, 0.45, z),
        Vector3::new(0.25, 0.45, 0.25),
        azimuth_deg.to_radians(),
    ))
}

fn main() {
    let camera = default_camera((128, 128));
    let scene = |objects| EvalScene {
        objects,
        camera: camera.clone(),
        occluders: Vec::new(),
    };
    // the middle chair hides behind the first one
    let gt = scene(vec![
        chair(0.0, 3.0, 0.0),
        chair(0.05, 4.0, 10.0),
        chair(1.2, 3.5, 90.0),
    ]);
    // a shifted chair, one turned the wrong way and one missed
    let result = scene(vec![chair(0.1, 3.05, 5.0), chair(1.2, 3.5, 270.0)]);

    let report = evaluate(&result, &gt, &Thresholds::default());
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialises")
    );

    let occlusion = occlusion_score(&gt, 64, &DEFAULT_OCCLUSION_BINS);
    println!(
        "occlusion per chair {:?}, histogram {:?}",
        occlusion.per_object, occlusion.histogram
    );

    let sweep = threshold_sweep(&[(result, gt)], &[0.25, 0.5], &[15.0, 45.0, 180.0], 1);
    print!("{}", sweep_csv(&sweep));
}

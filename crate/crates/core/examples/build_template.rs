//! Builds a deformable chair template from a procedural database and
//! shows how its modes move the keypoints.

use scene_mockup::harness::chair_database;
use scene_mockup::template::build_template;

fn main() -> scene_mockup::Result<()> {
    let database = chair_database(40, 1);
    let template = build_template(&database)?;
    println!(
        "{} models, {} keypoints, {} modes explaining {:.1}% of the variance",
        template.database().len(),
        template.num_keypoints(),
        template.modes(),
        100.0 * template.variance_fraction()
    );
    for (m, l) in template.eigenvalues().iter().enumerate() {
        // one standard deviation along this mode
        let mut deform = vec![0.0; template.modes()];
        deform[m] = l.sqrt();
        let moved = template.instantiate(&deform);
        let shift = moved
            .iter()
            .zip(template.mean_shape())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        println!(
            "mode {m}: std {:.4}, largest keypoint shift {:.3} m",
            l.sqrt(),
            shift
        );
    }
    let coded = template.project(&database[0].keypoints);
    println!(
        "first model codes to {:?} (nearest: {:?})",
        coded.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>(),
        template.nearest_model(&coded)
    );
    Ok(())
}

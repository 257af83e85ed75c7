//! Learns the pairwise relative-pose mixture from generated arrangements.

use scene_mockup::harness::{
    default_camera, default_template, generate_scenes, ArrangementSpec, Layout,
};
use scene_mockup::scene_stats::{extract_pairs, fit_gmm, RelativePose, DEFAULT_DELTA_R};

fn main() -> scene_mockup::Result<()> {
    let template = default_template(40, 1)?;
    let camera = default_camera((128, 128));
    let mut placements = Vec::new();
    for (i, layout) in [Layout::Row, Layout::FacingPairs].into_iter().enumerate() {
        let spec = ArrangementSpec::new(layout, 2, 5, i as u64);
        for scene in generate_scenes(&spec, &template, &camera, 60)? {
            placements.push(scene.placements());
        }
    }
    let pairs = extract_pairs(&placements, DEFAULT_DELTA_R);
    let gmm = fit_gmm(&pairs, 4, 0)?;
    println!(
        "{} relative poses from {} scenes",
        pairs.len(),
        placements.len()
    );
    for c in gmm.components() {
        println!(
            "weight {:.3}  mean dx {:+.2} dz {:+.2} dtheta {:+.0} deg",
            c.weight,
            c.mean.x,
            c.mean.y,
            c.mean.z.to_degrees()
        );
    }

    // a neighbour one metre to the side is likely, one facing away is not
    for (label, x, z, t) in [("side by side", 0.6, 0.0, 0.0), ("odd", 0.3, 0.4, 2.0)] {
        let pose = RelativePose {
            delta_t: nalgebra::Vector2::new(x, z),
            delta_theta: t,
        };
        println!(
            "{label:>12}: density {:.3}, pair energy {:+.2}",
            gmm.density(&pose),
            gmm.pair_energy(&pose, 0.14)
        );
    }
    Ok(())
}

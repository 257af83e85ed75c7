//! Generates a scene, renders its keypoint maps with some keypoints
//! dropped, extracts detections and writes a `.kpm` file.

use scene_mockup::harness::{
    default_camera, default_template, generate_scenes, render_scene, ArrangementSpec, Layout,
};
use scene_mockup::io::{read_kpm_file, write_kpm_file};
use scene_mockup::keypoint_maps::{default_sigma, extract_locations};

fn main() -> scene_mockup::Result<()> {
    let template = default_template(40, 1)?;
    let camera = default_camera((128, 128));
    let spec = ArrangementSpec::new(Layout::RingAroundTable, 4, 4, 7);
    let scene = generate_scenes(&spec, &template, &camera, 1)?.remove(0);
    println!("{} chairs around a table", scene.objects.len());

    // the first chair loses half of its keypoints
    let mut drops = vec![0.0; scene.objects.len()];
    drops[0] = 0.5;
    let maps = render_scene(&scene, &template, default_sigma(128), &drops, 7)?;
    let locations = extract_locations(&maps, 0.25);
    println!(
        "{} detections over {} channels",
        locations.total(),
        maps.channels()
    );

    let path = std::env::temp_dir().join("scene_mockup_example.kpm");
    write_kpm_file(&path, &maps)?;
    let back = read_kpm_file(&path)?;
    println!(
        "wrote {} ({}x{}, sigma {})",
        path.display(),
        back.width(),
        back.height(),
        back.sigma()
    );
    Ok(())
}

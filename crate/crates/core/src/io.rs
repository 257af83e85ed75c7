//! Scene files and small file helpers shared by the CLI and the harness.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, OrientedBox, PlacementParams};
use crate::keypoint_maps::{read_kpm, write_kpm, KeypointMapStack};
use crate::metrics::{EvalObject, EvalScene};
use crate::selection::SceneEstimate;
use crate::template::TemplateModel;

/// One placed object in a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(flatten)]
    pub params: PlacementParams,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
}

impl SceneObject {
    /// Object for a placement of the template, with its box and nearest
    /// database model.
    pub fn from_template(params: PlacementParams, template: &TemplateModel) -> Self {
        let local = template.instantiate(&params.deform);
        Self {
            bbox: OrientedBox::from_keypoints(&local, &params),
            model_id: template.nearest_model(&params.deform).map(str::to_owned),
            params,
        }
    }
}

/// Scene description used both for ground truth and for inference output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub objects: Vec<SceneObject>,
    pub camera: Camera,
    #[serde(default)]
    pub iterations_used: usize,
    /// Non-object boxes that only block view rays.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occluders: Vec<OrientedBox>,
}

impl SceneFile {
    pub fn from_estimate(estimate: &SceneEstimate, camera: &Camera) -> Self {
        Self {
            objects: estimate
                .objects
                .iter()
                .map(|o| SceneObject {
                    params: o.params.clone(),
                    model_id: o.model_id.clone(),
                    bbox: o.bbox.clone(),
                })
                .collect(),
            camera: camera.clone(),
            iterations_used: estimate.iterations_used,
            occluders: Vec::new(),
        }
    }

    pub fn placements(&self) -> Vec<PlacementParams> {
        self.objects.iter().map(|o| o.params.clone()).collect()
    }

    pub fn to_eval(&self) -> EvalScene {
        EvalScene {
            objects: self
                .objects
                .iter()
                .map(|o| EvalObject {
                    bbox: o.bbox.clone(),
                    azimuth: o.params.azimuth,
                })
                .collect(),
            camera: self.camera.clone(),
            occluders: self.occluders.clone(),
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_kpm_file(path: &Path) -> Result<KeypointMapStack> {
    read_kpm(BufReader::new(File::open(path)?))
}

pub fn write_kpm_file(path: &Path, maps: &KeypointMapStack) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_kpm(maps, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads every `*.json` file in a directory, in file-name order.
pub fn read_json_dir<T: DeserializeOwned>(dir: &Path) -> Result<Vec<T>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .json files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_json(p)).collect()
}

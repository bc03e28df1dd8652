//! JSON model file.
//!
//! ```json
//! {"vertices": [[x,y,z], ...], "faces": [[a,b,c], ...],
//!  "joints": [{"parent": -1, "rest_translation": [x,y,z]}, ...],
//!  "weights": [[[joint, weight], ...], ...],
//!  "shape_dirs": [[[d_0, ..., d_B-1], [..], [..]], ...],
//!  "selectors": {"fingertips": [i, ...]}}
//! ```
//!
//! `parent` is −1 for the root. `rest_translation` is relative to the
//! parent joint. `weights` holds one list of `[joint, weight]` pairs per
//! vertex. `shape_dirs` is optional, indexed `[vertex][axis][beta]`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{Joint, SkinnedModel};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    parent: i64,
    rest_translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    joints: Vec<JointFile>,
    weights: Vec<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape_dirs: Option<Vec<[Vec<f64>; 3]>>,
    #[serde(default)]
    selectors: BTreeMap<String, Vec<usize>>,
}

pub fn model_from_json(text: &str) -> Result<SkinnedModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    let joints = file
        .joints
        .iter()
        .enumerate()
        .map(|(j, jf)| {
            let parent = match jf.parent {
                p if p < 0 => None,
                p => Some(p as usize),
            };
            if parent.is_none() && j != 0 {
                return Err(Error::InvalidModel(format!("joint {j} has no parent")));
            }
            Ok(Joint {
                parent,
                rest_translation: jf.rest_translation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let shape_dirs = match file.shape_dirs {
        None => None,
        Some(dirs) => {
            let b = dirs.first().map(|d| d[0].len()).unwrap_or(0);
            let mut flat = Vec::with_capacity(dirs.len() * 3 * b);
            for (v, per_axis) in dirs.iter().enumerate() {
                for axis in per_axis {
                    if axis.len() != b {
                        return Err(Error::InvalidModel(format!(
                            "shape_dirs for vertex {v} has {} coefficients, expected {b}",
                            axis.len()
                        )));
                    }
                    flat.extend_from_slice(axis);
                }
            }
            Some((b, flat))
        }
    };
    SkinnedModel::new(
        file.vertices.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
        file.faces,
        joints,
        file.weights,
        shape_dirs,
        file.selectors,
    )
}

pub fn model_to_json(model: &SkinnedModel) -> Result<String> {
    let b = model.num_betas();
    let shape_dirs = (b > 0).then(|| {
        model
            .shape_dirs()
            .chunks(3 * b)
            .map(|c| [c[..b].to_vec(), c[b..2 * b].to_vec(), c[2 * b..].to_vec()])
            .collect()
    });
    let file = ModelFile {
        vertices: model.rest_vertices().iter().map(|p| [p.x, p.y, p.z]).collect(),
        faces: model.faces().to_vec(),
        joints: model
            .joints()
            .iter()
            .map(|j| JointFile {
                parent: j.parent.map(|p| p as i64).unwrap_or(-1),
                rest_translation: j.rest_translation,
            })
            .collect(),
        weights: model.weights().to_vec(),
        shape_dirs,
        selectors: model
            .selectors()
            .iter()
            .map(|(k, v)| (k.clone(), v.indices().to_vec()))
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<SkinnedModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_model(model: &SkinnedModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(model)?)?;
    Ok(())
}

//! Scene data model: point cloud, object proposals, and posed camera views.
//!
//! Scenes are immutable after construction; every operation takes `&Scene`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Diagnostic, Error, Result};

pub const PATCH_SIZE: u32 = 16;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Dense per-pixel depth in meters; 0 means no reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimMismatch {
                context: "depth map".into(),
                expected: (width as usize) * (height as usize),
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Row-major real-valued matrix with explicit row/column counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureTable {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimMismatch {
                context: "feature table".into(),
                expected: rows * dim,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "feature table contains non-finite entry {bad}"
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// One posed RGB-D view with optional depth and per-patch features.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub view_id: String,
    pub intrinsics: Intrinsics,
    /// 4x4 world-to-camera transform, row-major.
    pub world_to_camera: [f64; 16],
    pub width: u32,
    pub height: u32,
    pub depth: Option<DepthMap>,
    pub patch_features: Option<FeatureTable>,
}

impl CameraView {
    /// Patch-grid dims for a given patch size, if it divides the image.
    pub fn patch_grid(&self, patch: u32) -> Option<(u32, u32)> {
        if patch == 0 || self.width % patch != 0 || self.height % patch != 0 {
            None
        } else {
            Some((self.width / patch, self.height / patch))
        }
    }
}

/// One object hypothesis: a sorted, unique subset of scene point indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectProposal {
    pub index: usize,
    pub point_indices: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub scene_id: String,
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub proposals: Vec<ObjectProposal>,
    pub views: Vec<CameraView>,
}

/// Axis-aligned box, the hull representation used for IoU scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn volume(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1]) * (self.max[2] - self.min[2])
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i] && self.min[i].is_finite() && self.max[i].is_finite())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

impl Scene {
    pub fn proposal(&self, index: usize) -> Result<&ObjectProposal> {
        self.proposals.get(index).ok_or(Error::InvalidProposal {
            index,
            count: self.proposals.len(),
        })
    }

    pub fn view(&self, view_id: &str) -> Option<&CameraView> {
        self.views.iter().find(|v| v.view_id == view_id)
    }

    /// Collects every invariant violation instead of stopping at the first.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let mut push = |file: &str, field: String, message: String| {
            diags.push(Diagnostic {
                file: file.to_string(),
                field,
                message,
            });
        };

        if self.scene_id.is_empty() {
            push("scene.json", "scene_id".into(), "must be non-empty".into());
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                push("points.bin", format!("row {i}"), "non-finite coordinate".into());
                break;
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                push(
                    "colors.bin",
                    "rows".into(),
                    format!("{} color rows for {} points", colors.len(), self.points.len()),
                );
            }
            if colors
                .iter()
                .any(|c| c.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0))
            {
                push("colors.bin", "values".into(), "colors must lie in [0,1]".into());
            }
        }

        for (i, prop) in self.proposals.iter().enumerate() {
            let field = format!("proposals[{i}].point_indices");
            if prop.index != i {
                push(
                    "scene.json",
                    format!("proposals[{i}].index"),
                    format!("expected {} (storage order), got {}", i, prop.index),
                );
            }
            if prop.point_indices.is_empty() {
                push("scene.json", field.clone(), "must be non-empty".into());
                continue;
            }
            if !prop.point_indices.windows(2).all(|w| w[0] < w[1]) {
                push(
                    "scene.json",
                    field.clone(),
                    "must be strictly increasing (sorted, unique)".into(),
                );
            }
            let max = *prop.point_indices.last().unwrap();
            if (max as usize) >= self.points.len() {
                push(
                    "scene.json",
                    field,
                    format!("point index {} >= point count {}", max, self.points.len()),
                );
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for view in &self.views {
            let vfile = format!("views/{}.json", view.view_id);
            if !seen.insert(view.view_id.clone()) {
                push("scene.json", "views".into(), format!("duplicate view id `{}`", view.view_id));
            }
            if !(view.intrinsics.fx > 0.0 && view.intrinsics.fy > 0.0) {
                push(&vfile, "intrinsics".into(), "fx and fy must be > 0".into());
            }
            if [view.intrinsics.fx, view.intrinsics.fy, view.intrinsics.cx, view.intrinsics.cy]
                .iter()
                .any(|v| !v.is_finite())
            {
                push(&vfile, "intrinsics".into(), "non-finite entry".into());
            }
            if view.world_to_camera.iter().any(|v| !v.is_finite()) {
                push(&vfile, "extrinsics".into(), "non-finite entry".into());
            }
            if view.width == 0 || view.height == 0 {
                push(&vfile, "width/height".into(), "must be > 0".into());
            }
            if let Some(depth) = &view.depth {
                if depth.width() != view.width || depth.height() != view.height {
                    push(
                        &format!("views/{}.depth.bin", view.view_id),
                        "dims".into(),
                        format!(
                            "depth {}x{} does not match view {}x{}",
                            depth.width(),
                            depth.height(),
                            view.width,
                            view.height
                        ),
                    );
                }
            }
            if let Some(pf) = &view.patch_features {
                let pfile = format!("views/{}.patch.bin", view.view_id);
                match view.patch_grid(PATCH_SIZE) {
                    None => push(
                        &vfile,
                        "width/height".into(),
                        format!("must be multiples of {PATCH_SIZE} when patch features are present"),
                    ),
                    Some((gw, gh)) => {
                        let expected = (gw as usize) * (gh as usize);
                        if pf.rows() != expected {
                            push(
                                &pfile,
                                "rows".into(),
                                format!("{} rows, expected {} for the patch grid", pf.rows(), expected),
                            );
                        }
                    }
                }
            }
        }
        diags
    }
}

/// Arithmetic mean of a proposal's points.
pub fn object_centroid(scene: &Scene, index: usize) -> Result<[f64; 3]> {
    let prop = scene.proposal(index)?;
    let mut sum = [0.0f64; 3];
    for &pi in &prop.point_indices {
        let p = scene.points[pi as usize];
        for k in 0..3 {
            sum[k] += p[k] as f64;
        }
    }
    let n = prop.point_indices.len() as f64;
    Ok([sum[0] / n, sum[1] / n, sum[2] / n])
}

/// Componentwise min/max hull of a proposal's points.
pub fn object_aabb(scene: &Scene, index: usize) -> Result<Aabb> {
    let prop = scene.proposal(index)?;
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &pi in &prop.point_indices {
        let p = scene.points[pi as usize];
        for k in 0..3 {
            min[k] = min[k].min(p[k] as f64);
            max[k] = max[k].max(p[k] as f64);
        }
    }
    Ok(Aabb { min, max })
}

/// In-memory collection of scenes keyed by scene id, used by evaluation.
#[derive(Debug, Default)]
pub struct SceneStore {
    scenes: BTreeMap<String, Scene>,
}

impl SceneStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every subdirectory of `dir` as a scene bundle.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        paths.sort();
        for path in paths {
            let scene = crate::bundle::load_scene(&path)?;
            store.insert(scene);
        }
        Ok(store)
    }

    pub fn insert(&mut self, scene: Scene) {
        self.scenes.insert(scene.scene_id.clone(), scene);
    }

    pub fn get(&self, scene_id: &str) -> Option<&Scene> {
        self.scenes.get(scene_id)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Scene)> {
        self.scenes.iter()
    }
}

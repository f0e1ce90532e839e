//! Scene bundle directory format.
//!
//! Layout:
//! - `scene.json` — scene id, proposal masks, view manifest
//! - `points.bin` — binary table, dim 3
//! - `colors.bin` — optional binary table, dim 3, values in [0,1]
//! - `views/<id>.json` — intrinsics, extrinsics, dims
//! - `views/<id>.depth.bin` — optional, rows = height, dim = width, meters, 0 = no reading
//! - `views/<id>.patch.bin` — optional feature table over the 16x16 patch grid
//!
//! Binary tables share one header: magic `CSPP`, u32 version (= 1), u32 rows,
//! u32 dim, then row-major little-endian f32.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    Aabb, CameraView, DepthMap, FeatureTable, Intrinsics, ObjectProposal, Scene,
};

pub const MAGIC: [u8; 4] = *b"CSPP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub rows: u32,
    pub dim: u32,
    pub data: Vec<f32>,
}

pub fn read_table(path: &Path) -> Result<RawTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated header (needs 16 bytes)"));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected {:?}", &bytes[0..4], MAGIC),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let rows = word(8);
    let dim = word(12);
    let expected = 16 + (rows as usize) * (dim as usize) * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {}", bytes.len(), expected),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawTable { rows, dim, data })
}

pub fn write_table(path: &Path, rows: u32, dim: u32, data: &[f32]) -> Result<()> {
    if data.len() != (rows as usize) * (dim as usize) {
        return Err(Error::DimMismatch {
            context: format!("write_table {}", path.display()),
            expected: (rows as usize) * (dim as usize),
            actual: data.len(),
        });
    }
    let mut bytes = Vec::with_capacity(16 + data.len() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&rows.to_le_bytes());
    bytes.extend_from_slice(&dim.to_le_bytes());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneManifest {
    scene_id: String,
    proposals: Vec<ProposalManifest>,
    views: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalManifest {
    point_indices: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ViewManifest {
    intrinsics: Intrinsics,
    /// 16 floats, row-major world-to-camera.
    extrinsics: Vec<f64>,
    width: u32,
    height: u32,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn points_from_table(table: RawTable, path: &Path) -> Result<Vec<[f32; 3]>> {
    if table.dim != 3 {
        return Err(Error::format(path, format!("dim must be 3, got {}", table.dim)));
    }
    Ok(table.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Loads and fully validates a scene bundle.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let manifest: SceneManifest = read_json(&dir.join("scene.json"))?;
    let points = points_from_table(read_table(&dir.join("points.bin"))?, &dir.join("points.bin"))?;

    let colors_path = dir.join("colors.bin");
    let colors = if colors_path.exists() {
        Some(points_from_table(read_table(&colors_path)?, &colors_path)?)
    } else {
        None
    };

    let proposals = manifest
        .proposals
        .into_iter()
        .enumerate()
        .map(|(index, p)| ObjectProposal {
            index,
            point_indices: p.point_indices,
        })
        .collect();

    let mut views = Vec::with_capacity(manifest.views.len());
    for view_id in &manifest.views {
        let vpath = dir.join("views").join(format!("{view_id}.json"));
        let vm: ViewManifest = read_json(&vpath)?;
        if vm.extrinsics.len() != 16 {
            return Err(Error::format(
                &vpath,
                format!("extrinsics must have 16 entries, got {}", vm.extrinsics.len()),
            ));
        }
        let mut world_to_camera = [0.0f64; 16];
        world_to_camera.copy_from_slice(&vm.extrinsics);

        let depth_path = dir.join("views").join(format!("{view_id}.depth.bin"));
        let depth = if depth_path.exists() {
            let t = read_table(&depth_path)?;
            Some(DepthMap::new(t.dim, t.rows, t.data)?)
        } else {
            None
        };

        let patch_path = dir.join("views").join(format!("{view_id}.patch.bin"));
        let patch_features = if patch_path.exists() {
            let t = read_table(&patch_path)?;
            Some(FeatureTable::new(t.rows as usize, t.dim as usize, t.data)?)
        } else {
            None
        };

        views.push(CameraView {
            view_id: view_id.clone(),
            intrinsics: vm.intrinsics,
            world_to_camera,
            width: vm.width,
            height: vm.height,
            depth,
            patch_features,
        });
    }

    let scene = Scene {
        scene_id: manifest.scene_id,
        points,
        colors,
        proposals,
        views,
    };
    let diags = scene.validate();
    if !diags.is_empty() {
        return Err(Error::Validation(diags));
    }
    Ok(scene)
}

/// Writes a scene as a bundle directory. Output bytes are deterministic.
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("views")).map_err(|e| Error::io(dir, e))?;

    let manifest = SceneManifest {
        scene_id: scene.scene_id.clone(),
        proposals: scene
            .proposals
            .iter()
            .map(|p| ProposalManifest {
                point_indices: p.point_indices.clone(),
            })
            .collect(),
        views: scene.views.iter().map(|v| v.view_id.clone()).collect(),
    };
    write_json(&dir.join("scene.json"), &manifest)?;

    let flat: Vec<f32> = scene.points.iter().flatten().copied().collect();
    write_table(&dir.join("points.bin"), scene.points.len() as u32, 3, &flat)?;

    if let Some(colors) = &scene.colors {
        let flat: Vec<f32> = colors.iter().flatten().copied().collect();
        write_table(&dir.join("colors.bin"), colors.len() as u32, 3, &flat)?;
    }

    for view in &scene.views {
        let vm = ViewManifest {
            intrinsics: view.intrinsics,
            extrinsics: view.world_to_camera.to_vec(),
            width: view.width,
            height: view.height,
        };
        write_json(&dir.join("views").join(format!("{}.json", view.view_id)), &vm)?;
        if let Some(depth) = &view.depth {
            write_table(
                &dir.join("views").join(format!("{}.depth.bin", view.view_id)),
                depth.height(),
                depth.width(),
                depth.data(),
            )?;
        }
        if let Some(pf) = &view.patch_features {
            write_table(
                &dir.join("views").join(format!("{}.patch.bin", view.view_id)),
                pf.rows() as u32,
                pf.dim() as u32,
                pf.data(),
            )?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Projector file: binary table with rows = D_out, dim = D_in + 1 (last column is bias).
pub fn load_projector_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
    let t = read_table(path)?;
    if t.dim < 2 {
        return Err(Error::format(path, "projector table needs dim >= 2 (inputs + bias column)"));
    }
    let dim_out = t.rows as usize;
    let dim_in = (t.dim - 1) as usize;
    let mut matrix = Vec::with_capacity(dim_out * dim_in);
    let mut bias = Vec::with_capacity(dim_out);
    for r in 0..dim_out {
        let row = &t.data[r * t.dim as usize..(r + 1) * t.dim as usize];
        matrix.extend(row[..dim_in].iter().map(|v| *v as f64));
        bias.push(row[dim_in] as f64);
    }
    Ok((matrix, bias, dim_out, dim_in))
}

/// Serializable form of a box report row (shared by CLI outputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxJson {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<Aabb> for BoxJson {
    fn from(b: Aabb) -> Self {
        BoxJson { min: b.min, max: b.max }
    }
}

impl From<BoxJson> for Aabb {
    fn from(b: BoxJson) -> Self {
        Aabb { min: b.min, max: b.max }
    }
}

pub fn bundle_path(root: &Path, scene_id: &str) -> PathBuf {
    root.join(scene_id)
}

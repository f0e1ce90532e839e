//! Deterministic synthetic scenes and brute-force oracles.
//!
//! Scenes are box-shaped point clusters with cameras ringed around the room
//! center, rendered depth, and hash-derived patch features. The oracles here
//! re-implement projection, binning, and fusion with their own matrix math so
//! pipeline bugs cannot hide in shared code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::MaskSizeMode;
use crate::error::{Error, Result};
use crate::hash::{fnv1a64, fnv1a64_extend, hash_to_unit};
use crate::projection::OcclusionPolicy;
use crate::scene::{CameraView, DepthMap, FeatureTable, Intrinsics, ObjectProposal, Scene};

pub const FEATURE_RULE: &str = "fnv1a64(view_id, patch_index, dim) -> [-1,1)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Inclusive object-count range.
    pub objects: (usize, usize),
    /// Inclusive points-per-object range.
    pub points_per_object: (usize, usize),
    /// Room edge length in meters; objects live in the central region.
    pub room_extent: f64,
    pub views: usize,
    /// (width, height), multiples of 16.
    pub image: (u32, u32),
    pub feature_dim: usize,
    /// Probability that the scene gains a thin occluder slab in front of
    /// the first camera.
    pub occluder_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: (3, 10),
            points_per_object: (60, 150),
            room_extent: 4.0,
            views: 3,
            image: (64, 48),
            feature_dim: 8,
            occluder_prob: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn check(&self) -> Result<()> {
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return Err(Error::input("object count range must be non-empty and >= 1"));
        }
        if self.points_per_object.0 == 0 || self.points_per_object.0 > self.points_per_object.1 {
            return Err(Error::input("points-per-object range must be non-empty and >= 1"));
        }
        if self.image.0 % 16 != 0 || self.image.1 % 16 != 0 || self.image.0 == 0 || self.image.1 == 0 {
            return Err(Error::input("image dims must be positive multiples of 16"));
        }
        if !(self.room_extent > 0.0) {
            return Err(Error::input("room extent must be > 0"));
        }
        if self.feature_dim == 0 {
            return Err(Error::input("feature dim must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) {
            return Err(Error::input("occluder probability must be in [0,1]"));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }
}

/// Per-view visible point indices of one object, at the recorded epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewVisibility {
    pub view_id: String,
    pub point_indices: Vec<u32>,
}

/// Ground truth recorded next to each generated bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub epsilon: f64,
    pub feature_rule: String,
    /// Outer index = proposal; inner = per view in ascending view_id order.
    pub visibility: Vec<Vec<ViewVisibility>>,
    /// Proposal indices that are occluder slabs.
    pub occluders: Vec<usize>,
}

impl SynthTruth {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn look_at(eye: [f64; 3], center: [f64; 3]) -> [f64; 16] {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let norm = |v: [f64; 3]| {
        let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / l, v[1] / l, v[2] / l]
    };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let forward = norm(sub(center, eye));
    let up = [0.0, 0.0, 1.0];
    let right = norm(cross(forward, up));
    let down = cross(forward, right);
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    [
        right[0], right[1], right[2], -dot(right, eye), //
        down[0], down[1], down[2], -dot(down, eye), //
        forward[0], forward[1], forward[2], -dot(forward, eye), //
        0.0, 0.0, 0.0, 1.0,
    ]
}

/// Patch feature value by the recorded generative rule.
pub fn patch_feature_value(view_id: &str, patch_index: u32, dim: u32) -> f32 {
    let mut h = fnv1a64(view_id.as_bytes());
    h = fnv1a64_extend(h, &patch_index.to_le_bytes());
    h = fnv1a64_extend(h, &dim.to_le_bytes());
    hash_to_unit(h) as f32
}

fn patch_features_for(view_id: &str, width: u32, height: u32, dim: usize) -> FeatureTable {
    let rows = ((width / 16) * (height / 16)) as usize;
    let mut data = Vec::with_capacity(rows * dim);
    for patch in 0..rows as u32 {
        for d in 0..dim as u32 {
            data.push(patch_feature_value(view_id, patch, d));
        }
    }
    FeatureTable::new(rows, dim, data).expect("synth features are finite by construction")
}

// Oracle-side projection: full homogeneous multiply, kept separate from the
// pipeline's affine form on purpose.
fn oracle_project(point: [f32; 3], view: &CameraView) -> Option<(f64, f64, f64)> {
    let m = &view.world_to_camera;
    let hp = [point[0] as f64, point[1] as f64, point[2] as f64, 1.0];
    let mut cam = [0.0f64; 4];
    for r in 0..4 {
        for c in 0..4 {
            cam[r] += m[r * 4 + c] * hp[c];
        }
    }
    let w = cam[3];
    let (x, y, z) = (cam[0] / w, cam[1] / w, cam[2] / w);
    if z <= 0.0 {
        return None;
    }
    let u = view.intrinsics.fx * x / z + view.intrinsics.cx;
    let v = view.intrinsics.fy * y / z + view.intrinsics.cy;
    if u < 0.0 || u >= view.width as f64 || v < 0.0 || v >= view.height as f64 {
        return None;
    }
    Some((u, v, z))
}

fn oracle_pixel(u: f64, v: f64, width: u32, height: u32) -> (usize, usize) {
    let x = (u.round() as i64).clamp(0, width as i64 - 1) as usize;
    let y = (v.round() as i64).clamp(0, height as i64 - 1) as usize;
    (x, y)
}

/// Minimum camera-space z per nearest pixel over all scene points;
/// 0 where nothing lands.
pub fn render_depth(scene: &Scene, view: &CameraView) -> DepthMap {
    let (w, h) = (view.width, view.height);
    let mut depth = vec![0.0f32; (w as usize) * (h as usize)];
    for point in &scene.points {
        let Some((u, v, z)) = oracle_project(*point, view) else {
            continue;
        };
        let (x, y) = oracle_pixel(u, v, w, h);
        let cell = &mut depth[y * w as usize + x];
        let z = z as f32;
        if *cell == 0.0 || z < *cell {
            *cell = z;
        }
    }
    DepthMap::new(w, h, depth).expect("dims match by construction")
}

/// Independent z-buffer visibility: the sidecar and acceptance oracle.
pub fn oracle_visible_points(
    scene: &Scene,
    index: usize,
    view: &CameraView,
    epsilon: f64,
) -> Result<Vec<u32>> {
    let prop = scene.proposal(index)?;
    let Some(depth) = &view.depth else {
        return Err(Error::MissingDepth {
            view_id: view.view_id.clone(),
        });
    };
    let mut out = Vec::new();
    for &pi in &prop.point_indices {
        let Some((u, v, z)) = oracle_project(scene.points[pi as usize], view) else {
            continue;
        };
        let (x, y) = oracle_pixel(u, v, view.width, view.height);
        let reading = depth.at(x as u32, y as u32) as f64;
        if reading > 0.0 && (z - reading).abs() <= epsilon {
            out.push(pi);
        }
    }
    Ok(out)
}

/// Brute-force fused 2D feature: per-point projection, per-patch means, and
/// mask-size weighting computed directly, sharing no code with the
/// aggregation pipeline.
pub fn oracle_2d_feature(
    scene: &Scene,
    index: usize,
    policy: &OcclusionPolicy,
    mode: MaskSizeMode,
) -> Result<Vec<f64>> {
    let prop = scene.proposal(index)?;
    let mut views: Vec<&CameraView> = scene.views.iter().collect();
    views.sort_by(|a, b| a.view_id.cmp(&b.view_id));

    let mut weighted_sum: Option<Vec<f64>> = None;
    let mut total_weight = 0.0f64;
    let mut dim_seen: Option<usize> = None;

    for view in views {
        let Some(features) = &view.patch_features else {
            continue;
        };
        if dim_seen.is_none() {
            dim_seen = Some(features.dim());
        }
        // per-patch pixel-hit counting by direct enumeration
        let grid_w = (view.width / 16) as usize;
        let grid_h = (view.height / 16) as usize;
        let mut hit_counts = vec![0u64; grid_w * grid_h];
        for &pi in &prop.point_indices {
            let Some((u, v, z)) = oracle_project(scene.points[pi as usize], view) else {
                continue;
            };
            let visible = match &view.depth {
                Some(depth) => {
                    let (x, y) = oracle_pixel(u, v, view.width, view.height);
                    let reading = depth.at(x as u32, y as u32) as f64;
                    reading > 0.0 && (z - reading).abs() <= policy.epsilon
                }
                None => {
                    if policy.require_depth {
                        return Err(Error::MissingDepth {
                            view_id: view.view_id.clone(),
                        });
                    }
                    true
                }
            };
            if visible {
                let px = (u / 16.0).floor() as usize;
                let py = (v / 16.0).floor() as usize;
                hit_counts[py * grid_w + px] += 1;
            }
        }
        let covered: Vec<usize> = (0..hit_counts.len()).filter(|&i| hit_counts[i] > 0).collect();
        if covered.is_empty() {
            continue;
        }
        let dim = features.dim();
        let mut mean = vec![0.0f64; dim];
        for &patch in &covered {
            for d in 0..dim {
                mean[d] += features.row(patch)[d] as f64;
            }
        }
        for m in &mut mean {
            *m /= covered.len() as f64;
        }
        let weight = match mode {
            MaskSizeMode::PatchCount => covered.len() as f64,
            MaskSizeMode::PixelHits => covered.iter().map(|&i| hit_counts[i]).sum::<u64>() as f64,
        };
        let acc = weighted_sum.get_or_insert_with(|| vec![0.0f64; dim]);
        for (a, m) in acc.iter_mut().zip(&mean) {
            *a += m * weight;
        }
        total_weight += weight;
    }

    match weighted_sum {
        Some(mut acc) => {
            for a in &mut acc {
                *a /= total_weight;
            }
            Ok(acc)
        }
        None => {
            let dim = dim_seen
                .ok_or_else(|| Error::input("oracle_2d_feature: no view has patch features"))?;
            Ok(vec![0.0f64; dim])
        }
    }
}

/// Generates a scene and its ground-truth sidecar; identical seeds produce
/// bit-identical bundles.
pub fn gen_scene(spec: &SynthSpec) -> Result<(Scene, SynthTruth)> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let extent = spec.room_extent;
    let center = [extent * 0.5, extent * 0.5, extent * 0.35];

    // objects: axis-aligned box clusters in the central region
    let n_objects = rng.gen_range(spec.objects.0..=spec.objects.1);
    let mut points: Vec<[f32; 3]> = Vec::new();
    let mut proposals: Vec<ObjectProposal> = Vec::new();
    for index in 0..n_objects {
        let m = rng.gen_range(spec.points_per_object.0..=spec.points_per_object.1);
        let c = [
            rng.gen_range(0.3..0.7) * extent,
            rng.gen_range(0.3..0.7) * extent,
            rng.gen_range(0.15..0.55) * extent,
        ];
        let half = [
            rng.gen_range(0.03..0.1) * extent,
            rng.gen_range(0.03..0.1) * extent,
            rng.gen_range(0.03..0.1) * extent,
        ];
        let start = points.len() as u32;
        for _ in 0..m {
            points.push([
                (c[0] + rng.gen_range(-half[0]..half[0])) as f32,
                (c[1] + rng.gen_range(-half[1]..half[1])) as f32,
                (c[2] + rng.gen_range(-half[2]..half[2])) as f32,
            ]);
        }
        proposals.push(ObjectProposal {
            index,
            point_indices: (start..start + m as u32).collect(),
        });
    }

    // cameras: ringed around the room, looking at the center
    let (width, height) = spec.image;
    let focal = 0.9 * width.max(height) as f64;
    let mut view_poses = Vec::new();
    for k in 0..spec.views {
        let angle = std::f64::consts::TAU * (k as f64 + rng.gen_range(0.0..0.3)) / spec.views.max(1) as f64;
        let radius = extent * rng.gen_range(1.1..1.5);
        let eye = [
            center[0] + radius * angle.cos(),
            center[1] + radius * angle.sin(),
            extent * rng.gen_range(0.6..0.9),
        ];
        view_poses.push(eye);
    }

    // optional occluder: a thin slab halfway between camera 0 and the center
    let mut occluders = Vec::new();
    if !view_poses.is_empty() && rng.gen::<f64>() < spec.occluder_prob {
        let eye = view_poses[0];
        let t = rng.gen_range(0.45..0.6);
        let slab_center = [
            eye[0] + (center[0] - eye[0]) * t,
            eye[1] + (center[1] - eye[1]) * t,
            eye[2] + (center[2] - eye[2]) * t,
        ];
        let dir = [center[0] - eye[0], center[1] - eye[1], center[2] - eye[2]];
        let len = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let fwd = [dir[0] / len, dir[1] / len, dir[2] / len];
        // tangent frame for the slab plane
        let mut tang = [-fwd[1], fwd[0], 0.0];
        let tl = (tang[0] * tang[0] + tang[1] * tang[1]).sqrt().max(1e-9);
        tang = [tang[0] / tl, tang[1] / tl, 0.0];
        let bitang = [
            fwd[1] * tang[2] - fwd[2] * tang[1],
            fwd[2] * tang[0] - fwd[0] * tang[2],
            fwd[0] * tang[1] - fwd[1] * tang[0],
        ];
        let side = extent * rng.gen_range(0.15..0.3);
        let offset = extent * rng.gen_range(-0.1..0.1);
        let m = rng.gen_range(spec.points_per_object.0..=spec.points_per_object.1);
        let start = points.len() as u32;
        for _ in 0..m {
            let a = rng.gen_range(-side..side) + offset;
            let b = rng.gen_range(-side..side);
            let jitter = rng.gen_range(-0.005..0.005);
            points.push([
                (slab_center[0] + a * tang[0] + b * bitang[0] + jitter * fwd[0]) as f32,
                (slab_center[1] + a * tang[1] + b * bitang[1] + jitter * fwd[1]) as f32,
                (slab_center[2] + a * tang[2] + b * bitang[2] + jitter * fwd[2]) as f32,
            ]);
        }
        let index = proposals.len();
        proposals.push(ObjectProposal {
            index,
            point_indices: (start..start + m as u32).collect(),
        });
        occluders.push(index);
    }

    let scene_id = format!("synth-{:016x}", spec.seed);
    let mut scene = Scene {
        scene_id,
        points,
        colors: None,
        proposals,
        views: Vec::new(),
    };

    // views with rendered depth and hash-derived patch features
    for (k, eye) in view_poses.iter().enumerate() {
        let view_id = format!("view{k:03}");
        let mut view = CameraView {
            view_id: view_id.clone(),
            intrinsics: Intrinsics {
                fx: focal,
                fy: focal,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
            },
            world_to_camera: look_at(*eye, center),
            width,
            height,
            depth: None,
            patch_features: Some(patch_features_for(&view_id, width, height, spec.feature_dim)),
        };
        view.depth = Some(render_depth(&scene, &view));
        scene.views.push(view);
    }

    // sidecar: per-object per-view visibility at the default epsilon
    let epsilon = OcclusionPolicy::default().epsilon;
    let mut visibility = Vec::with_capacity(scene.proposals.len());
    for index in 0..scene.proposals.len() {
        let mut per_view = Vec::new();
        let mut views: Vec<&CameraView> = scene.views.iter().collect();
        views.sort_by(|a, b| a.view_id.cmp(&b.view_id));
        for view in views {
            per_view.push(ViewVisibility {
                view_id: view.view_id.clone(),
                point_indices: oracle_visible_points(&scene, index, view, epsilon)?,
            });
        }
        visibility.push(per_view);
    }

    let truth = SynthTruth {
        spec: *spec,
        epsilon,
        feature_rule: FEATURE_RULE.to_string(),
        visibility,
        occluders,
    };
    Ok((scene, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::visible_points;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec::default();
        let (a, ta) = gen_scene(&spec).unwrap();
        let (b, tb) = gen_scene(&spec).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.proposals, b.proposals);
        assert_eq!(ta, tb);
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.world_to_camera, vb.world_to_camera);
            assert_eq!(va.depth.as_ref().unwrap().data(), vb.depth.as_ref().unwrap().data());
            assert_eq!(
                va.patch_features.as_ref().unwrap().data(),
                vb.patch_features.as_ref().unwrap().data()
            );
        }
    }

    #[test]
    fn forced_object_count() {
        let spec = SynthSpec {
            objects: (1, 1),
            occluder_prob: 0.0,
            ..SynthSpec::default()
        };
        let (scene, _) = gen_scene(&spec).unwrap();
        assert_eq!(scene.proposals.len(), 1);
    }

    #[test]
    fn generated_scenes_validate_cleanly() {
        for seed in 0..5 {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            let (scene, _) = gen_scene(&spec).unwrap();
            assert!(scene.validate().is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn render_depth_empty_scene_is_all_zero() {
        let spec = SynthSpec {
            objects: (1, 1),
            occluder_prob: 0.0,
            ..SynthSpec::default()
        };
        let (scene, _) = gen_scene(&spec).unwrap();
        let empty = Scene {
            scene_id: "empty".into(),
            points: vec![],
            colors: None,
            proposals: vec![],
            views: vec![],
        };
        let depth = render_depth(&empty, &scene.views[0]);
        assert!(depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn render_depth_keeps_minimum() {
        let spec = SynthSpec {
            objects: (1, 1),
            occluder_prob: 0.0,
            ..SynthSpec::default()
        };
        let (scene, _) = gen_scene(&spec).unwrap();
        let view = &scene.views[0];
        // two points on the same camera ray at different depths
        let m = &view.world_to_camera;
        // camera center: solve R*c + t = 0 -> c = -R^T t (rigid transform)
        let r = [m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]];
        let t = [m[3], m[7], m[11]];
        let eye = [
            -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
            -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
            -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
        ];
        let fwd = [m[8], m[9], m[10]];
        let p_near = [
            (eye[0] + fwd[0] * 1.5) as f32,
            (eye[1] + fwd[1] * 1.5) as f32,
            (eye[2] + fwd[2] * 1.5) as f32,
        ];
        let p_far = [
            (eye[0] + fwd[0] * 3.0) as f32,
            (eye[1] + fwd[1] * 3.0) as f32,
            (eye[2] + fwd[2] * 3.0) as f32,
        ];
        let two = Scene {
            scene_id: "two".into(),
            points: vec![p_near, p_far],
            colors: None,
            proposals: vec![],
            views: vec![],
        };
        let depth = render_depth(&two, view);
        let (u, v, z) = oracle_project(p_near, view).unwrap();
        let (x, y) = oracle_pixel(u, v, view.width, view.height);
        assert!((depth.at(x as u32, y as u32) - z as f32).abs() < 1e-6);
    }

    #[test]
    fn sidecar_matches_pipeline_visibility() {
        for seed in 0..10 {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            let (scene, truth) = gen_scene(&spec).unwrap();
            let policy = OcclusionPolicy {
                epsilon: truth.epsilon,
                require_depth: true,
            };
            for (index, per_view) in truth.visibility.iter().enumerate() {
                for vv in per_view {
                    let view = scene.view(&vv.view_id).unwrap();
                    let got: Vec<u32> = visible_points(&scene, index, view, &policy)
                        .unwrap()
                        .into_iter()
                        .map(|p| p.point_index)
                        .collect();
                    assert_eq!(got, vv.point_indices, "seed {seed}, object {index}, {}", vv.view_id);
                }
            }
        }
    }

    #[test]
    fn occluder_hides_points_in_front_view() {
        // force an occluder and check some object loses visibility in view 0
        let mut hidden_somewhere = false;
        for seed in 0..20 {
            let spec = SynthSpec {
                seed,
                occluder_prob: 1.0,
                ..SynthSpec::default()
            };
            let (scene, truth) = gen_scene(&spec).unwrap();
            let occluder = *truth.occluders.first().unwrap();
            for (index, per_view) in truth.visibility.iter().enumerate() {
                if index == occluder {
                    continue;
                }
                let front = &per_view[0];
                let in_frustum: usize = scene.proposals[index]
                    .point_indices
                    .iter()
                    .filter(|&&pi| {
                        oracle_project(scene.points[pi as usize], scene.view(&front.view_id).unwrap())
                            .is_some()
                    })
                    .count();
                if in_frustum > 0 && front.point_indices.len() < in_frustum {
                    hidden_somewhere = true;
                }
            }
        }
        assert!(hidden_somewhere, "occluder slabs never hid anything across 20 seeds");
    }

    #[test]
    fn oracle_feature_matches_pipeline() {
        use crate::aggregation::{build_object_record, AggregationConfig};
        for seed in 0..10 {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            let (scene, _) = gen_scene(&spec).unwrap();
            let cfg = AggregationConfig::default();
            for index in 0..scene.proposals.len() {
                let record = build_object_record(&scene, index, &cfg, None, None, None).unwrap();
                let oracle = oracle_2d_feature(&scene, index, &cfg.policy, cfg.mask_size).unwrap();
                let got = record.feature_2d.unwrap();
                assert_eq!(got.len(), oracle.len());
                for (g, o) in got.iter().zip(&oracle) {
                    let err = (g - o).abs() / o.abs().max(1.0);
                    assert!(err < 1e-6, "seed {seed} object {index}: {g} vs {o}");
                }
            }
        }
    }
}

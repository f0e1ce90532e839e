//! Pinhole projection of proposal masks into views, depth-based occlusion
//! culling, and rasterization onto the patch grid.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scene::{CameraView, Scene};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MIN_HITS: u32 = 1;

/// Row-major identity world-to-camera transform.
pub const IDENTITY_EXTRINSICS: [f64; 16] = [
    1.0, 0.0, 0.0, 0.0, //
    0.0, 1.0, 0.0, 0.0, //
    0.0, 0.0, 1.0, 0.0, //
    0.0, 0.0, 0.0, 1.0,
];

/// Depth-visibility test parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionPolicy {
    /// Tolerance in meters between a point's depth and the depth-map reading.
    pub epsilon: f64,
    /// When true, views without a depth map are an error instead of
    /// keeping all in-frustum points.
    pub require_depth: bool,
}

impl Default for OcclusionPolicy {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            require_depth: false,
        }
    }
}

/// Continuous pixel coordinates plus camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

/// One visible projected point of a proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct VisiblePoint {
    pub point_index: u32,
    pub u: f64,
    pub v: f64,
}

/// Set of covered patches in one view, with per-patch pixel-hit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub view_id: String,
    pub grid_w: u32,
    pub grid_h: u32,
    hits: BTreeMap<u32, u32>,
}

impl PatchMask {
    pub fn covered(&self) -> impl Iterator<Item = u32> + '_ {
        self.hits.keys().copied()
    }

    /// Number of covered patches (the per-view mean's divisor).
    pub fn covered_count(&self) -> usize {
        self.hits.len()
    }

    /// Total visible pixel hits over covered patches.
    pub fn hit_total(&self) -> u64 {
        self.hits.values().map(|&h| h as u64).sum()
    }

    pub fn hits(&self) -> &BTreeMap<u32, u32> {
        &self.hits
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Standard pinhole projection after the world-to-camera transform.
///
/// Returns `None` for points behind the camera (z <= 0) or outside the
/// image rectangle `[0, width) x [0, height)`.
pub fn project_point(point: [f32; 3], view: &CameraView) -> Option<Projected> {
    let m = &view.world_to_camera;
    let (x, y, z) = (point[0] as f64, point[1] as f64, point[2] as f64);
    let cx = m[0] * x + m[1] * y + m[2] * z + m[3];
    let cy = m[4] * x + m[5] * y + m[6] * z + m[7];
    let cz = m[8] * x + m[9] * y + m[10] * z + m[11];
    if cz <= 0.0 {
        return None;
    }
    let u = view.intrinsics.fx * cx / cz + view.intrinsics.cx;
    let v = view.intrinsics.fy * cy / cz + view.intrinsics.cy;
    if u < 0.0 || u >= view.width as f64 || v < 0.0 || v >= view.height as f64 {
        return None;
    }
    Some(Projected { u, v, z: cz })
}

/// Nearest pixel for depth lookup, clamped to the image bounds.
pub(crate) fn nearest_pixel(u: f64, v: f64, width: u32, height: u32) -> (u32, u32) {
    let x = (u.round() as i64).clamp(0, width as i64 - 1) as u32;
    let y = (v.round() as i64).clamp(0, height as i64 - 1) as u32;
    (x, y)
}

/// Projects a proposal into a view and keeps only depth-visible points.
///
/// With a depth map present, a point survives iff the map has a reading at
/// its nearest pixel and `|z - reading| <= epsilon`. Readings of 0 mean no
/// data and drop the point. Without a depth map the behavior depends on
/// `policy.require_depth`.
pub fn visible_points(
    scene: &Scene,
    index: usize,
    view: &CameraView,
    policy: &OcclusionPolicy,
) -> Result<Vec<VisiblePoint>> {
    if policy.epsilon <= 0.0 {
        return Err(Error::input(format!(
            "occlusion epsilon must be > 0, got {}",
            policy.epsilon
        )));
    }
    let prop = scene.proposal(index)?;
    if view.depth.is_none() && policy.require_depth {
        return Err(Error::MissingDepth {
            view_id: view.view_id.clone(),
        });
    }
    let mut out = Vec::new();
    for &pi in &prop.point_indices {
        let Some(p) = project_point(scene.points[pi as usize], view) else {
            continue;
        };
        let keep = match &view.depth {
            Some(depth) => {
                let (x, y) = nearest_pixel(p.u, p.v, view.width, view.height);
                let reading = depth.at(x, y) as f64;
                reading > 0.0 && (p.z - reading).abs() <= policy.epsilon
            }
            None => true,
        };
        if keep {
            out.push(VisiblePoint {
                point_index: pi,
                u: p.u,
                v: p.v,
            });
        }
    }
    Ok(out)
}

/// Bins visible points onto the patch grid; a patch is covered once it
/// collects at least `min_hits` pixel hits.
pub fn patch_mask(
    visible: &[VisiblePoint],
    view: &CameraView,
    patch: u32,
    min_hits: u32,
) -> Result<PatchMask> {
    let (grid_w, grid_h) = view.patch_grid(patch).ok_or(Error::PatchMismatch {
        patch,
        width: view.width,
        height: view.height,
    })?;
    let min_hits = min_hits.max(1);
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for vp in visible {
        let px = (vp.u / patch as f64).floor() as u32;
        let py = (vp.v / patch as f64).floor() as u32;
        let idx = py * grid_w + px;
        *counts.entry(idx).or_insert(0) += 1;
    }
    counts.retain(|_, hits| *hits >= min_hits);
    Ok(PatchMask {
        view_id: view.view_id.clone(),
        grid_w,
        grid_h,
        hits: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Intrinsics, ObjectProposal};

    fn view(fx: f64, fy: f64, cx: f64, cy: f64, w: u32, h: u32) -> CameraView {
        CameraView {
            view_id: "v0".into(),
            intrinsics: Intrinsics { fx, fy, cx, cy },
            world_to_camera: IDENTITY_EXTRINSICS,
            width: w,
            height: h,
            depth: None,
            patch_features: None,
        }
    }

    fn scene_one_object(points: Vec<[f32; 3]>, views: Vec<CameraView>) -> Scene {
        let n = points.len() as u32;
        Scene {
            scene_id: "s".into(),
            points,
            colors: None,
            proposals: vec![ObjectProposal {
                index: 0,
                point_indices: (0..n).collect(),
            }],
            views,
        }
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let v = view(1.0, 1.0, 0.0, 0.0, 8, 8);
        let p = project_point([0.0, 0.0, 1.0], &v).unwrap();
        assert_eq!((p.u, p.v, p.z), (0.0, 0.0, 1.0));
    }

    #[test]
    fn behind_camera_is_empty() {
        let v = view(1.0, 1.0, 0.0, 0.0, 8, 8);
        assert!(project_point([0.0, 0.0, -1.0], &v).is_none());
        assert!(project_point([0.0, 0.0, 0.0], &v).is_none());
    }

    #[test]
    fn outside_rectangle_is_empty() {
        let v = view(100.0, 100.0, 4.0, 4.0, 8, 8);
        assert!(project_point([1.0, 0.0, 1.0], &v).is_none());
    }

    #[test]
    fn random_poses_match_homogeneous_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            // random rigid-ish matrix: rotation about z + translation
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = a.sin_cos();
            let t = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0)];
            let m = [
                c, -s, 0.0, t[0], //
                s, c, 0.0, t[1], //
                0.0, 0.0, 1.0, t[2], //
                0.0, 0.0, 0.0, 1.0,
            ];
            let mut v = view(80.0, 70.0, 32.0, 24.0, 64, 48);
            v.world_to_camera = m;
            let p = [
                rng.gen_range(-1.0f32..1.0),
                rng.gen_range(-1.0f32..1.0),
                rng.gen_range(0.5f32..4.0),
            ];
            // oracle: full homogeneous multiply with explicit divide
            let hp = [p[0] as f64, p[1] as f64, p[2] as f64, 1.0];
            let mut cam = [0.0f64; 4];
            for r in 0..4 {
                for k in 0..4 {
                    cam[r] += m[r * 4 + k] * hp[k];
                }
            }
            let (ox, oy, oz) = (cam[0] / cam[3], cam[1] / cam[3], cam[2] / cam[3]);
            let expect = if oz <= 0.0 {
                None
            } else {
                let u = 80.0 * ox / oz + 32.0;
                let vv = 70.0 * oy / oz + 24.0;
                if u < 0.0 || u >= 64.0 || vv < 0.0 || vv >= 48.0 {
                    None
                } else {
                    Some((u, vv, oz))
                }
            };
            let got = project_point(p, &v);
            match (got, expect) {
                (None, None) => {}
                (Some(g), Some(e)) => {
                    assert!((g.u - e.0).abs() < 1e-6);
                    assert!((g.v - e.1).abs() < 1e-6);
                    assert!((g.z - e.2).abs() < 1e-9);
                }
                other => panic!("pipeline/oracle disagree: {other:?}"),
            }
        }
    }

    #[test]
    fn self_consistent_depth_keeps_all_points() {
        use crate::scene::DepthMap;
        let mut v = view(10.0, 10.0, 4.0, 4.0, 8, 8);
        // chosen to land on distinct nearest pixels
        let points = vec![[0.0, 0.0, 2.0], [0.4, 0.4, 2.5], [-0.1, 0.05, 1.5]];
        // build depth that equals each point's true z at its nearest pixel
        let mut depth = vec![0.0f32; 64];
        for p in &points {
            let pr = project_point(*p, &v).unwrap();
            let (x, y) = nearest_pixel(pr.u, pr.v, 8, 8);
            depth[y as usize * 8 + x as usize] = pr.z as f32;
        }
        v.depth = Some(DepthMap::new(8, 8, depth).unwrap());
        let scene = scene_one_object(points, vec![v]);
        let vis = visible_points(&scene, 0, &scene.views[0], &OcclusionPolicy::default()).unwrap();
        assert_eq!(vis.len(), 3);
    }

    #[test]
    fn uniform_occluder_hides_everything() {
        use crate::scene::DepthMap;
        let mut v = view(10.0, 10.0, 4.0, 4.0, 8, 8);
        let points = vec![[0.0, 0.0, 2.0], [0.1, 0.1, 2.0]];
        v.depth = Some(DepthMap::new(8, 8, vec![1.0f32; 64]).unwrap());
        let scene = scene_one_object(points, vec![v]);
        let vis = visible_points(&scene, 0, &scene.views[0], &OcclusionPolicy::default()).unwrap();
        assert!(vis.is_empty());
    }

    #[test]
    fn zero_reading_drops_point() {
        use crate::scene::DepthMap;
        let mut v = view(10.0, 10.0, 4.0, 4.0, 8, 8);
        v.depth = Some(DepthMap::new(8, 8, vec![0.0f32; 64]).unwrap());
        let scene = scene_one_object(vec![[0.0, 0.0, 2.0]], vec![v]);
        let vis = visible_points(&scene, 0, &scene.views[0], &OcclusionPolicy::default()).unwrap();
        assert!(vis.is_empty());
    }

    #[test]
    fn require_depth_without_map_is_error() {
        let v = view(10.0, 10.0, 4.0, 4.0, 8, 8);
        let scene = scene_one_object(vec![[0.0, 0.0, 2.0]], vec![v]);
        let policy = OcclusionPolicy {
            epsilon: 0.05,
            require_depth: true,
        };
        assert!(matches!(
            visible_points(&scene, 0, &scene.views[0], &policy),
            Err(Error::MissingDepth { .. })
        ));
    }

    #[test]
    fn no_depth_keeps_in_frustum_points() {
        let v = view(10.0, 10.0, 4.0, 4.0, 8, 8);
        let scene = scene_one_object(vec![[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]], vec![v]);
        let vis = visible_points(&scene, 0, &scene.views[0], &OcclusionPolicy::default()).unwrap();
        assert_eq!(vis.len(), 1);
        assert_eq!(vis[0].point_index, 0);
    }

    #[test]
    fn shrinking_epsilon_never_adds_points() {
        use crate::scene::DepthMap;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut v = view(20.0, 20.0, 16.0, 16.0, 32, 32);
        let points: Vec<[f32; 3]> = (0..50)
            .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(1.0..3.0)])
            .collect();
        let depth: Vec<f32> = (0..32 * 32).map(|_| rng.gen_range(0.0..3.0)).collect();
        v.depth = Some(DepthMap::new(32, 32, depth).unwrap());
        let scene = scene_one_object(points, vec![v]);
        let mut prev: Option<Vec<u32>> = None;
        for eps in [0.5, 0.25, 0.1, 0.05, 0.01] {
            let policy = OcclusionPolicy {
                epsilon: eps,
                require_depth: true,
            };
            let vis: Vec<u32> = visible_points(&scene, 0, &scene.views[0], &policy)
                .unwrap()
                .into_iter()
                .map(|p| p.point_index)
                .collect();
            if let Some(prev) = &prev {
                assert!(vis.iter().all(|i| prev.contains(i)));
            }
            prev = Some(vis);
        }
    }

    #[test]
    fn corner_pixel_lands_in_patch_zero() {
        let v = view(1.0, 1.0, 0.0, 0.0, 32, 32);
        let visible = vec![VisiblePoint {
            point_index: 0,
            u: 0.0,
            v: 0.0,
        }];
        let mask = patch_mask(&visible, &v, 16, 1).unwrap();
        assert_eq!(mask.covered().collect::<Vec<_>>(), vec![0]);
        assert_eq!(mask.hit_total(), 1);
    }

    #[test]
    fn empty_visible_list_gives_empty_mask() {
        let v = view(1.0, 1.0, 0.0, 0.0, 32, 32);
        let mask = patch_mask(&[], &v, 16, 1).unwrap();
        assert!(mask.is_empty());
        assert_eq!(mask.covered_count(), 0);
    }

    #[test]
    fn patch_must_divide_dims() {
        let v = view(1.0, 1.0, 0.0, 0.0, 30, 32);
        assert!(matches!(
            patch_mask(&[], &v, 16, 1),
            Err(Error::PatchMismatch { .. })
        ));
    }

    #[test]
    fn binning_matches_exhaustive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let v = view(1.0, 1.0, 0.0, 0.0, 64, 48);
        let visible: Vec<VisiblePoint> = (0..50)
            .map(|i| VisiblePoint {
                point_index: i,
                u: rng.gen_range(0.0..64.0),
                v: rng.gen_range(0.0..48.0),
            })
            .collect();
        let mask = patch_mask(&visible, &v, 16, 1).unwrap();
        // oracle: per-pixel binning over a dense grid counter
        let (gw, gh) = (64 / 16, 48 / 16);
        let mut counts = vec![0u32; gw * gh];
        for p in &visible {
            let px = (p.u as usize) / 16;
            let py = (p.v as usize) / 16;
            counts[py * gw + px] += 1;
        }
        for (idx, &c) in counts.iter().enumerate() {
            let got = mask.hits().get(&(idx as u32)).copied().unwrap_or(0);
            assert_eq!(got, c, "patch {idx}");
        }
    }

    #[test]
    fn coverage_invariant_under_permutation() {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let v = view(1.0, 1.0, 0.0, 0.0, 64, 48);
        let mut visible: Vec<VisiblePoint> = (0..30)
            .map(|i| VisiblePoint {
                point_index: i,
                u: (i as f64 * 2.1) % 64.0,
                v: (i as f64 * 1.7) % 48.0,
            })
            .collect();
        let a = patch_mask(&visible, &v, 16, 1).unwrap();
        visible.shuffle(&mut rng);
        let b = patch_mask(&visible, &v, 16, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn min_hits_filters_sparse_patches() {
        let v = view(1.0, 1.0, 0.0, 0.0, 32, 32);
        let visible = vec![
            VisiblePoint { point_index: 0, u: 1.0, v: 1.0 },
            VisiblePoint { point_index: 1, u: 2.0, v: 2.0 },
            VisiblePoint { point_index: 2, u: 20.0, v: 20.0 },
        ];
        let mask = patch_mask(&visible, &v, 16, 2).unwrap();
        assert_eq!(mask.covered().collect::<Vec<_>>(), vec![0]);
        assert_eq!(mask.hits().get(&0), Some(&2));
    }
}

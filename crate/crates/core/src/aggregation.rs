//! Multi-view feature aggregation: per-view masked patch means, mask-size
//! weighted cross-view fusion, and affine feature-to-language projectors.
//!
//! Cross-view summation always runs in ascending `view_id` order so results
//! are bit-identical regardless of how callers schedule the per-view work.

use std::path::Path;

use crate::error::{Error, Result};
use crate::projection::{patch_mask, visible_points, OcclusionPolicy, PatchMask};
use crate::scene::{CameraView, Scene};

/// What counts as a view's mask size when fusing across views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskSizeMode {
    /// Number of covered patches.
    #[default]
    PatchCount,
    /// Number of visible projected points (pixel hits) over covered patches.
    PixelHits,
}

impl MaskSizeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskSizeMode::PatchCount => "patch",
            MaskSizeMode::PixelHits => "pixel",
        }
    }
}

impl std::str::FromStr for MaskSizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(MaskSizeMode::PatchCount),
            "pixel" => Ok(MaskSizeMode::PixelHits),
            other => Err(Error::input(format!(
                "unknown mask-size mode `{other}` (expected `patch` or `pixel`)"
            ))),
        }
    }
}

/// One view's contribution: the masked patch mean and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeature {
    pub view_id: String,
    pub feature: Vec<f64>,
    pub mask_size: u64,
}

/// Which projector a weight file parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    /// 3D-feature-to-language map.
    Point3d,
    /// 2D-feature-to-language map.
    View2d,
}

impl ProjectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProjectorKind::Point3d => "f_p",
            ProjectorKind::View2d => "f_v",
        }
    }
}

/// Fixed affine map `matrix * z + bias` into the language embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProjector {
    pub kind: ProjectorKind,
    matrix: Vec<f64>,
    bias: Vec<f64>,
    dim_out: usize,
    dim_in: usize,
}

impl AffineProjector {
    pub fn new(kind: ProjectorKind, matrix: Vec<f64>, bias: Vec<f64>, dim_out: usize, dim_in: usize) -> Result<Self> {
        if matrix.len() != dim_out * dim_in {
            return Err(Error::DimMismatch {
                context: format!("projector {} matrix", kind.as_str()),
                expected: dim_out * dim_in,
                actual: matrix.len(),
            });
        }
        if bias.len() != dim_out {
            return Err(Error::DimMismatch {
                context: format!("projector {} bias", kind.as_str()),
                expected: dim_out,
                actual: bias.len(),
            });
        }
        if matrix.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("projector has non-finite entries"));
        }
        Ok(Self {
            kind,
            matrix,
            bias,
            dim_out,
            dim_in,
        })
    }

    pub fn identity(kind: ProjectorKind, dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            kind,
            matrix,
            bias: vec![0.0; dim],
            dim_out: dim,
            dim_in: dim,
        }
    }

    pub fn load(kind: ProjectorKind, path: &Path) -> Result<Self> {
        let (matrix, bias, dim_out, dim_in) = crate::bundle::load_projector_table(path)?;
        Self::new(kind, matrix, bias, dim_out, dim_in)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// `matrix * z + bias`.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim_in {
            return Err(Error::DimMismatch {
                context: format!("projector {} input", self.kind.as_str()),
                expected: self.dim_in,
                actual: z.len(),
            });
        }
        let mut out = self.bias.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[r * self.dim_in..(r + 1) * self.dim_in];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(z.iter()) {
                acc += a * b;
            }
            *o += acc;
        }
        Ok(out)
    }
}

/// Fused object representation entering the language-model side.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub index: usize,
    pub feature_3d: Option<Vec<f64>>,
    pub feature_2d: Option<Vec<f64>>,
    pub embed_3d: Option<Vec<f64>>,
    pub embed_2d: Option<Vec<f64>>,
    pub visible_anywhere: bool,
    /// Views that contributed a non-empty mask.
    pub views_used: usize,
    /// Views skipped because they carry no patch features.
    pub views_skipped: usize,
}

/// Knobs for the projection + aggregation pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    pub policy: OcclusionPolicy,
    pub mask_size: MaskSizeMode,
    pub patch: u32,
    pub min_hits: u32,
    /// Fallback 2D feature dimension when no view in the scene carries
    /// patch features; otherwise the first patch table decides.
    pub feature_dim: Option<usize>,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            policy: OcclusionPolicy::default(),
            mask_size: MaskSizeMode::default(),
            patch: crate::scene::PATCH_SIZE,
            min_hits: crate::projection::DEFAULT_MIN_HITS,
            feature_dim: None,
        }
    }
}

/// Mean of the patch features covered by `mask`, with the view's mask size.
pub fn per_view_feature(
    view: &CameraView,
    mask: &PatchMask,
    mode: MaskSizeMode,
) -> Result<ViewFeature> {
    let features = view
        .patch_features
        .as_ref()
        .ok_or_else(|| Error::MissingPatchFeatures {
            view_id: view.view_id.clone(),
        })?;
    if mask.view_id != view.view_id {
        return Err(Error::input(format!(
            "mask belongs to view `{}`, not `{}`",
            mask.view_id, view.view_id
        )));
    }
    if mask.is_empty() {
        return Err(Error::input(format!(
            "empty patch mask for view `{}`; callers must filter invisible views",
            view.view_id
        )));
    }
    let dim = features.dim();
    let mut sum = vec![0.0f64; dim];
    let mut count = 0usize;
    for patch in mask.covered() {
        let patch = patch as usize;
        if patch >= features.rows() {
            return Err(Error::input(format!(
                "patch index {} out of range for {} patch rows in view `{}`",
                patch,
                features.rows(),
                view.view_id
            )));
        }
        for (s, f) in sum.iter_mut().zip(features.row(patch)) {
            *s += *f as f64;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    for s in &mut sum {
        *s *= inv;
    }
    let mask_size = match mode {
        MaskSizeMode::PatchCount => mask.covered_count() as u64,
        MaskSizeMode::PixelHits => mask.hit_total(),
    };
    Ok(ViewFeature {
        view_id: view.view_id.clone(),
        feature: sum,
        mask_size,
    })
}

/// Mask-size weighted mean over per-view features.
pub fn fuse_views(per_view: &[ViewFeature]) -> Result<Vec<f64>> {
    let first = per_view
        .first()
        .ok_or_else(|| Error::input("fuse_views: empty per-view list (object invisible everywhere)"))?;
    let dim = first.feature.len();
    let mut sum = vec![0.0f64; dim];
    let mut total = 0.0f64;
    for vf in per_view {
        if vf.feature.len() != dim {
            return Err(Error::DimMismatch {
                context: format!("fuse_views view `{}`", vf.view_id),
                expected: dim,
                actual: vf.feature.len(),
            });
        }
        if vf.mask_size == 0 {
            return Err(Error::input(format!(
                "view `{}` has mask_size 0; empty views must not be emitted",
                vf.view_id
            )));
        }
        let w = vf.mask_size as f64;
        for (s, f) in sum.iter_mut().zip(&vf.feature) {
            *s += f * w;
        }
        total += w;
    }
    for s in &mut sum {
        *s /= total;
    }
    Ok(sum)
}

/// Alias for [`AffineProjector::apply`], mirroring the free-function form.
pub fn apply_projector(p: &AffineProjector, z: &[f64]) -> Result<Vec<f64>> {
    p.apply(z)
}

/// Runs projection, per-view pooling, and fusion for one object over every
/// view that carries patch features (ascending `view_id` order).
///
/// Objects visible in no view get a zero 2D feature and
/// `visible_anywhere = false` rather than an error.
pub fn build_object_record(
    scene: &Scene,
    index: usize,
    cfg: &AggregationConfig,
    feature_3d: Option<&[f64]>,
    projector_3d: Option<&AffineProjector>,
    projector_2d: Option<&AffineProjector>,
) -> Result<ObjectRecord> {
    scene.proposal(index)?;

    let mut views: Vec<&CameraView> = scene.views.iter().collect();
    views.sort_by(|a, b| a.view_id.cmp(&b.view_id));

    let mut per_view = Vec::new();
    let mut views_skipped = 0usize;
    let mut dim_2d: Option<usize> = None;
    for view in views {
        let Some(pf) = &view.patch_features else {
            views_skipped += 1;
            continue;
        };
        if dim_2d.is_none() {
            dim_2d = Some(pf.dim());
        }
        let visible = visible_points(scene, index, view, &cfg.policy)?;
        let mask = patch_mask(&visible, view, cfg.patch, cfg.min_hits)?;
        if mask.is_empty() {
            continue;
        }
        per_view.push(per_view_feature(view, &mask, cfg.mask_size)?);
    }

    let (feature_2d, visible_anywhere, views_used) = if per_view.is_empty() {
        let dim = dim_2d.or(cfg.feature_dim).ok_or_else(|| {
            Error::input(
                "cannot size the zero 2D feature: no view has patch features and no feature_dim configured",
            )
        })?;
        (vec![0.0f64; dim], false, 0)
    } else {
        (fuse_views(&per_view)?, true, per_view.len())
    };

    let feature_3d = feature_3d.map(|f| f.to_vec());
    if let Some(f) = &feature_3d {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "feature_3d for proposal {index} has non-finite entries"
            )));
        }
    }
    let embed_3d = match (&feature_3d, projector_3d) {
        (Some(f), Some(p)) => Some(p.apply(f)?),
        _ => None,
    };
    let embed_2d = match projector_2d {
        Some(p) => Some(p.apply(&feature_2d)?),
        None => None,
    };

    Ok(ObjectRecord {
        index,
        feature_3d,
        feature_2d: Some(feature_2d),
        embed_3d,
        embed_2d,
        visible_anywhere,
        views_used,
        views_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{FeatureTable, Intrinsics};

    fn view_with_features(view_id: &str, dim: usize, fill: impl Fn(usize, usize) -> f32) -> CameraView {
        let (gw, gh) = (2usize, 2usize);
        let rows = gw * gh;
        let mut data = Vec::with_capacity(rows * dim);
        for r in 0..rows {
            for d in 0..dim {
                data.push(fill(r, d));
            }
        }
        CameraView {
            view_id: view_id.into(),
            intrinsics: Intrinsics {
                fx: 1.0,
                fy: 1.0,
                cx: 0.0,
                cy: 0.0,
            },
            world_to_camera: crate::projection::IDENTITY_EXTRINSICS,
            width: 32,
            height: 32,
            depth: None,
            patch_features: Some(FeatureTable::new(rows, dim, data).unwrap()),
        }
    }

    fn mask_of(view: &CameraView, pixels: &[(f64, f64)]) -> PatchMask {
        let visible: Vec<_> = pixels
            .iter()
            .enumerate()
            .map(|(i, (u, v))| crate::projection::VisiblePoint {
                point_index: i as u32,
                u: *u,
                v: *v,
            })
            .collect();
        patch_mask(&visible, view, 16, 1).unwrap()
    }

    #[test]
    fn single_patch_mean_is_identity() {
        let view = view_with_features("v", 3, |r, d| (r * 10 + d) as f32);
        let mask = mask_of(&view, &[(0.0, 0.0)]);
        let vf = per_view_feature(&view, &mask, MaskSizeMode::PatchCount).unwrap();
        assert_eq!(vf.feature, vec![0.0, 1.0, 2.0]);
        assert_eq!(vf.mask_size, 1);
    }

    #[test]
    fn two_patch_mean_matches_hand_sum() {
        // patch 0 = (1,0), patch 1 = (3,2) -> mean (2,1)
        let view = view_with_features("v", 2, |r, d| match (r, d) {
            (0, 0) => 1.0,
            (0, 1) => 0.0,
            (1, 0) => 3.0,
            (1, 1) => 2.0,
            _ => 99.0,
        });
        let mask = mask_of(&view, &[(0.0, 0.0), (16.0, 0.0)]);
        let vf = per_view_feature(&view, &mask, MaskSizeMode::PatchCount).unwrap();
        assert_eq!(vf.feature, vec![2.0, 1.0]);
    }

    #[test]
    fn random_mask_mean_matches_bruteforce() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let dim = 8;
        let data: Vec<f32> = (0..4 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut view = view_with_features("v", dim, |_, _| 0.0);
        view.patch_features = Some(FeatureTable::new(4, dim, data.clone()).unwrap());
        // hit patches 0,1,3 with a few pixels each (7 total points)
        let mask = mask_of(
            &view,
            &[(0.0, 0.0), (1.0, 1.0), (17.0, 0.0), (18.0, 2.0), (19.0, 3.0), (17.0, 17.0), (20.0, 20.0)],
        );
        let vf = per_view_feature(&view, &mask, MaskSizeMode::PixelHits).unwrap();
        assert_eq!(vf.mask_size, 7);
        let covered = [0usize, 1, 3];
        for d in 0..dim {
            let expect: f64 = covered.iter().map(|&r| data[r * dim + d] as f64).sum::<f64>() / 3.0;
            let rel = (vf.feature[d] - expect).abs() / expect.abs().max(1.0);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn empty_mask_is_error() {
        let view = view_with_features("v", 2, |_, _| 0.0);
        let mask = mask_of(&view, &[]);
        assert!(per_view_feature(&view, &mask, MaskSizeMode::PatchCount).is_err());
    }

    fn vf(id: &str, feature: Vec<f64>, s: u64) -> ViewFeature {
        ViewFeature {
            view_id: id.into(),
            feature,
            mask_size: s,
        }
    }

    #[test]
    fn fuse_single_view_is_identity() {
        let out = fuse_views(&[vf("a", vec![0.5, -1.5], 9)]).unwrap();
        assert_eq!(out, vec![0.5, -1.5]);
    }

    #[test]
    fn fuse_matches_hand_expanded_weighted_sum() {
        // ((2,0), S=3) and ((0,4), S=1) -> ((2*3+0)/4, (0+4)/4) = (1.5, 1.0)
        let out = fuse_views(&[vf("a", vec![2.0, 0.0], 3), vf("b", vec![0.0, 4.0], 1)]).unwrap();
        assert_eq!(out, vec![1.5, 1.0]);
    }

    #[test]
    fn fuse_equal_weights_is_plain_mean() {
        let out = fuse_views(&[vf("a", vec![1.0], 5), vf("b", vec![3.0], 5)]).unwrap();
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn fuse_rejects_dim_mismatch_and_empty() {
        assert!(fuse_views(&[]).is_err());
        assert!(fuse_views(&[vf("a", vec![1.0], 1), vf("b", vec![1.0, 2.0], 1)]).is_err());
    }

    #[test]
    fn fuse_duplicate_view_equals_doubled_weight() {
        let a = fuse_views(&[vf("a", vec![2.0], 3), vf("a", vec![2.0], 3), vf("b", vec![0.0], 2)])
            .unwrap();
        let b = fuse_views(&[vf("a", vec![2.0], 6), vf("b", vec![0.0], 2)]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn fuse_weight_scaling_invariance() {
        let a = fuse_views(&[vf("a", vec![1.0, 2.0], 3), vf("b", vec![5.0, 0.0], 7)]).unwrap();
        let b = fuse_views(&[vf("a", vec![1.0, 2.0], 30), vf("b", vec![5.0, 0.0], 70)]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_output_in_componentwise_hull() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let k = rng.gen_range(1..6);
            let feats: Vec<ViewFeature> = (0..k)
                .map(|i| {
                    vf(
                        &format!("v{i}"),
                        (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                        rng.gen_range(1..20),
                    )
                })
                .collect();
            let out = fuse_views(&feats).unwrap();
            for d in 0..4 {
                let lo = feats.iter().map(|f| f.feature[d]).fold(f64::INFINITY, f64::min);
                let hi = feats.iter().map(|f| f.feature[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out[d] >= lo - 1e-12 && out[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn identity_projector_is_identity() {
        let p = AffineProjector::identity(ProjectorKind::Point3d, 3);
        let z = vec![1.0, -2.0, 0.5];
        assert_eq!(p.apply(&z).unwrap(), z);
    }

    #[test]
    fn zero_matrix_projector_returns_bias() {
        let p = AffineProjector::new(
            ProjectorKind::View2d,
            vec![0.0; 6],
            vec![7.0, -3.0],
            2,
            3,
        )
        .unwrap();
        assert_eq!(p.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![7.0, -3.0]);
    }

    #[test]
    fn random_projector_matches_dot_product_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let (dout, din) = (4, 6);
        let matrix: Vec<f64> = (0..dout * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = AffineProjector::new(ProjectorKind::Point3d, matrix.clone(), bias.clone(), dout, din).unwrap();
        let got = p.apply(&z).unwrap();
        for r in 0..dout {
            let mut expect = bias[r];
            for c in 0..din {
                expect += matrix[r * din + c] * z[c];
            }
            assert!((got[r] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn projector_rejects_wrong_input_dim() {
        let p = AffineProjector::identity(ProjectorKind::Point3d, 3);
        assert!(p.apply(&[1.0, 2.0]).is_err());
    }
}

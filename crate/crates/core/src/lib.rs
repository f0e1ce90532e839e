//! Scene-to-sequence toolkit for 3D indoor scenes.
//!
//! Converts scene bundles (point clouds, object proposal masks, posed views
//! with depth and patch features) into context-rich object sequences and
//! instruction-tuning records, generates grounded chain-of-thought training
//! data from annotations, and scores model outputs with the full benchmark
//! protocol, including a spatiotemporal mask IoU for 2D-only grounding.

pub mod aggregation;
pub mod bundle;
pub mod error;
pub mod gcot;
pub mod hash;
pub mod identifiers;
pub mod jsonl;
pub mod metrics;
pub mod projection;
pub mod scene;
pub mod synth;
pub mod tasking;

pub use aggregation::{
    apply_projector, build_object_record, fuse_views, per_view_feature, AffineProjector,
    AggregationConfig, MaskSizeMode, ObjectRecord, ProjectorKind, ViewFeature,
};
pub use error::{Diagnostic, Error, Result};
pub use gcot::{
    gen_category_cot, gen_qa_cot, gen_space_cot, parse_cot_response, CategoryAnnotation,
    CotAnnotation, CotParse, CotStep, FinalAnswer, QaAnnotation, SpaceAnnotation, COT_SUFFIX,
};
pub use identifiers::{
    assign_ids, make_id_token, parse_id_positions, parse_id_tokens, scan_id_tokens,
    scene_assignment, token_cost, IdAssignment, IdKind, IdScan, IdScheme, IdToken, OrderPolicy,
};
pub use metrics::{
    aabb_iou, bleu4, caption_at_iou, cider, exact_match, grounding_accuracy, multi_object_f1,
    normalize_answer, st_iou, CiderConfig, EvalReport, GroundingPrediction, Mask2D, MaskVolume,
    RleMasks, SampleRow,
};
pub use projection::{
    patch_mask, project_point, visible_points, OcclusionPolicy, PatchMask, Projected,
    VisiblePoint,
};
pub use scene::{
    object_aabb, object_centroid, Aabb, CameraView, DepthMap, FeatureTable, Intrinsics,
    ObjectProposal, Scene, SceneStore,
};
pub use synth::{gen_scene, oracle_2d_feature, oracle_visible_points, render_depth, SynthSpec, SynthTruth};
pub use tasking::{
    assemble_dataset, interleave_sources, pack_sequence, render_system_prompt, validate_corpus,
    validate_record, AssembleStats, DatasetManifest, ManifestEntry, PackedSequence, RecordBuilder,
    SourceRecords, TaskFields, TaskKind, TaskRecord, Templates, SYSTEM_PREAMBLE,
};

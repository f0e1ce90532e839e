//! Write-then-read checks over synthetic bundles: loading must reproduce the
//! in-memory scene, and re-writing must reproduce the bytes.

use scene2seq_core::bundle::{load_scene, write_scene};
use scene2seq_core::synth::{gen_scene, SynthSpec};

fn dir_files(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_bundle_roundtrips_bit_identically() {
    for seed in [0u64, 7, 42] {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let (scene, _) = gen_scene(&spec).unwrap();

        let dir_a = tempfile::tempdir().unwrap();
        write_scene(&scene, dir_a.path()).unwrap();
        let loaded = load_scene(dir_a.path()).unwrap();

        // structural equality after one round trip
        assert_eq!(loaded.scene_id, scene.scene_id);
        assert_eq!(loaded.points, scene.points);
        assert_eq!(loaded.proposals, scene.proposals);
        assert_eq!(loaded.views.len(), scene.views.len());
        for (a, b) in loaded.views.iter().zip(&scene.views) {
            assert_eq!(a.view_id, b.view_id);
            assert_eq!(a.intrinsics, b.intrinsics);
            assert_eq!(a.world_to_camera, b.world_to_camera);
            assert_eq!(a.depth, b.depth);
            assert_eq!(a.patch_features, b.patch_features);
        }

        // writing the loaded scene reproduces every byte
        let dir_b = tempfile::tempdir().unwrap();
        write_scene(&loaded, dir_b.path()).unwrap();
        let files_a = dir_files(dir_a.path());
        let files_b = dir_files(dir_b.path());
        assert_eq!(files_a, files_b);
        for rel in files_a {
            let a = std::fs::read(dir_a.path().join(&rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(&rel)).unwrap();
            assert_eq!(a, b, "{}", rel.display());
        }
    }
}

#[test]
fn generated_bundles_pass_validation_with_zero_diagnostics() {
    for seed in 0..20u64 {
        let (scene, _) = gen_scene(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        assert!(scene.validate().is_empty(), "seed {seed}");
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene, dir.path()).unwrap();
        // load_scene re-validates; it must succeed cleanly
        load_scene(dir.path()).unwrap();
    }
}

#[test]
fn repeated_loads_are_identical() {
    let (scene, _) = gen_scene(&SynthSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(&scene, dir.path()).unwrap();
    let a = load_scene(dir.path()).unwrap();
    let b = load_scene(dir.path()).unwrap();
    assert_eq!(a.points, b.points);
    assert_eq!(a.proposals, b.proposals);
    assert_eq!(a.scene_id, b.scene_id);
}

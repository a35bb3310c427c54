use std::fs;

use dualspace_core::backbone::{Backbone, BackboneSpec, CacheOutcome, FeatureCache, ImageBatch, VisionTransformer};
use ndarray::Array4;

fn batch() -> ImageBatch {
    let px = Array4::from_shape_fn((4, 32, 32, 3), |(i, y, x, c)| ((i * 5 + y + 2 * x + c) % 13) as f64 / 12.0);
    ImageBatch::with_sequential_ids(px, None, "cache-test").unwrap()
}

fn mock(seed: u64) -> Backbone {
    Backbone::Vit(Box::new(VisionTransformer::mock(BackboneSpec::mock(), seed).unwrap()))
}

struct Entry {
    _dir: tempfile::TempDir,
    cache: FeatureCache,
    bb: Backbone,
    path: std::path::PathBuf,
}

fn populated() -> Entry {
    let dir = tempfile::tempdir().unwrap();
    let cache = FeatureCache::new(dir.path().join("root"));
    let bb = mock(0);
    let (_, o) = cache.get_or_extract(&bb, &batch(), "d", "train").unwrap();
    assert_eq!(o, CacheOutcome::Miss);
    let path = cache.entry_dir(&FeatureCache::key(&bb, batch().ids()));
    Entry {
        _dir: dir,
        cache,
        bb,
        path,
    }
}

fn reread(e: &Entry) -> CacheOutcome {
    let fresh = e.bb.encode(&batch()).unwrap().quantized();
    let (bank, outcome) = e.cache.get_or_extract(&e.bb, &batch(), "d", "train").unwrap();
    assert_eq!(bank, fresh);
    outcome
}

#[test]
fn flipped_byte_is_detected() {
    let e = populated();
    let f = e.path.join("pretrained.f32");
    let mut bytes = fs::read(&f).unwrap();
    bytes[7] ^= 0x40;
    fs::write(&f, bytes).unwrap();
    assert_eq!(reread(&e), CacheOutcome::Corrupted);
    assert_eq!(reread(&e), CacheOutcome::Hit);
}

#[test]
fn missing_sidecar_is_detected() {
    let e = populated();
    fs::remove_file(e.path.join("hidden_03.json")).unwrap();
    assert_eq!(reread(&e), CacheOutcome::Corrupted);
}

#[test]
fn sidecar_with_wrong_shape_is_detected() {
    let e = populated();
    let p = e.path.join("hidden_00.json");
    let text = fs::read_to_string(&p).unwrap().replace("\"shape\": [\n    4,", "\"shape\": [\n    3,");
    fs::write(&p, text).unwrap();
    assert_eq!(reread(&e), CacheOutcome::Corrupted);
}

#[test]
fn entry_without_index_is_a_miss() {
    let e = populated();
    fs::remove_file(e.path.join("index.json")).unwrap();
    assert_eq!(reread(&e), CacheOutcome::Miss);
}

#[test]
fn garbage_index_is_detected() {
    let e = populated();
    fs::write(e.path.join("index.json"), b"{not json").unwrap();
    assert_eq!(reread(&e), CacheOutcome::Corrupted);
}

#[test]
fn different_backbones_do_not_share_entries() {
    let e = populated();
    let other = mock(1);
    let (_, o) = e.cache.get_or_extract(&other, &batch(), "d", "train").unwrap();
    assert_eq!(o, CacheOutcome::Miss);
    assert_eq!(reread(&e), CacheOutcome::Hit);
}

#[test]
fn no_temporary_files_are_left_behind() {
    let e = populated();
    for entry in fs::read_dir(&e.path).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        assert!(name.ends_with(".f32") || name.ends_with(".json"), "{name}");
    }
}

mod common;

use common::{model, rng};
use facefill::facemodel::Pose;
use facefill::illumination::Lighting;
use facefill::masks::{face_mask, gen_mask, mask_ratio, standard_bins, FaceRegion, MaskKind, MaskSpec, MAX_RATIO};
use facefill::pipeline::data::{random_albedo, sample_face, synthesize, DataConfig};
use facefill::pipeline::FaceFactors;
use facefill::renderer::rasterize;
use facefill::FaceError;
use proptest::prelude::*;

fn frontal_face() -> facefill::pipeline::SyntheticFace {
    let m = model();
    let factors =
        FaceFactors { coeffs: vec![0.0; m.num_coeffs()], pose: Pose::canonical(m, 112), lighting: Lighting::ambient(1.0) };
    synthesize(m, factors, random_albedo(m, 0.0, &mut rng(1)), 112).unwrap()
}

fn region_of(face: &facefill::pipeline::SyntheticFace) -> FaceRegion {
    FaceRegion::from_coverage(face.coverage.clone(), face.image.height, face.image.width).unwrap()
}

#[test]
fn standard_bins_cover_zero_to_ninety_percent() {
    let b = standard_bins();
    assert_eq!(b.len(), 9);
    assert_eq!(b[0].0, 0.0);
    assert!((b[8].1 - MAX_RATIO).abs() < 1e-12);
    for w in b.windows(2) {
        assert_eq!(w[0].1, w[1].0);
    }
}

#[test]
fn lowest_bin_is_respected() {
    let face = frontal_face();
    let region = region_of(&face);
    let mask = gen_mask(&region, &MaskSpec::rect(0.0, 0.1, 42)).unwrap();
    let r = mask_ratio(&region, &mask);
    assert!((0.0..0.1).contains(&r) && r > 0.0, "ratio {r}");
}

#[test]
fn half_face_on_frontal_pose_is_half() {
    let m = model();
    let face = frontal_face();
    let raster = rasterize(m, &face.shape, &face.factors.pose, 112, 112);
    let region = FaceRegion::from_raster(m, &face.shape, &raster);
    let mut sides = [0, 0];
    for seed in 0..8 {
        let mask = face_mask(m, &face, &MaskSpec::half_face(seed)).unwrap();
        let r = mask_ratio(&region, &mask);
        assert!((r - 0.5).abs() <= 0.05, "ratio {r}");
        let masked = mask.data.iter().filter(|&&v| v == 1.0).count();
        let left = (0..112 * 112).filter(|&k| mask.data[k] == 1.0 && k % 112 < 56).count();
        sides[(left * 2 > masked) as usize] += 1;
    }
    assert!(sides[0] > 0 && sides[1] > 0, "both sides should be drawn: {sides:?}");
}

#[test]
fn bins_beyond_the_cap_are_infeasible() {
    let region = region_of(&frontal_face());
    for bin in [(0.95, 1.0), (0.5, 0.4), (-0.1, 0.1)] {
        let r = gen_mask(&region, &MaskSpec { kind: MaskKind::Rect, bin, seed: 0 });
        assert!(matches!(r, Err(FaceError::Infeasible(_))), "{bin:?}");
    }
    let empty = FaceRegion::from_coverage(vec![false; 16], 4, 4).unwrap();
    assert!(matches!(gen_mask(&empty, &MaskSpec::rect(0.0, 0.1, 0)), Err(FaceError::Infeasible(_))));
}

#[test]
fn half_face_needs_geometry() {
    let region = region_of(&frontal_face());
    assert!(matches!(gen_mask(&region, &MaskSpec::half_face(0)), Err(FaceError::Invalid(_))));
}

#[test]
fn masks_are_deterministic_per_seed() {
    let region = region_of(&frontal_face());
    let a = gen_mask(&region, &MaskSpec::rect(0.3, 0.4, 5)).unwrap();
    let b = gen_mask(&region, &MaskSpec::rect(0.3, 0.4, 5)).unwrap();
    let c = gen_mask(&region, &MaskSpec::rect(0.3, 0.4, 6)).unwrap();
    assert_eq!(a.data, b.data);
    assert_ne!(a.data, c.data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn rect_masks_stay_in_face_and_bin(face_idx in 0u64..6, bin in 0usize..9, seed in any::<u64>()) {
        let m = model();
        let face = sample_face(m, &DataConfig::default(), 9, face_idx).unwrap();
        let region = region_of(&face);
        let (lo, hi) = standard_bins()[bin];
        let mask = gen_mask(&region, &MaskSpec::rect(lo, hi, seed)).unwrap();
        for (k, &v) in mask.data.iter().enumerate() {
            prop_assert!(v == 0.0 || (v == 1.0 && region.covered[k]));
        }
        let r = mask_ratio(&region, &mask);
        prop_assert!(r >= lo && r < hi, "ratio {} outside [{}, {})", r, lo, hi);
    }
}

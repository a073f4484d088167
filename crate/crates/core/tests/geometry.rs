use aura_core::{build_spatial_map, compute_occlusion_rate, BinaryMask, CoreError};
use proptest::prelude::*;

fn rows(h: usize, w: usize, set: &[usize]) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, _| set.contains(&y))
}

#[test]
fn rate_identity_and_limit() {
    let m = rows(3, 3, &[1]);
    assert_eq!(compute_occlusion_rate(&m, &m).unwrap(), 0.0);
    assert_eq!(compute_occlusion_rate(&BinaryMask::new(3, 3), &m).unwrap(), 1.0);
}

#[test]
fn rate_half_by_pixel_count() {
    let amodal = rows(4, 4, &[0, 1]);
    let visible = rows(4, 4, &[0]);
    assert_eq!(visible.count(), 4);
    assert_eq!(amodal.count(), 8);
    assert_eq!(compute_occlusion_rate(&visible, &amodal).unwrap(), 0.5);
}

#[test]
fn rate_rejects_empty_amodal_and_subset_violation() {
    let empty = BinaryMask::new(2, 2);
    let err = compute_occlusion_rate(&empty, &empty).unwrap_err();
    assert!(matches!(err, CoreError::InvalidGeometry(ref m) if m.contains("0 pixels")));

    let amodal = rows(2, 2, &[0]);
    let visible = rows(2, 2, &[0, 1]);
    let err = compute_occlusion_rate(&visible, &amodal).unwrap_err();
    assert!(matches!(err, CoreError::InvalidGeometry(ref m) if m.starts_with("2 visible")));
}

#[test]
fn spatial_map_four_by_four() {
    let amodal = rows(4, 4, &[0, 1]);
    let visible = rows(4, 4, &[0]);
    let map = build_spatial_map(&visible, &amodal).unwrap();
    let expected: Vec<u8> = [1u8, 2, 0, 0]
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, 4))
        .collect();
    assert_eq!(map.values(), expected.as_slice());
}

#[test]
fn spatial_map_single_hidden_pixel() {
    let amodal = BinaryMask::from_fn(4, 5, |y, x| (y, x) == (2, 3));
    let map = build_spatial_map(&BinaryMask::new(4, 5), &amodal).unwrap();
    for y in 0..4 {
        for x in 0..5 {
            assert_eq!(map.get(y, x), if (y, x) == (2, 3) { 2 } else { 0 });
        }
    }
}

#[test]
fn spatial_map_unoccluded_has_no_hidden_label() {
    let m = rows(3, 2, &[0, 2]);
    let map = build_spatial_map(&m, &m).unwrap();
    assert_eq!(map.count(2), 0);
    assert_eq!(map.count(1), 4);
}

#[test]
fn spatial_map_errors() {
    let a = BinaryMask::new(2, 2);
    let b = BinaryMask::new(2, 3);
    assert!(matches!(build_spatial_map(&a, &b), Err(CoreError::Shape { .. })));
    let amodal = rows(2, 2, &[0]);
    let visible = rows(2, 2, &[1]);
    assert!(matches!(
        build_spatial_map(&visible, &amodal),
        Err(CoreError::InvalidGeometry(_))
    ));
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=16, 1usize..=16).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(any::<bool>(), h * w),
            proptest::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(a, v)| {
                let mut a = a;
                a[0] = true;
                let v: Vec<bool> = v.iter().zip(&a).map(|(&v, &a)| v && a).collect();
                (
                    BinaryMask::from_bits(h, w, v).unwrap(),
                    BinaryMask::from_bits(h, w, a).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn spatial_map_partitions_pixels((visible, amodal) in mask_pair()) {
        let map = build_spatial_map(&visible, &amodal).unwrap();
        for y in 0..visible.height() {
            for x in 0..visible.width() {
                let label = map.get(y, x);
                prop_assert_eq!(label == 1, visible.get(y, x));
                prop_assert_eq!(label == 2, amodal.get(y, x) && !visible.get(y, x));
                prop_assert_eq!(label == 0, !amodal.get(y, x));
            }
        }
    }

    #[test]
    fn rate_is_scale_consistent((visible, amodal) in mask_pair()) {
        let r = compute_occlusion_rate(&visible, &amodal).unwrap();
        let r2 = compute_occlusion_rate(&visible.upscale(2), &amodal.upscale(2)).unwrap();
        prop_assert!((r - r2).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

mod common;

use common::random_layout;
use layoutjoint::depth::{background_depth, layout_to_depth, refine_box, refine_layout};
use layoutjoint::layout::{validate_layout, BoundingBox, Instance, Layout, ValidatedLayout};
use layoutjoint::pgm::decode_pgm;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single(b: BoundingBox) -> ValidatedLayout {
    validate_layout(Layout::new("a thing", vec![Instance::new("a thing", b, None)])).unwrap()
}

#[test]
fn nested_box_is_painted_nearer() {
    let outer = BoundingBox::new(0.1, 0.1, 0.9, 0.9);
    let inner = BoundingBox::new(0.4, 0.4, 0.6, 0.6);
    let l = validate_layout(Layout::new(
        "two things",
        vec![Instance::new("big", outer, None), Instance::new("small", inner, None)],
    ))
    .unwrap();
    let d = layout_to_depth(&l, 40, 40).unwrap();
    assert_eq!(d.get(20, 20), 1.0);
    assert_eq!(d.get(6, 6), 0.75);
    assert!((d.get(0, 0) - background_depth(0.5 / 40.0)).abs() < 1e-12);
    assert!(d.get(39, 0) > d.get(0, 0));

    let pgm = decode_pgm(&d.to_pgm()).unwrap();
    assert_eq!((pgm.width, pgm.height, pgm.maxval), (40, 40, 65535));
    assert_eq!(pgm.samples[20 * 40 + 20], 65535);
}

#[test]
fn zero_sized_map_is_an_error() {
    assert!(layout_to_depth(&single(BoundingBox::new(0.0, 0.0, 1.0, 1.0)), 0, 5).is_err());
}

#[test]
fn tiny_box_keeps_original() {
    // no pixel centre falls inside
    let b = BoundingBox::new(0.501, 0.501, 0.502, 0.502);
    let l = single(b);
    let d = layout_to_depth(&l, 10, 10).unwrap();
    assert!(refine_box(&b, &d).is_err());
    assert_eq!(refine_layout(&l, &d).instances()[0].bbox, b);
}

fn padded(b: &BoundingBox, frac: f64) -> BoundingBox {
    let (pw, ph) = (b.width() * frac, b.height() * frac);
    BoundingBox::new((b.x0 - pw).max(0.0), (b.y0 - ph).max(0.0), (b.x1 + pw).min(1.0), (b.y1 + ph).min(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refine_is_idempotent_and_never_enlarges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = random_layout(&mut rng, 5);
        let side = rng.random_range(8..=64);
        let d = layout_to_depth(&l, side, side).unwrap();
        let once = refine_layout(&l, &d);
        let twice = refine_layout(&once, &d);
        prop_assert_eq!(&once, &twice);
        for (a, b) in l.instances().iter().zip(once.instances()) {
            prop_assert!(b.bbox.x0 >= a.bbox.x0 && b.bbox.y0 >= a.bbox.y0);
            prop_assert!(b.bbox.x1 <= a.bbox.x1 && b.bbox.y1 <= a.bbox.y1);
        }
    }

    #[test]
    fn exact_box_is_returned_unchanged(x in 0.0..0.7f64, y in 0.0..0.7f64, w in 0.1..0.3f64, h in 0.1..0.3f64) {
        let b = BoundingBox::new(x, y, x + w, y + h);
        let d = layout_to_depth(&single(b), 128, 128).unwrap();
        prop_assert_eq!(refine_box(&b, &d).unwrap(), b);
    }

    #[test]
    fn padded_box_tightens_to_within_a_pixel(x in 0.05..0.6f64, y in 0.05..0.6f64, w in 0.1..0.35f64, h in 0.1..0.35f64) {
        let b = BoundingBox::new(x, y, x + w, y + h);
        let px = 1.0 / 128.0;
        let d = layout_to_depth(&single(b), 128, 128).unwrap();
        let r = refine_box(&padded(&b, 0.2), &d).unwrap();
        for (got, want) in r.as_array().iter().zip(b.as_array()) {
            prop_assert!((got - want).abs() <= px, "{:?} vs {:?}", r, b);
        }
    }
}

use dejavu_core::crop::{corner_crop, periphery_crop, BoundingBox, CropShape, Fraction, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_boxes(rng: &mut ChaCha8Rng, w: u32, h: u32, n: std::ops::Range<usize>) -> Vec<BoundingBox> {
    let n = rng.random_range(n);
    (0..n)
        .map(|_| {
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            let x1 = rng.random_range(x0 + 1..=w.min(x0 + w / 2 + 1));
            let y1 = rng.random_range(y0 + 1..=h.min(y0 + h / 2 + 1));
            BoundingBox::new(x0, y0, x1, y1)
        })
        .collect()
}

/// Every pixel-aligned rectangle, checked for emptiness with a 2-D prefix sum.
/// Returns the winner under the same ordering: area (or square side), then y0, x0, y1.
fn exhaustive(w: u32, h: u32, boxes: &[BoundingBox], min_side: u32, square: bool) -> Option<Rect> {
    let (wu, hu) = (w as usize, h as usize);
    let mut occ = vec![vec![0u32; wu + 1]; hu + 1];
    for y in 0..hu {
        for x in 0..wu {
            let hit = boxes.iter().any(|b| (b.x0 as usize..b.x1 as usize).contains(&x) && (b.y0 as usize..b.y1 as usize).contains(&y));
            occ[y + 1][x + 1] = occ[y][x + 1] + occ[y + 1][x] - occ[y][x] + u32::from(hit);
        }
    }
    let filled = |x0: usize, y0: usize, x1: usize, y1: usize| occ[y1][x1] + occ[y0][x0] - occ[y0][x1] - occ[y1][x0];
    let mut best: Option<(u64, (u32, u32, u32), Rect)> = None;
    for y0 in 0..hu {
        for x0 in 0..wu {
            for y1 in y0 + 1..=hu {
                for x1 in x0 + 1..=wu {
                    let (rw, rh) = ((x1 - x0) as u32, (y1 - y0) as u32);
                    if rw < min_side || rh < min_side || (square && rw != rh) {
                        continue;
                    }
                    if filled(x0, y0, x1, y1) > 0 {
                        break;
                    }
                    let area = rw as u64 * rh as u64;
                    let key = (y0 as u32, x0 as u32, y1 as u32);
                    let take = match &best {
                        None => true,
                        Some((a, k, _)) => area > *a || (area == *a && key < *k),
                    };
                    if take {
                        best = Some((area, key, Rect::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32)));
                    }
                }
            }
        }
    }
    best.map(|b| b.2)
}

#[test]
fn matches_exhaustive_search_including_tie_break() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..120 {
        let (w, h) = if case % 10 == 0 { (64, 64) } else { (rng.random_range(1..=32), rng.random_range(1..=32)) };
        let boxes = random_boxes(&mut rng, w, h, 0..6);
        let min_side = [1, 1, 2, 4][case % 4];
        for (shape, square) in [(CropShape::Rectangle, false), (CropShape::Square, true)] {
            let got = periphery_crop(w, h, &boxes, min_side, shape).unwrap();
            let want = exhaustive(w, h, &boxes, min_side, square);
            assert_eq!(got, want, "case {case} {w}x{h} boxes {boxes:?} min_side {min_side} {shape:?}");
        }
    }
}

#[test]
fn output_never_touches_a_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let (w, h) = (rng.random_range(50..400), rng.random_range(50..400));
        let boxes = random_boxes(&mut rng, w, h, 1..10);
        if let Some(r) = periphery_crop(w, h, &boxes, 1, CropShape::Rectangle).unwrap() {
            assert!(boxes.iter().all(|b| !r.intersects(b)));
            assert!(r.x1 <= w && r.y1 <= h && r.area() > 0);
        }
    }
}

#[test]
fn box_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(20..300), rng.random_range(20..300));
        let mut boxes = random_boxes(&mut rng, w, h, 1..8);
        let before = periphery_crop(w, h, &boxes, 1, CropShape::Rectangle).unwrap();
        boxes.reverse();
        boxes.rotate_left(1);
        assert_eq!(periphery_crop(w, h, &boxes, 1, CropShape::Rectangle).unwrap(), before);
    }
}

#[test]
fn adding_a_box_never_grows_the_crop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let area = |r: Option<Rect>| r.map_or(0, |r| r.area());
    for _ in 0..300 {
        let (w, h) = (rng.random_range(20..300), rng.random_range(20..300));
        let mut boxes = random_boxes(&mut rng, w, h, 0..6);
        let before = area(periphery_crop(w, h, &boxes, 10, CropShape::Rectangle).unwrap());
        boxes.extend(random_boxes(&mut rng, w, h, 1..2));
        let after = area(periphery_crop(w, h, &boxes, 10, CropShape::Rectangle).unwrap());
        assert!(after <= before);
    }
}

#[test]
fn side_strip_around_a_centered_box() {
    let r = periphery_crop(200, 200, &[BoundingBox::new(50, 50, 150, 150)], 1, CropShape::Rectangle).unwrap().unwrap();
    assert_eq!(r.area(), 10_000);
    assert_eq!(exhaustive(200, 200, &[BoundingBox::new(50, 50, 150, 150)], 1, false), Some(r));
}

#[test]
fn corner_crop_floor_arithmetic() {
    for (w, h, n, d) in [(101u32, 57u32, 1u32, 3u32), (224, 224, 1, 2), (224, 224, 1, 1), (999, 3, 2, 3)] {
        let r = corner_crop(w, h, Fraction::new(n, d).unwrap()).unwrap();
        let (cw, ch) = (w * n / d, h * n / d);
        assert_eq!((r.width(), r.height()), (cw, ch));
        assert_eq!((r.x0, r.y1), (0, h));
    }
    assert!(corner_crop(2, 2, Fraction::new(1, 3).unwrap()).is_err());
}

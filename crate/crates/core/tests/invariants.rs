use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shufseg::analysis::{count_costs, CostScope};
use shufseg::metrics::ConfusionMatrix;
use shufseg::train::{draw_crop_offsets, draw_scale, random_crop, random_flip, CROP_SIZE, SCALES};
use shufseg::{build_network, HeadKind, LabelMap, NetworkSpec, Shape, Tensor, IGNORE_LABEL};

fn costs(head: HeadKind, h: usize, w: usize) -> shufseg::analysis::CostReport {
    let g = build_network(&NetworkSpec::with_head(head)).unwrap();
    count_costs(&g, Shape::new(1, 3, h, w).unwrap(), CostScope::Full).unwrap()
}

#[test]
fn macs_scale_with_pixel_count_and_params_do_not() {
    for head in [HeadKind::Basic, HeadKind::Dpc] {
        let small = costs(head, 224, 320);
        let large = costs(head, 448, 640);
        // every stride divides both sizes, so each feature map grows exactly
        // 4x; the pooled 1x1 maps of the image-level branch do not grow
        for (s, l) in small.rows.iter().zip(&large.rows) {
            let pooled = s.output.h() * s.output.w() == 1;
            let factor = if pooled { 1 } else { 4 };
            assert_eq!(l.macs, factor * s.macs, "{head:?} {}", s.name);
        }
        assert_eq!(large.totals.params, small.totals.params, "{head:?}");
    }
}

#[test]
fn dpc_head_costs_more_than_basic() {
    for (h, w) in [(224, 224), (360, 640), (769, 769), (97, 131)] {
        let b = costs(HeadKind::Basic, h, w);
        let d = costs(HeadKind::Dpc, h, w);
        assert!(d.totals.flops > b.totals.flops, "{h}x{w}");
        assert!(d.totals.params > b.totals.params, "{h}x{w}");
    }
}

#[test]
fn scales_are_drawn_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 70_000;
    let mut counts = [0usize; SCALES.len()];
    for _ in 0..n {
        let s = draw_scale(&mut rng);
        counts[SCALES.iter().position(|&v| v == s).unwrap()] += 1;
    }
    let expected = n as f64 / SCALES.len() as f64;
    for (s, c) in SCALES.iter().zip(counts) {
        assert!(
            (c as f64 / expected - 1.0).abs() < 0.05,
            "scale {s}: {c} draws"
        );
    }
}

#[test]
fn crop_offsets_cover_every_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = [[false; 32]; 2];
    for _ in 0..5000 {
        let (top, left) = draw_crop_offsets(800, 800, CROP_SIZE, &mut rng);
        assert!(top <= 31 && left <= 31);
        seen[0][top] = true;
        seen[1][left] = true;
    }
    assert!(seen.iter().flatten().all(|&s| s));
}

fn label_grid() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        let px = prop_oneof![9 => 0u8..5, 1 => Just(IGNORE_LABEL)];
        (Just(h), Just(w), prop::collection::vec(px, h * w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_order_does_not_matter(
        maps in prop::collection::vec((label_grid(), any::<u64>()), 1..6),
    ) {
        let mut parts = Vec::new();
        for ((h, w, gt), seed) in &maps {
            // predictions are a seeded rotation of the ground truth
            let pred: Vec<u8> = gt
                .iter()
                .map(|&v| ((v as u64 + seed) % 5) as u8)
                .collect();
            let mut cm = ConfusionMatrix::new(5);
            cm.update(
                &LabelMap::new(*h, *w, pred).unwrap(),
                &LabelMap::new(*h, *w, gt.clone()).unwrap(),
            )
            .unwrap();
            parts.push(cm);
        }
        let mut forward = ConfusionMatrix::new(5);
        for p in &parts {
            forward.merge(p).unwrap();
        }
        let mut backward = ConfusionMatrix::new(5);
        for p in parts.iter().rev() {
            backward.merge(p).unwrap();
        }
        prop_assert_eq!(&forward, &backward);
        let pixels: u64 = maps.iter().map(|((h, w, _), _)| (h * w) as u64).sum();
        prop_assert_eq!(forward.total() + forward.ignored_pixels(), pixels);
    }

    #[test]
    fn crop_and_flip_keep_image_and_labels_registered(
        (h, w, labels) in label_grid(),
        size in 1usize..16,
        seed: u64,
    ) {
        let labels = LabelMap::new(h, w, labels).unwrap();
        // channel 1 carries each pixel's label; real pixels never read 0
        let img = Tensor::from_fn(Shape::new(1, 3, h, w).unwrap(), |_, c, y, x| match c {
            1 => 1.0 + labels.at(y, x) as f32,
            _ => (y * w + x) as f32,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, l) = random_crop(&img, &labels, size, &mut rng).unwrap();
        let (i, l, _) = random_flip(&i, &l, false, &mut rng).unwrap();
        prop_assert_eq!((i.shape().h(), i.shape().w()), (size, size));
        for y in 0..size {
            for x in 0..size {
                let v = i.at(0, 1, y, x);
                if v == 0.0 {
                    prop_assert_eq!(l.at(y, x), IGNORE_LABEL);
                } else {
                    prop_assert_eq!(v, 1.0 + l.at(y, x) as f32);
                }
            }
        }
    }
}

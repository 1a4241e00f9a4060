use proptest::prelude::*;

use uda_core::evaluation::{aggregate_seeds, f1_per_class, iou_per_class, median, ConfusionMatrix, EvalReport};
use uda_core::ingestion::{normalize_dsm, tile_anchors};
use uda_core::losses::{berhu_elem, berhu_grad, cycle_loss_grad, seg_cross_entropy_grad};
use uda_core::networks::resize_bilinear;
use uda_core::segmentation_trainer::{argmax_labels, SegModel, SegTrainConfig};
use uda_core::{denormalize_image, normalize_image, DepthStats, ImageTile, LabelTile, Tensor};

const C: usize = 6;

fn label_pair() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(0..C as u8, h * w),
            prop::collection::vec(0..C as u8, h * w),
        )
    })
}

fn matrix(h: usize, w: usize, pred: &[u8], gt: &[u8]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(C);
    cm.accumulate(&LabelTile::new(h, w, pred.to_vec()).unwrap(), &LabelTile::new(h, w, gt.to_vec()).unwrap())
        .unwrap();
    cm
}

proptest! {
    #[test]
    fn anchors_cover_every_pixel(dim in 1usize..400, tile in 1usize..64, stride_frac in 0.1f64..1.0) {
        prop_assume!(tile <= dim);
        let stride = ((tile as f64 * stride_frac).ceil() as usize).max(1);
        let anchors = tile_anchors(dim, tile, stride, true);
        let mut covered = vec![false; dim];
        for &a in &anchors {
            prop_assert!(a + tile <= dim);
            covered[a..a + tile].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
        prop_assert!(anchors.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dsm_normalization_is_monotone_and_bounded(
        raw in prop::collection::vec(-50.0f32..200.0, 1..64),
        lo in -60.0f64..0.0,
        span in 0.0f64..300.0,
    ) {
        let stats = DepthStats { min: lo, max: lo + span };
        let t = normalize_dsm(1, raw.len(), &raw, stats).unwrap();
        let out = t.data();
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] <= raw[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
    }

    #[test]
    fn image_normalization_round_trips(raw in prop::collection::vec(0u16..=255, 12)) {
        let tile = normalize_image(2, 2, &raw, 8).unwrap();
        prop_assert!(tile.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(denormalize_image(&tile, 8), raw);
    }

    #[test]
    fn berhu_branches_meet_at_threshold(l in 1e-4f64..1e3) {
        let below = berhu_elem(l, l);
        let above = (l * l + l * l) / (2.0 * l);
        prop_assert!((below - above).abs() <= 1e-9 * l.max(1.0));
        prop_assert!(berhu_elem(0.5 * l, l) < berhu_elem(2.0 * l, l));
    }

    #[test]
    fn berhu_is_nonnegative_and_zero_only_on_agreement(
        pred in prop::collection::vec(0.0f64..1.0, 1..32),
        shift in -0.5f64..0.5,
    ) {
        let gt: Vec<f64> = pred.iter().map(|p| p + shift).collect();
        let (v, g) = berhu_grad(&pred, &gt).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(g.iter().all(|x| x.is_finite()));
        let (same, _) = berhu_grad(&pred, &pred).unwrap();
        prop_assert_eq!(same, 0.0);
    }

    #[test]
    fn cycle_loss_is_symmetric(
        x in prop::collection::vec(-1.0f64..1.0, 1..32),
        seed in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let y = &seed[..x.len()];
        let a = cycle_loss_grad(&x, y).unwrap().0;
        let b = cycle_loss_grad(y, &x).unwrap().0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero_per_pixel(
        scores in prop::collection::vec(-5.0f64..5.0, C * 8),
        labels in prop::collection::vec(0..C as u8, 8),
    ) {
        let (v, g) = seg_cross_entropy_grad(&scores, &labels, C).unwrap();
        prop_assert!(v >= 0.0);
        for p in 0..8 {
            let s: f64 = (0..C).map(|c| g[c * 8 + p]).sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_ordered_and_bounded((h, w, pred, gt) in label_pair()) {
        let cm = matrix(h, w, &pred, &gt);
        for (i, f) in iou_per_class(&cm).into_iter().zip(f1_per_class(&cm)) {
            prop_assert!(0.0 <= i && i <= f + 1e-15 && f <= 1.0);
        }
        prop_assert_eq!(cm.total(), (h * w) as u64);
    }

    #[test]
    fn accumulating_a_partition_equals_accumulating_the_whole((h, w, pred, gt) in label_pair(), cut in 0usize..144) {
        let whole = matrix(h, w, &pred, &gt);
        let cut = cut % (h + 1);
        let (mut parts, mut other) = (ConfusionMatrix::new(C), ConfusionMatrix::new(C));
        if cut > 0 {
            parts = matrix(cut, w, &pred[..cut * w], &gt[..cut * w]);
        }
        if cut < h {
            other = matrix(h - cut, w, &pred[cut * w..], &gt[cut * w..]);
        }
        parts.merge(&other).unwrap();
        prop_assert_eq!(parts, whole);
    }

    #[test]
    fn metrics_ignore_pixel_order((h, w, pred, gt) in label_pair(), rot in 0usize..1000) {
        let n = h * w;
        let k = rot % n;
        let rotate = |v: &[u8]| -> Vec<u8> { v[k..].iter().chain(&v[..k]).copied().collect() };
        let a = matrix(h, w, &pred, &gt);
        let b = matrix(h, w, &rotate(&pred), &rotate(&gt));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn seed_aggregation_is_order_invariant(values in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let reports: Vec<(Option<u64>, EvalReport)> = values
            .iter()
            .enumerate()
            .map(|(s, &v)| {
                let mut cm = ConfusionMatrix::new(2);
                let right = (v * 100.0) as usize;
                let pred: Vec<u8> = (0..100).map(|i| u8::from(i >= right)).collect();
                cm.accumulate(&LabelTile::new(10, 10, pred).unwrap(), &LabelTile::new(10, 10, vec![0; 100]).unwrap()).unwrap();
                (Some(s as u64), EvalReport::from_matrix(&cm))
            })
            .collect();
        let mut reversed = reports.clone();
        reversed.reverse();
        let a = aggregate_seeds(&reports).unwrap();
        let b = aggregate_seeds(&reversed).unwrap();
        prop_assert!((a.miou - b.miou).abs() < 1e-12);
        let m: Vec<f64> = reports.iter().map(|(_, r)| r.miou).collect();
        let med = median(&m);
        prop_assert!(m.iter().filter(|&&x| x < med).count() <= m.len() / 2);
        prop_assert!(m.iter().filter(|&&x| x > med).count() <= m.len() / 2);
    }

    #[test]
    fn argmax_prefers_the_lowest_tied_class(
        scores in prop::collection::vec(prop::sample::select(vec![-1.0f32, 0.0, 1.0]), C * 4),
    ) {
        let t = Tensor::from_vec([1, C, 2, 2], scores.clone());
        let labels = argmax_labels(&t).unwrap();
        for p in 0..4 {
            let best = (0..C).map(|c| scores[c * 4 + p]).fold(f32::NEG_INFINITY, f32::max);
            let first = (0..C).find(|&c| scores[c * 4 + p] == best).unwrap();
            prop_assert_eq!(labels[0].data()[p] as usize, first);
        }
    }

    #[test]
    fn resize_to_same_extent_is_identity(h in 1usize..10, w in 1usize..10, phase in 0.0f32..6.0) {
        let x = Tensor::from_vec([1, 2, h, w], (0..2 * h * w).map(|i| (i as f32 + phase).sin()).collect());
        prop_assert!(resize_bilinear(&x, h, w) == x);
        let y = resize_bilinear(&x, 2 * h + 1, w + 3);
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn predictions_are_valid_label_tiles(seed in 0u64..1000, phase in 0.0f32..6.0) {
        let cfg = SegTrainConfig { width: 4, seed, ..SegTrainConfig::default() };
        let model = SegModel::new(&cfg, C, (16, 16)).unwrap();
        let tiles: Vec<ImageTile> = (0..3)
            .map(|i| ImageTile::new(16, 16, (0..16 * 16 * 3).map(|k| (k as f32 * 0.1 + phase + i as f32).sin()).collect()).unwrap())
            .collect();
        let preds = model.predict(&tiles).unwrap();
        prop_assert_eq!(preds.len(), 3);
        for p in preds {
            prop_assert_eq!(p.hw(), (16, 16));
            prop_assert!(p.data().iter().all(|&c| (c as usize) < C));
        }
    }
}

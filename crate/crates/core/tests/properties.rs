mod common;

use gacunet::cli::RunConfig;
use gacunet::dataio::{augment_expand, split_dataset, train_count, ImagePair, Raster};
use gacunet::metrics::{binarize, default_thresholds, mean_average_precision, Overlap};
use gacunet::model::{Model, ModelSpec, Variant};
use gacunet::{Tape, Tensor};
use proptest::prelude::*;

fn masks(len: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (
        prop::collection::vec(any::<bool>(), len),
        prop::collection::vec(any::<bool>(), len),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_a_function_of_iou((p, t) in masks(64)) {
        let o = Overlap::count(&p, &t).unwrap();
        let (iou, dice) = (o.iou(), o.dice());
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
        prop_assert!(iou <= dice + 1e-15);
        prop_assert!((0.0..=1.0).contains(&iou));
    }

    #[test]
    fn overlap_is_symmetric((p, t) in masks(50)) {
        let a = Overlap::count(&p, &t).unwrap();
        let b = Overlap::count(&t, &p).unwrap();
        prop_assert_eq!(a.iou(), b.iou());
        prop_assert_eq!(a.dice(), b.dice());
    }

    #[test]
    fn pixel_permutation_leaves_scores_unchanged((p, t) in masks(40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.shuffle(&mut common::rng(seed));
        let pp: Vec<bool> = idx.iter().map(|&i| p[i]).collect();
        let tp: Vec<bool> = idx.iter().map(|&i| t[i]).collect();
        prop_assert_eq!(Overlap::count(&p, &t).unwrap(), Overlap::count(&pp, &tp).unwrap());
    }

    #[test]
    fn map_lies_between_extremes(ious in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let map = mean_average_precision(&ious, &default_thresholds()).unwrap();
        prop_assert!((0.0..=1.0).contains(&map));
        let better: Vec<f64> = ious.iter().map(|v| (v + 0.1).min(1.0)).collect();
        prop_assert!(mean_average_precision(&better, &default_thresholds()).unwrap() >= map);
    }

    #[test]
    fn binarize_is_strict(values in prop::collection::vec(-1.0f64..2.0, 0..30), t in 0.0f64..1.0) {
        let b = binarize(&values, t);
        for (v, on) in values.iter().zip(&b) {
            prop_assert_eq!(*on, *v > t);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..8, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let x = common::uniform(&[rows, cols], -20.0, 20.0, &mut r);
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(x);
        let s = tape.softmax(v, 1).unwrap();
        let out = tape.value(s);
        for i in 0..rows {
            let sum: f64 = (0..cols).map(|j| out.at(&[i, j])).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_determinism(n in 2usize..120, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = split_dataset(&items, seed).unwrap();
        prop_assert_eq!(train.len(), n * 7 / 10);
        prop_assert_eq!(train.len(), train_count(n));
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert_eq!(split_dataset(&items, seed).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.sort();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn config_overrides_beat_the_file(file_seed in 0u64..1000, arg_seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, format!("# run\nseed = {file_seed}\nepochs=3\n")).unwrap();
        let p = path.display().to_string();
        let args: Vec<String> = ["--seed", &arg_seed.to_string(), "--config", &p]
            .iter().map(|s| s.to_string()).collect();
        let cfg = RunConfig::from_args(&args).unwrap();
        prop_assert_eq!(cfg.seed().unwrap(), arg_seed);
        prop_assert_eq!(cfg.get("epochs"), "3");
        let only_file = RunConfig::from_args(&["--config".into(), p]).unwrap();
        prop_assert_eq!(only_file.seed().unwrap(), file_seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn augmentation_yields_fifteen_crops(h in 4usize..20, w in 4usize..20, crop in 1usize..4, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let img: Vec<f64> = common::uniform(&[h * w * 3], 0.0, 1.0, &mut r).data().to_vec();
        let mask: Vec<f64> = common::random_mask(h * w, 0.4, &mut r)
            .into_iter().map(f64::from).collect();
        let pair = ImagePair::new(
            Raster::new(h, w, 3, img).unwrap(),
            Raster::new(h, w, 1, mask).unwrap(),
            "p",
        ).unwrap();
        let out = augment_expand(&pair, crop).unwrap();
        prop_assert_eq!(out.len(), 15);
        let mut names: Vec<String> = out.iter().map(|a| a.name()).collect();
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), 15);
        for a in &out {
            prop_assert_eq!((a.pair.height(), a.pair.width()), (crop, crop));
            prop_assert!(a.pair.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn model_output_is_one_probability_plane(
        variant in prop_oneof![Just(Variant::GacUnet), Just(Variant::PlainUnet)],
        depth in 1usize..3,
        width in 2usize..5,
        scale in 1usize..3,
        seed in any::<u64>(),
    ) {
        let n = (1 << depth) * 2 * scale;
        let widths: Vec<usize> = (0..depth).map(|i| width << i).collect();
        let spec = ModelSpec::new(variant, n, widths).with_seed(seed);
        let model = Model::<f64>::build(spec).unwrap();
        let mut r = common::rng(seed);
        let x: Tensor<f64> = common::uniform(&[3, n, n], 0.0, 1.0, &mut r);
        let y = model.predict(&x).unwrap();
        prop_assert_eq!(y.shape(), &[1, n, n][..]);
        prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

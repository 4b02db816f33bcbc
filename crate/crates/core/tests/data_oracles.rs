mod common;

use common::rng;
use gacunet::dataio::netpbm::{decode, encode, PnmKind};
use gacunet::dataio::synthetic::flood_set;
use gacunet::dataio::{augment_expand, five_crop, resize_bilinear, resize_pair, split_dataset, CropPosition, FlipVariant, ImagePair, Raster};
use rand::Rng;

#[test]
fn pixmap_round_trip_is_byte_exact() {
    let mut r = rng(1);
    for kind in [PnmKind::Pixmap, PnmKind::Graymap] {
        let ch = if kind == PnmKind::Pixmap { 3 } else { 1 };
        let bytes: Vec<u8> = (0..8 * 8 * ch).map(|_| r.gen()).collect();
        let mut file = format!("{}\n8 8\n255\n", if ch == 3 { "P6" } else { "P5" }).into_bytes();
        file.extend(&bytes);
        let raster = decode(&file, kind, "mem").unwrap();
        assert_eq!(encode(&raster, kind).unwrap(), file);
    }
}

#[test]
fn bilinear_two_by_two_checkerboard() {
    let src = Raster::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let out = resize_bilinear(&src, 4, 4).unwrap();
    // Half-pixel sampling puts the output rows at source rows -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
    #[rustfmt::skip]
    let expected = [
        0.0,  0.25,  0.75,  1.0,
        0.25, 0.375, 0.625, 0.75,
        0.75, 0.625, 0.375, 0.25,
        1.0,  0.75,  0.25,  0.0,
    ];
    assert_eq!(out.data(), expected);
}

fn bilinear_oracle(src: &Raster, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w, c) = (src.height(), src.width(), src.channels());
    let coord = |i: usize, n: usize, m: usize| {
        let s = ((i as f64 + 0.5) * n as f64 / m as f64 - 0.5).max(0.0).min((n - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(n - 1), s - lo as f64)
    };
    let mut out = Vec::new();
    for i in 0..oh {
        let (y0, y1, fy) = coord(i, h, oh);
        for j in 0..ow {
            let (x0, x1, fx) = coord(j, w, ow);
            for k in 0..c {
                let v = src.get(y0, x0, k) * (1.0 - fy) * (1.0 - fx)
                    + src.get(y0, x1, k) * (1.0 - fy) * fx
                    + src.get(y1, x0, k) * fy * (1.0 - fx)
                    + src.get(y1, x1, k) * fy * fx;
                out.push(v);
            }
        }
    }
    out
}

#[test]
fn bilinear_matches_scalar_reference() {
    let mut r = rng(2);
    for &(h, w, oh, ow) in &[(3, 5, 7, 2), (6, 6, 12, 12), (9, 4, 3, 8)] {
        let src = Raster::new(h, w, 3, (0..h * w * 3).map(|_| r.gen()).collect()).unwrap();
        let out = resize_bilinear(&src, oh, ow).unwrap();
        common::assert_close(out.data(), &bilinear_oracle(&src, oh, ow), 1e-12, "resize");
    }
}

#[test]
fn resized_masks_stay_binary() {
    for pair in flood_set(3, 20, 3) {
        let out = resize_pair(&pair, 33, 17).unwrap();
        assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!((out.image.height(), out.image.width()), (out.mask.height(), out.mask.width()));
    }
}

#[test]
fn crops_equal_submatrices() {
    let pair = &flood_set(1, 24, 4)[0];
    for (pos, crop) in five_crop(pair, 10).unwrap() {
        let (r0, c0) = match pos {
            CropPosition::TopLeft => (0, 0),
            CropPosition::TopRight => (0, 14),
            CropPosition::BottomLeft => (14, 0),
            CropPosition::BottomRight => (14, 14),
            CropPosition::Center => (7, 7),
        };
        for y in 0..10 {
            for x in 0..10 {
                for ch in 0..3 {
                    assert_eq!(crop.image.get(y, x, ch), pair.image.get(r0 + y, c0 + x, ch));
                }
                assert_eq!(crop.mask.get(y, x, 0), pair.mask.get(r0 + y, c0 + x, 0));
            }
        }
    }
}

#[test]
fn mirror_symmetric_pair_has_equal_identity_and_flip_crop_sets() {
    let (h, w) = (12, 12);
    let mut image = Raster::filled(h, w, 3, 0.0);
    let mut mask = Raster::filled(h, w, 1, 0.0);
    let mut r = rng(5);
    for y in 0..h {
        for x in 0..w / 2 {
            let v: f64 = r.gen();
            for ch in 0..3 {
                image.set(y, x, ch, v);
                image.set(y, w - 1 - x, ch, v);
            }
            let m = if v > 0.5 { 1.0 } else { 0.0 };
            mask.set(y, x, 0, m);
            mask.set(y, w - 1 - x, 0, m);
        }
    }
    let pair = ImagePair::new(image, mask, "sym").unwrap();
    let out = augment_expand(&pair, 8).unwrap();
    assert_eq!(out.len(), 15);
    let set = |v: FlipVariant| -> Vec<Vec<f64>> {
        let mut s: Vec<Vec<f64>> = out
            .iter()
            .filter(|a| a.variant == v)
            .map(|a| a.pair.image.data().to_vec())
            .collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s
    };
    assert_eq!(set(FlipVariant::Identity), set(FlipVariant::Horizontal));
}

#[test]
fn split_sizes_and_seed_dependence() {
    let ids: Vec<u32> = (0..290).collect();
    let (train, test) = split_dataset(&ids, 0).unwrap();
    assert_eq!((train.len(), test.len()), (203, 87));
    let ten: Vec<u32> = (0..10).collect();
    let a = split_dataset(&ten, 1).unwrap();
    let b = split_dataset(&ten, 2).unwrap();
    assert_eq!((a.0.len(), b.0.len()), (7, 7));
    assert_ne!(a.0, b.0);
    assert!(split_dataset::<u32>(&[], 0).is_err());
}

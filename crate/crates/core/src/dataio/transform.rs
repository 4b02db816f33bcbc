use super::{ImagePair, Raster};
use crate::error::{Error, Result};

/// Mask threshold: values strictly above become 1.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

pub fn binarize_mask(mask: &Raster) -> Raster {
    mask.map(|v| if v > BINARIZE_THRESHOLD { 1.0 } else { 0.0 })
}

/// Bilinear resampling with half-pixel centers and edge clamping:
/// output pixel `i` samples source coordinate `(i + 0.5)·in/out - 0.5`.
pub fn resize_bilinear(src: &Raster, out_h: usize, out_w: usize) -> Result<Raster> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "resize_bilinear",
            format!("output extents must be positive, got {out_h}x{out_w}"),
        ));
    }
    let (h, w, c) = (src.height(), src.width(), src.channels());
    if (h, w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let ys: Vec<(usize, usize, f64)> = (0..out_h).map(|i| sample_axis(i, h, out_h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|j| sample_axis(j, w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = src.get(y0, x0, ch) * (1.0 - fx) + src.get(y0, x1, ch) * fx;
                let bottom = src.get(y1, x0, ch) * (1.0 - fx) + src.get(y1, x1, ch) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Raster::new(out_h, out_w, c, data)
}

/// Source indices and interpolation weight for output index `i`.
fn sample_axis(i: usize, len: usize, out_len: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * len as f64 / out_len as f64 - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, pos - lo as f64)
}

/// Resizes image and mask together; the mask is re-binarized afterwards.
pub fn resize_pair(pair: &ImagePair, out_h: usize, out_w: usize) -> Result<ImagePair> {
    Ok(ImagePair {
        image: resize_bilinear(&pair.image, out_h, out_w)?,
        mask: binarize_mask(&resize_bilinear(&pair.mask, out_h, out_w)?),
        source_id: pair.source_id.clone(),
    })
}

pub fn flip_horizontal(r: &Raster) -> Raster {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let mut data = Vec::with_capacity(r.data().len());
    for y in 0..h {
        for x in (0..w).rev() {
            data.extend_from_slice(&r.data()[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Raster::new(h, w, c, data).expect("same dims")
}

pub fn flip_vertical(r: &Raster) -> Raster {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let mut data = Vec::with_capacity(r.data().len());
    for y in (0..h).rev() {
        data.extend_from_slice(&r.data()[y * w * c..(y + 1) * w * c]);
    }
    Raster::new(h, w, c, data).expect("same dims")
}

/// Crop window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CropPosition {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl CropPosition {
    pub const ALL: [CropPosition; 5] = [
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
        CropPosition::Center,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            CropPosition::TopLeft => "tl",
            CropPosition::TopRight => "tr",
            CropPosition::BottomLeft => "bl",
            CropPosition::BottomRight => "br",
            CropPosition::Center => "c",
        }
    }

    /// `(row, col)` of the window's top-left corner.
    pub fn offset(self, h: usize, w: usize, crop: usize) -> (usize, usize) {
        match self {
            CropPosition::TopLeft => (0, 0),
            CropPosition::TopRight => (0, w - crop),
            CropPosition::BottomLeft => (h - crop, 0),
            CropPosition::BottomRight => (h - crop, w - crop),
            CropPosition::Center => ((h - crop) / 2, (w - crop) / 2),
        }
    }
}

/// Flip applied before cropping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlipVariant {
    Identity,
    Horizontal,
    Vertical,
}

impl FlipVariant {
    pub const ALL: [FlipVariant; 3] = [
        FlipVariant::Identity,
        FlipVariant::Horizontal,
        FlipVariant::Vertical,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FlipVariant::Identity => "id",
            FlipVariant::Horizontal => "hf",
            FlipVariant::Vertical => "vf",
        }
    }

    pub fn apply(self, pair: &ImagePair) -> ImagePair {
        let f = match self {
            FlipVariant::Identity => return pair.clone(),
            FlipVariant::Horizontal => flip_horizontal,
            FlipVariant::Vertical => flip_vertical,
        };
        ImagePair {
            image: f(&pair.image),
            mask: f(&pair.mask),
            source_id: pair.source_id.clone(),
        }
    }
}

/// One augmented sample with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub variant: FlipVariant,
    pub crop: CropPosition,
    pub pair: ImagePair,
}

impl AugmentedPair {
    /// `<stem>_<variant>_<crop>`.
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}",
            self.pair.source_id,
            self.variant.tag(),
            self.crop.tag()
        )
    }
}

/// Four corner crops and a center crop, in [`CropPosition::ALL`] order.
pub fn five_crop(pair: &ImagePair, crop: usize) -> Result<Vec<(CropPosition, ImagePair)>> {
    let (h, w) = (pair.image.height(), pair.image.width());
    if crop == 0 || h < crop || w < crop {
        return Err(Error::invalid(
            "five_crop",
            format!("crop {crop} does not fit {h}x{w}"),
        ));
    }
    Ok(CropPosition::ALL
        .iter()
        .map(|&pos| {
            let (r, c) = pos.offset(h, w, crop);
            let cropped = ImagePair {
                image: pair.image.crop(r, c, crop, crop),
                mask: pair.mask.crop(r, c, crop, crop),
                source_id: pair.source_id.clone(),
            };
            (pos, cropped)
        })
        .collect())
}

/// Five crops of the pair itself and of its horizontal and vertical flips: 15 pairs,
/// ordered by variant then crop.
pub fn augment_expand(pair: &ImagePair, crop: usize) -> Result<Vec<AugmentedPair>> {
    let mut out = Vec::with_capacity(15);
    for variant in FlipVariant::ALL {
        for (crop_pos, cropped) in five_crop(&variant.apply(pair), crop)? {
            out.push(AugmentedPair {
                variant,
                crop: crop_pos,
                pair: cropped,
            });
        }
    }
    Ok(out)
}

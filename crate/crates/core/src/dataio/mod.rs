//! Image/mask I/O, preprocessing and augmentation, dataset splitting, and the
//! synthetic flood generator.

pub mod netpbm;
mod split;
pub mod synthetic;
mod transform;

pub use netpbm::{load_image, load_mask, save_image, save_mask};
pub use split::{
    discover_pairs, split_dataset, train_count, DatasetManifest, ManifestEntry, Split,
};
pub use transform::{
    augment_expand, binarize_mask, five_crop, flip_horizontal, flip_vertical, resize_bilinear,
    resize_pair, AugmentedPair, CropPosition, FlipVariant, BINARIZE_THRESHOLD,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `H×W×C` interleaved array of reals, usually in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::invalid(
                "raster",
                format!(
                    "{height}x{width}x{channels} does not match {} values",
                    data.len()
                ),
            ));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + ch] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Raster {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(
            top + h <= self.height && left + w <= self.width,
            "crop outside raster"
        );
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Raster {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    /// Planar `C×H×W` tensor.
    pub fn to_chw<T: Real>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = Vec::with_capacity(self.data.len());
        for ch in 0..c {
            for i in 0..h * w {
                data.push(T::of(self.data[i * c + ch]));
            }
        }
        Tensor::new(vec![c, h, w], data).expect("consistent dims")
    }

    /// Inverse of [`to_chw`](Self::to_chw).
    pub fn from_chw<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::invalid(
                "raster",
                format!("expected C×H×W tensor, got {s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = t.data()[ch * h * w + i].as_f64();
            }
        }
        Raster::new(h, w, c, data)
    }

    /// Fraction of values strictly above 0.5.
    pub fn positive_fraction(&self) -> f64 {
        self.data
            .iter()
            .filter(|&&v| v > BINARIZE_THRESHOLD)
            .count() as f64
            / self.data.len() as f64
    }
}

/// RGB image with its binary flood mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub image: Raster,
    pub mask: Raster,
    pub source_id: String,
}

impl ImagePair {
    pub fn new(image: Raster, mask: Raster, source_id: impl Into<String>) -> Result<Self> {
        if image.channels() != 3 || mask.channels() != 1 {
            return Err(Error::Dataset(format!(
                "expected 3-channel image and 1-channel mask, got {} and {}",
                image.channels(),
                mask.channels()
            )));
        }
        if (image.height(), image.width()) != (mask.height(), mask.width()) {
            return Err(Error::Dataset(format!(
                "image is {}x{} but mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(ImagePair {
            image,
            mask,
            source_id: source_id.into(),
        })
    }

    /// Reads an image/mask pair and binarizes the mask. The id is the image file stem.
    pub fn load(image_path: &Path, mask_path: &Path) -> Result<Self> {
        let id = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let pair = ImagePair::new(
            load_image(image_path)?,
            binarize_mask(&load_mask(mask_path)?),
            id,
        )?;
        Ok(pair)
    }

    pub fn save(&self, image_path: &Path, mask_path: &Path) -> Result<()> {
        save_image(image_path, &self.image)?;
        save_mask(mask_path, &self.mask)
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_round_trip() {
        let r = Raster::new(2, 3, 3, (0..18).map(f64::from).collect()).unwrap();
        let t = r.to_chw::<f64>();
        assert_eq!(t.shape(), &[3, 2, 3]);
        assert_eq!(t.at(&[1, 0, 2]), r.get(0, 2, 1));
        assert_eq!(Raster::from_chw(&t).unwrap(), r);
    }

    #[test]
    fn pair_dimensions_must_agree() {
        let img = Raster::filled(4, 4, 3, 0.0);
        assert!(ImagePair::new(img.clone(), Raster::filled(4, 5, 1, 0.0), "a").is_err());
        assert!(ImagePair::new(img, Raster::filled(4, 4, 1, 0.0), "a").is_ok());
    }
}

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::labels::ArtifactLabel;

/// Binary per-pixel region attached to one artifact label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    pub label: ArtifactLabel,
}

impl RegionMask {
    pub fn empty(width: u32, height: u32, label: ArtifactLabel) -> Self {
        RegionMask {
            width,
            height,
            bits: vec![false; (width * height) as usize],
            label,
        }
    }

    pub fn from_fn(width: u32, height: u32, label: ArtifactLabel, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height, label);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn union_with(&mut self, other: &RegionMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Grows the region by `radius` pixels (square structuring element).
    pub fn dilate(&self, radius: u32) -> RegionMask {
        let r = radius as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        RegionMask::from_fn(self.width, self.height, self.label, |x, y| {
            let (x, y) = (x as i64, y as i64);
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && self.get(nx as u32, ny as u32)
                })
            })
        })
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn from_image(img: &GrayImage, label: ArtifactLabel) -> Self {
        RegionMask::from_fn(img.width(), img.height(), label, |x, y| img.get_pixel(x, y)[0] > 127)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|e| Error::image(path, e))
    }

    pub fn load(path: &Path, label: ArtifactLabel) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        Ok(Self::from_image(&img, label))
    }
}

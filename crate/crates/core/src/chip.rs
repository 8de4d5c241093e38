//! 8-bit raster chips and their normalized `[-1, 1]` view.

use std::path::Path;

use image::{GrayImage, ImageBuffer, RgbImage};

use crate::error::{contract_err, dim_err, Error, Result};
use crate::tensor::Tensor;

/// Planar (channel-major) 8-bit image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageChip {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageChip {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(contract_err!("chips have 1 or 3 channels, got {channels}"));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(dim_err!(
                "{width}x{height}x{channels} chip needs {} bytes, got {}",
                width * height * channels,
                data.len()
            ));
        }
        Ok(ImageChip { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_extent(&self, other: &ImageChip) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Split into single-channel chips.
    pub fn split_channels(&self) -> Vec<ImageChip> {
        (0..self.channels)
            .map(|c| ImageChip::new(self.width, self.height, 1, self.plane(c).to_vec()).unwrap())
            .collect()
    }

    pub fn merge_channels(planes: &[ImageChip]) -> Result<ImageChip> {
        let first = planes.first().ok_or_else(|| contract_err!("no planes to merge"))?;
        if planes.iter().any(|p| p.channels != 1 || !p.same_extent(first)) {
            return Err(dim_err!("planes must be single-channel with equal extents"));
        }
        let data = planes.iter().flat_map(|p| p.data.iter().copied()).collect();
        ImageChip::new(first.width, first.height, planes.len(), data)
    }

    /// Gray replicated to three channels; 3-channel chips are returned as is.
    pub fn to_rgb(&self) -> ImageChip {
        if self.channels == 3 {
            return self.clone();
        }
        ImageChip::merge_channels(&[self.clone(), self.clone(), self.clone()]).unwrap()
    }

    /// `v / 127.5 - 1`, shape `[channels, height, width]`.
    pub fn normalized(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 127.5 - 1.0).collect()
    }

    /// `v / 255`, the scale distances are measured on.
    pub fn unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / 255.0).collect()
    }

    /// Inverse of [`ImageChip::normalized`], rounding and clamping to 8 bits.
    pub fn from_normalized(width: usize, height: usize, channels: usize, values: &[f32]) -> Result<Self> {
        let data = values.iter().map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8).collect();
        Self::new(width, height, channels, data)
    }

    /// Stack chips into a `[N, C, H, W]` tensor of normalized values.
    pub fn batch_tensor(chips: &[&ImageChip]) -> Result<Tensor<f32>> {
        let first = chips.first().ok_or_else(|| contract_err!("empty batch"))?;
        let mut data = Vec::with_capacity(chips.len() * first.data.len());
        for c in chips {
            if !c.same_extent(first) || c.channels != first.channels {
                return Err(dim_err!("batch chips differ in shape"));
            }
            data.extend(c.normalized());
        }
        Tensor::new([chips.len(), first.channels, first.height, first.width], data)
    }

    pub fn load_png(path: &Path) -> Result<ImageChip> {
        let img = image::open(path)?;
        let chip = if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            ImageChip::from_fn(w, h, 3, |c, y, x| raw[(y * w + x) * 3 + c])?
        } else {
            let g = img.to_luma8();
            let (w, h) = (g.width() as usize, g.height() as usize);
            ImageChip::new(w, h, 1, g.into_raw())?
        };
        Ok(chip)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            let img: GrayImage = ImageBuffer::from_raw(w, h, self.data.clone())
                .ok_or_else(|| Error::Format("gray buffer size".into()))?;
            img.save(path)?;
        } else {
            let mut raw = Vec::with_capacity(self.data.len());
            for y in 0..self.height {
                for x in 0..self.width {
                    for c in 0..3 {
                        raw.push(self.get(c, y, x));
                    }
                }
            }
            let img: RgbImage =
                ImageBuffer::from_raw(w, h, raw).ok_or_else(|| Error::Format("rgb buffer size".into()))?;
            img.save(path)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trips_every_level() {
        let chip = ImageChip::from_fn(16, 16, 1, |_, y, x| (y * 16 + x) as u8).unwrap();
        let back = ImageChip::from_normalized(16, 16, 1, &chip.normalized()).unwrap();
        assert_eq!(chip, back);
        assert!(chip.normalized().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = ImageChip::from_fn(5, 4, 3, |c, y, x| (c * 70 + y * 9 + x) as u8).unwrap();
        let gray = ImageChip::from_fn(5, 4, 1, |_, y, x| (y * 30 + x) as u8).unwrap();
        rgb.save_png(&dir.path().join("a.png")).unwrap();
        gray.save_png(&dir.path().join("b.png")).unwrap();
        assert_eq!(ImageChip::load_png(&dir.path().join("a.png")).unwrap(), rgb);
        assert_eq!(ImageChip::load_png(&dir.path().join("b.png")).unwrap(), gray);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageChip::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(ImageChip::new(2, 2, 1, vec![0; 3]).is_err());
    }
}

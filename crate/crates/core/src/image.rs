//! Minimal owned raster buffers shared by every stage of the pipeline.

use std::path::Path;

use image::{ColorType, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

/// Row-major, channel-interleaved 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Wraps an existing buffer. Returns `None` when the length does not match.
    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Self {
            width,
            height,
            channels,
            data,
        })
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

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = self.index(x, y);
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[self.index(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let i = self.index(x, y) + c;
        self.data[i] = v;
    }

    /// Copies the window `[x0, x0+w) × [y0, y0+h)`; the window must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut out = Image::new(w, h, self.channels);
        let row = w * self.channels;
        for y in 0..h {
            let src = self.index(x0, y0 + y);
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    /// Replicates a single-channel image into three identical planes.
    pub fn gray_to_rgb(&self) -> Image {
        assert_eq!(self.channels, 1);
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn hflip(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(self.width - 1 - x, y);
                let dst = out.index(x, y);
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    pub fn vflip(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        let row = self.width * self.channels;
        for y in 0..self.height {
            let src = (self.height - 1 - y) * row;
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    /// Rotates 90° counter-clockwise: output (x, y) takes input (W-1-y, x).
    pub fn rotate90(&self) -> Image {
        let mut out = Image::new(self.height, self.width, self.channels);
        for y in 0..out.height {
            for x in 0..out.width {
                let src = self.index(self.width - 1 - y, x);
                let dst = out.index(x, y);
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let color = match self.channels {
            1 => ColorType::L8,
            3 => ColorType::Rgb8,
            4 => ColorType::Rgba8,
            n => panic!("cannot encode {n}-channel image as PNG"),
        };
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
        )
    }

    /// Decodes a PNG as 8-bit gray or RGB. Other layouts are returned as `Err(color)`.
    pub fn load_png(path: &Path) -> Result<Result<Image, ColorType>, image::ImageError> {
        let dynamic = image::open(path)?;
        let color = dynamic.color();
        let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
        Ok(match dynamic {
            image::DynamicImage::ImageLuma8(buf) => Ok(Image::from_gray(buf)),
            image::DynamicImage::ImageRgb8(buf) => {
                Ok(Image::from_raw(w, h, 3, buf.into_raw()).expect("rgb buffer length"))
            }
            _ => Err(color),
        })
    }

    fn from_gray(buf: GrayImage) -> Image {
        let (w, h) = (buf.width() as usize, buf.height() as usize);
        Image::from_raw(w, h, 1, buf.into_raw()).expect("gray buffer length")
    }

    pub fn to_rgb_buffer(&self) -> Option<RgbImage> {
        (self.channels == 3).then(|| {
            ImageBuffer::<Rgb<u8>, _>::from_raw(
                self.width as u32,
                self.height as u32,
                self.data.clone(),
            )
            .expect("rgb buffer length")
        })
    }

    pub fn to_gray_buffer(&self) -> Option<GrayImage> {
        (self.channels == 1).then(|| {
            ImageBuffer::<Luma<u8>, _>::from_raw(
                self.width as u32,
                self.height as u32,
                self.data.clone(),
            )
            .expect("gray buffer length")
        })
    }
}

/// One validity bit per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Mask {
        let mut out = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, self.get(x0 + x, y0 + y));
            }
        }
        out
    }

    /// 8-bit encoding: 255 for valid, 0 otherwise.
    pub fn to_image(&self) -> Image {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Image::from_raw(self.width, self.height, 1, data).expect("mask length")
    }

    /// Any sample ≥ 128 in the first channel counts as valid.
    pub fn from_image(img: &Image) -> Mask {
        let bits = (0..img.height())
            .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
            .map(|(x, y)| img.get(x, y, 0) >= 128)
            .collect();
        Mask {
            width: img.width(),
            height: img.height(),
            bits,
        }
    }
}

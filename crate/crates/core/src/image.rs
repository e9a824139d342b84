//! Square RGB frames and the few raster helpers the pipeline needs.

use image::{imageops, RgbImage};

/// One 8-bit RGB frame, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFrame {
    pub index: usize,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ImageFrame {
    pub fn new(index: usize, width: u32, height: u32, pixels: Vec<u8>) -> Self {
        Self {
            index,
            width,
            height,
            pixels,
        }
    }

    /// A frame filled with a single color.
    pub fn filled(index: usize, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = (width * height) as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(index, width, height, pixels)
    }

    pub fn from_rgb_image(index: usize, img: RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::new(index, w, h, img.into_raw())
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("pixel buffer length matches dimensions")
    }

    /// Lossless PNG bytes.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("encoding to memory");
        out.into_inner()
    }

    /// Loads any supported image file as RGB.
    pub fn open(index: usize, path: &std::path::Path) -> Result<Self, image::ImageError> {
        Ok(Self::from_rgb_image(index, image::open(path)?.to_rgb8()))
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = ((y * self.width + x) * 3) as usize;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = ((y * self.width + x) * 3) as usize;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn buffer_ok(&self) -> bool {
        self.pixels.len() == (self.width as usize) * (self.height as usize) * 3
    }

    /// Mean color over all pixels.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut acc = [0u64; 3];
        for px in self.pixels.chunks_exact(3) {
            acc[0] += px[0] as u64;
            acc[1] += px[1] as u64;
            acc[2] += px[2] as u64;
        }
        let n = (self.width as u64 * self.height as u64).max(1) as f64;
        [acc[0] as f64 / n, acc[1] as f64 / n, acc[2] as f64 / n]
    }

    /// Luminance plane as f32, used by the tracker and gradient features.
    pub fn gray(&self) -> GrayPlane {
        let data = self
            .pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect();
        GrayPlane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear resize to `w`×`h`.
    pub fn resized(&self, w: u32, h: u32) -> ImageFrame {
        let img = imageops::resize(&self.to_rgb_image(), w, h, imageops::FilterType::Triangle);
        ImageFrame::from_rgb_image(self.index, img)
    }

    /// Copy of the `w`×`h` region at (`x`, `y`). The region must lie inside the frame.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> ImageFrame {
        let img = imageops::crop_imm(&self.to_rgb_image(), x, y, w, h).to_image();
        ImageFrame::from_rgb_image(self.index, img)
    }

    pub fn mirrored(&self) -> ImageFrame {
        let img = imageops::flip_horizontal(&self.to_rgb_image());
        ImageFrame::from_rgb_image(self.index, img)
    }

    /// Paste `src` with its top-left corner at (`x`, `y`). `src` must fit.
    pub fn paste(&mut self, src: &ImageFrame, x: u32, y: u32) {
        let row = (src.width * 3) as usize;
        for sy in 0..src.height {
            let s = (sy * src.width * 3) as usize;
            let d = (((y + sy) * self.width + x) * 3) as usize;
            self.pixels[d..d + row].copy_from_slice(&src.pixels[s..s + row]);
        }
    }
}

/// Single-channel f32 image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl GrayPlane {
    #[inline]
    pub fn at(&self, x: i64, y: i64) -> f32 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[cy * self.width as usize + cx]
    }

    /// Bilinear sample with border replication.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let a = self.at(xi, yi);
        let b = self.at(xi + 1, yi);
        let c = self.at(xi, yi + 1);
        let d = self.at(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_and_crop_preserve_buffer_shape() {
        let mut f = ImageFrame::filled(0, 8, 8, [1, 2, 3]);
        f.set_pixel(0, 0, [9, 9, 9]);
        let m = f.mirrored();
        assert_eq!(m.pixel(7, 0), [9, 9, 9]);
        let c = f.crop(0, 0, 4, 4);
        assert!(c.buffer_ok());
        assert_eq!(c.pixel(0, 0), [9, 9, 9]);
    }

    #[test]
    fn paste_places_block() {
        let mut canvas = ImageFrame::filled(0, 10, 10, [0, 0, 0]);
        let block = ImageFrame::filled(0, 3, 2, [5, 6, 7]);
        canvas.paste(&block, 4, 5);
        assert_eq!(canvas.pixel(4, 5), [5, 6, 7]);
        assert_eq!(canvas.pixel(6, 6), [5, 6, 7]);
        assert_eq!(canvas.pixel(7, 6), [0, 0, 0]);
        assert_eq!(canvas.pixel(4, 7), [0, 0, 0]);
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let mut f = ImageFrame::filled(3, 5, 4, [10, 20, 30]);
        f.set_pixel(4, 3, [255, 0, 7]);
        let back = image::load_from_memory(&f.encode_png()).unwrap().to_rgb8();
        assert_eq!(ImageFrame::from_rgb_image(3, back), f);
    }
}

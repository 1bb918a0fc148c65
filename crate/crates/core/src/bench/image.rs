//! Images in `[0, 1]`, PNG I/O and procedural test textures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::{grid_coord, resample_rotate_slice};
use crate::train::Dataset;

/// Row-major image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height * width * channels != data.len() || channels == 0 {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    fn from_channels(height: usize, width: usize, channels: &[Vec<f64>]) -> Self {
        let c = channels.len();
        let mut data = vec![0.0; height * width * c];
        for (k, ch) in channels.iter().enumerate() {
            for (p, v) in ch.iter().enumerate() {
                data[p * c + k] = *v;
            }
        }
        Self { height, width, channels: c, data }
    }

    /// 8-bit grayscale or RGB PNG (alpha is dropped, other layouts are
    /// converted to RGB).
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image { path: path.to_path_buf(), message: other.to_string() },
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = match img.color() {
            image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16 => {
                (1, img.to_luma8().into_raw())
            }
            _ => (3, img.to_rgb8().into_raw()),
        };
        Self::new(h, w, channels, raw.iter().map(|&v| f64::from(v) / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let result = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            c => return Err(Error::InvalidArgument(format!("cannot write a {c}-channel PNG"))),
        };
        match result {
            Some(Ok(())) => Ok(()),
            Some(Err(e)) => Err(Error::Image { path: path.to_path_buf(), message: e.to_string() }),
            None => Err(Error::Shape("image buffer size".into())),
        }
    }

    /// Counterclockwise rotation about the center, bilinear, zero outside.
    pub fn rotate(&self, nu: f64) -> Result<Self> {
        if self.height != self.width {
            return Err(Error::Shape(format!("rotation needs a square image, got {}x{}", self.height, self.width)));
        }
        let n = self.height;
        let channels: Vec<Vec<f64>> = (0..self.channels).map(|c| resample_rotate_slice(&self.channel(c), n, nu)).collect();
        Ok(Self::from_channels(n, n, &channels))
    }

    pub fn crop_center(&self, size: usize) -> Result<Self> {
        if size > self.height || size > self.width || size == 0 {
            return Err(Error::Shape(format!("cannot crop {size} from {}x{}", self.height, self.width)));
        }
        let (i0, j0) = ((self.height - size) / 2, (self.width - size) / 2);
        let c = self.channels;
        let mut data = Vec::with_capacity(size * size * c);
        for i in i0..i0 + size {
            data.extend_from_slice(&self.data[(i * self.width + j0) * c..(i * self.width + j0 + size) * c]);
        }
        Self::new(size, size, c, data)
    }

    /// Largest centered square that stays inside the image at every rotation.
    pub fn rotate_and_crop(&self, nu: f64) -> Result<Self> {
        let side = self.height.min(self.width);
        let square = self.crop_center(side)?;
        let inscribed = ((side as f64) / 2f64.sqrt()).floor() as usize;
        square.rotate(nu)?.crop_center(inscribed.max(2))
    }

    /// One sample per pixel: point `(row, col)` in `[−1, 1]²`, target the
    /// pixel's channels.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut points = Vec::with_capacity(2 * self.pixel_count());
        for i in 0..self.height {
            for j in 0..self.width {
                points.push(grid_coord(i, self.height));
                points.push(grid_coord(j, self.width));
            }
        }
        Dataset::new(2, self.channels, points, self.data.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Brick,
    Stripes,
    Checker,
}

fn hash01(a: i64, b: i64) -> f64 {
    let mut x = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^= x >> 33;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

impl Texture {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "brick" => Some(Self::Brick),
            "stripes" => Some(Self::Stripes),
            "checker" => Some(Self::Checker),
            _ => None,
        }
    }

    /// Intensity at texture coordinates `(r, c)` in units of 1/128 of the
    /// image side.
    pub fn value(&self, r: f64, c: f64) -> f64 {
        match self {
            Self::Brick => {
                let (bw, bh, mortar) = (32.0, 16.0, 2.5);
                let row = (r / bh).floor();
                let shift = if (row as i64).rem_euclid(2) == 1 { bw / 2.0 } else { 0.0 };
                let cc = c + shift;
                let col = (cc / bw).floor();
                let (lr, lc) = (r - row * bh, cc - col * bw);
                if lr < mortar || lc < mortar {
                    0.15
                } else {
                    0.55 + 0.3 * hash01(row as i64, col as i64)
                }
            }
            Self::Stripes => {
                if (c / 8.0).floor() as i64 % 2 == 0 {
                    0.2
                } else {
                    0.8
                }
            }
            Self::Checker => {
                if ((r / 16.0).floor() as i64 + (c / 16.0).floor() as i64).rem_euclid(2) == 0 {
                    0.2
                } else {
                    0.8
                }
            }
        }
    }

    /// `size × size` grayscale rendering with content rotated
    /// counterclockwise by `nu`, box-filtered with `supersample²` samples
    /// per pixel.
    pub fn render(&self, size: usize, nu: f64, supersample: usize) -> Result<Image> {
        if size < 2 || supersample == 0 {
            return Err(Error::InvalidArgument("texture needs size >= 2 and supersample >= 1".into()));
        }
        let (s, co) = nu.sin_cos();
        let half = (size - 1) as f64 / 2.0;
        let unit = 128.0 / size as f64;
        let k = supersample as f64;
        let mut data = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let mut acc = 0.0;
                for a in 0..supersample {
                    for b in 0..supersample {
                        let x = (i as f64 + (a as f64 + 0.5) / k - 0.5 - half) * unit;
                        let y = (j as f64 + (b as f64 + 0.5) / k - 0.5 - half) * unit;
                        acc += self.value(co * x + s * y, -s * x + co * y);
                    }
                }
                data.push(acc / (k * k));
            }
        }
        Image::new(size, size, 1, data)
    }
}

/// Where a benchmark image comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    Texture { texture: Texture, size: usize },
    Png { path: std::path::PathBuf },
}

impl ImageSource {
    pub fn describe(&self) -> String {
        match self {
            Self::Texture { texture, size } => format!("{texture:?}{size}").to_lowercase(),
            Self::Png { path } => path.display().to_string(),
        }
    }

    /// The image with its content rotated counterclockwise by `nu`.
    pub fn rotated(&self, nu: f64) -> Result<Image> {
        match self {
            Self::Texture { texture, size } => texture.render(*size, nu, 4),
            Self::Png { path } => Image::load_png(path)?.rotate_and_crop(nu),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let data: Vec<f64> = (0..4 * 3 * channels).map(|k| (k % 256) as f64 / 255.0).collect();
            let img = Image::new(4, 3, channels, data).unwrap();
            let path = dir.path().join(format!("x{channels}.png"));
            img.save_png(&path).unwrap();
            let back = Image::load_png(&path).unwrap();
            assert_eq!(back.channels, channels);
            for (a, b) in img.data.iter().zip(&back.data) {
                assert!((a - b).abs() < 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn missing_png_is_an_io_error_with_path() {
        let err = Image::load_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn quarter_turn_rendering_matches_index_permutation() {
        for t in [Texture::Brick, Texture::Checker, Texture::Stripes] {
            let a = t.render(33, 0.0, 2).unwrap();
            let b = t.render(33, FRAC_PI_2, 2).unwrap();
            let n = 33;
            // samples landing exactly on a texel edge may round either way
            let mut mismatched = 0;
            for i in 0..n {
                for j in 0..n {
                    if (b.data[i * n + j] - a.data[j * n + (n - 1 - i)]).abs() > 1e-9 {
                        mismatched += 1;
                    }
                }
            }
            assert!(mismatched * 100 <= 3 * n * n, "{t:?} {mismatched}");
        }
    }

    #[test]
    fn textures_stay_in_unit_range() {
        let img = Texture::Brick.render(64, 0.4, 2).unwrap();
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(img.data.iter().any(|&v| v < 0.2) && img.data.iter().any(|&v| v > 0.5));
    }

    #[test]
    fn crop_and_dataset_layout() {
        let img = Image::new(4, 4, 1, (0..16).map(f64::from).collect()).unwrap();
        let c = img.crop_center(2).unwrap();
        assert_eq!(c.data, vec![5.0, 6.0, 9.0, 10.0]);
        let d = img.to_dataset().unwrap();
        assert_eq!(d.len(), 16);
        assert_eq!(d.point(1), &[-1.0, -1.0 + 2.0 / 3.0]);
        assert_eq!(d.target(5), &[5.0]);
        assert_eq!(img.rotate(0.0).unwrap(), img);
    }
}

//! Region-of-interest visual features.

use image::imageops::{self, FilterType};
use image::GrayImage;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::BBox;

/// Produces one fixed-size visual vector per image crop.
pub trait RoiExtractor: Send + Sync {
    fn dim(&self) -> usize;

    /// `bbox` is in image pixel coordinates. Zero-area boxes give zeros.
    fn extract(&self, image: &GrayImage, bbox: &BBox) -> Vec<f64>;
}

/// Crop, resize to `side × side` grayscale, flatten, then apply a fixed
/// seeded Gaussian projection.
#[derive(Clone, Debug)]
pub struct CropProjection {
    side: u32,
    projection: Array2<f64>,
}

impl CropProjection {
    pub const DEFAULT_SIDE: u32 = 32;
    pub const DEFAULT_DIM: usize = 64;
    const SEED: u64 = 0x005e_ed0f_0a0a;

    pub fn new(side: u32, dim: usize) -> Self {
        let n = (side * side) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(Self::SEED);
        let scale = 1.0 / (n as f64).sqrt();
        let projection = Array2::from_shape_fn((n, dim), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        CropProjection { side, projection }
    }
}

impl Default for CropProjection {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SIDE, Self::DEFAULT_DIM)
    }
}

impl RoiExtractor for CropProjection {
    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    fn extract(&self, image: &GrayImage, bbox: &BBox) -> Vec<f64> {
        let (w, h) = image.dimensions();
        let x0 = (bbox.x0.floor().max(0.0) as u32).min(w);
        let y0 = (bbox.y0.floor().max(0.0) as u32).min(h);
        let x1 = (bbox.x1.ceil().max(0.0) as u32).min(w);
        let y1 = (bbox.y1.ceil().max(0.0) as u32).min(h);
        if x1 <= x0 || y1 <= y0 {
            return vec![0.0; self.dim()];
        }
        let crop = imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image();
        let small = imageops::resize(&crop, self.side, self.side, FilterType::Triangle);
        let flat: Vec<f64> = small.pixels().map(|p| p[0] as f64 / 255.0).collect();
        let v = ndarray::ArrayView1::from(&flat);
        v.dot(&self.projection).to_vec()
    }
}

//! Deterministic page rasters drawn from the region layout.
//!
//! Used for synthetic corpora and as the image source when no scanned page
//! exists. Each region gets a label-dependent fill and a 2px outline, OCR
//! words become dark bars, and visual regions get a stripe texture keyed on
//! the region id.

use image::{GrayImage, Luma};
use sha2::{Digest, Sha256};

use super::{BBox, Page, SemanticLabel};

fn fill_level(label: SemanticLabel) -> u8 {
    match label {
        SemanticLabel::Text => 235,
        SemanticLabel::Title => 210,
        SemanticLabel::ProductImage => 150,
        SemanticLabel::Illustration => 185,
        SemanticLabel::Table => 225,
        SemanticLabel::Graphic => 120,
    }
}

fn pixel_span(b: &BBox, w: u32, h: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, hi: u32| (v.round().max(0.0) as u32).min(hi);
    (clamp(b.x0, w), clamp(b.y0, h), clamp(b.x1, w), clamp(b.y1, h))
}

fn fill(img: &mut GrayImage, b: &BBox, level: u8) {
    let (x0, y0, x1, y1) = pixel_span(b, img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, Luma([level]));
        }
    }
}

fn outline(img: &mut GrayImage, b: &BBox, level: u8) {
    let (x0, y0, x1, y1) = pixel_span(b, img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            if x < x0 + 2 || x + 2 >= x1 || y < y0 + 2 || y + 2 >= y1 {
                img.put_pixel(x, y, Luma([level]));
            }
        }
    }
}

fn texture_seed(id: &str) -> u32 {
    let d = Sha256::digest(id.as_bytes());
    u32::from_le_bytes([d[0], d[1], d[2], d[3]])
}

pub fn render_page(page: &Page) -> GrayImage {
    let mut img = GrayImage::from_pixel(page.width, page.height, Luma([255]));
    for region in &page.regions {
        fill(&mut img, &region.bbox, fill_level(region.label));
        if region.label.allows_empty_words() {
            let seed = texture_seed(&region.id);
            let period = 4 + seed % 13;
            let slope = 1 + (seed >> 8) % 3;
            let dark = 40 + ((seed >> 16) % 60) as u8;
            let (x0, y0, x1, y1) = pixel_span(&region.bbox, page.width, page.height);
            for y in y0..y1 {
                for x in x0..x1 {
                    if (x + slope * y) % period < 2 {
                        img.put_pixel(x, y, Luma([dark]));
                    }
                }
            }
        }
        for word in &region.words {
            fill(&mut img, &word.bbox, 30);
        }
        outline(&mut img, &region.bbox, 0);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::tiny_manual;

    #[test]
    fn rendering_is_deterministic_and_sized() {
        let m = tiny_manual("m1");
        let a = render_page(&m.pages[0]);
        let b = render_page(&m.pages[0]);
        assert_eq!(a, b);
        assert_eq!(a.dimensions(), (100, 100));
        // region outline is black, background outside regions is white
        assert_eq!(a.get_pixel(0, 0)[0], 0);
        assert_eq!(a.get_pixel(50, 35)[0], 255);
    }
}

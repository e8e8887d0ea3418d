use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use image::GrayImage;
use ndarray::Array2;

use super::roi::{CropProjection, RoiExtractor};
use super::vocab::{TokenId, Vocabulary};
use crate::corpus::{render, BBox, Manual, Page, Region, SemanticLabel, SplitView};
use crate::error::{Error, Result};

pub const SEGMENT_QUESTION: usize = 0;
pub const SEGMENT_PAGE: usize = 1;
/// Box coordinates are mapped onto `0..=COORD_GRID`.
pub const COORD_GRID: u16 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionFeatures {
    pub token_ids: Vec<TokenId>,
    pub segment_ids: Vec<usize>,
}

impl QuestionFeatures {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Box on the 0..=1000 grid: `[x0, y0, x1, y1]`.
pub type GridBox = [u16; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct PageFeatures {
    pub token_ids: Vec<TokenId>,
    pub segment_ids: Vec<usize>,
    pub token_boxes: Vec<GridBox>,
    /// One row per token; tokens of a region share their region's row.
    pub roi_vectors: Array2<f64>,
    /// Index of each kept region's label marker, in region order.
    pub marker_positions: Vec<usize>,
    /// Ids of the kept regions, parallel to `marker_positions`.
    pub region_ids: Vec<String>,
    pub region_labels: Vec<SemanticLabel>,
    /// True where a marker or the first subword of a word starts.
    pub unit_starts: Vec<bool>,
}

impl PageFeatures {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Longest prefix of at most `n` tokens that does not split a word.
    pub fn truncated(&self, n: usize) -> PageFeatures {
        if n >= self.len() {
            return self.clone();
        }
        let n = (1..=n).rev().find(|&k| self.unit_starts[k]).unwrap_or(0);
        let kept = self.marker_positions.iter().take_while(|&&m| m < n).count();
        PageFeatures {
            token_ids: self.token_ids[..n].to_vec(),
            segment_ids: self.segment_ids[..n].to_vec(),
            token_boxes: self.token_boxes[..n].to_vec(),
            roi_vectors: self.roi_vectors.slice(ndarray::s![..n, ..]).to_owned(),
            marker_positions: self.marker_positions[..kept].to_vec(),
            region_ids: self.region_ids[..kept].to_vec(),
            region_labels: self.region_labels[..kept].to_vec(),
            unit_starts: self.unit_starts[..n].to_vec(),
        }
    }
}

/// Ends with `</s>`; subwords beyond `max_len - 1` are dropped.
pub fn encode_question_with_max(question: &str, vocab: &Vocabulary, max_len: usize) -> Result<QuestionFeatures> {
    if question.trim().is_empty() {
        return Err(Error::InvalidArgument("empty question".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let mut token_ids = vocab.encode(question);
    token_ids.truncate(max_len - 1);
    token_ids.push(vocab.specials().eos);
    let segment_ids = vec![SEGMENT_QUESTION; token_ids.len()];
    Ok(QuestionFeatures { token_ids, segment_ids })
}

pub fn encode_question(question: &str, vocab: &Vocabulary) -> Result<QuestionFeatures> {
    encode_question_with_max(question, vocab, usize::MAX)
}

pub fn normalize_box(b: &BBox, width: u32, height: u32) -> GridBox {
    let g = COORD_GRID as f64;
    let q = |v: f64, extent: u32| ((v / extent as f64) * g).round().clamp(0.0, g) as u16;
    [q(b.x0, width), q(b.y0, height), q(b.x1, width), q(b.y1, height)]
}

fn scale_to_image(b: &BBox, page: &Page, image: &GrayImage) -> BBox {
    let sx = image.width() as f64 / page.width as f64;
    let sy = image.height() as f64 / page.height as f64;
    BBox::new(b.x0 * sx, b.y0 * sy, b.x1 * sx, b.y1 * sy)
}

/// Token sequence `[<c_1>, words of r_1, <c_2>, words of r_2, ...]`.
///
/// When the page exceeds `max_len`, trailing regions are dropped whole first,
/// then trailing words of the last region that still fits its marker. Words
/// are never split. A page without regions is encoded as one empty Text
/// region covering the page.
pub fn encode_page(
    page: &Page,
    vocab: &Vocabulary,
    max_len: usize,
    roi: &dyn RoiExtractor,
    image: &GrayImage,
) -> Result<PageFeatures> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let placeholder;
    let regions: &[Region] = if page.regions.is_empty() {
        placeholder = [Region {
            id: format!("{}#empty", page.id),
            label: SemanticLabel::Text,
            bbox: BBox::new(0.0, 0.0, page.width as f64, page.height as f64),
            words: Vec::new(),
        }];
        &placeholder
    } else {
        &page.regions
    };

    let mut token_ids = Vec::new();
    let mut token_boxes = Vec::new();
    let mut token_roi: Vec<usize> = Vec::new();
    let mut roi_rows: Vec<Vec<f64>> = Vec::new();
    let mut marker_positions = Vec::new();
    let mut region_ids = Vec::new();
    let mut region_labels = Vec::new();
    let mut unit_starts = Vec::new();

    'regions: for region in regions {
        if token_ids.len() >= max_len {
            break;
        }
        let region_box = normalize_box(&region.bbox, page.width, page.height);
        let row = roi_rows.len();
        roi_rows.push(roi.extract(image, &scale_to_image(&region.bbox, page, image)));
        marker_positions.push(token_ids.len());
        region_ids.push(region.id.clone());
        region_labels.push(region.label);
        token_ids.push(vocab.specials().label(region.label));
        token_boxes.push(region_box);
        token_roi.push(row);
        unit_starts.push(true);
        for word in &region.words {
            let pieces = vocab.encode(&word.text);
            if token_ids.len() + pieces.len() > max_len {
                break 'regions;
            }
            let wb = normalize_box(&word.bbox, page.width, page.height);
            for (k, id) in pieces.into_iter().enumerate() {
                unit_starts.push(k == 0);
                token_ids.push(id);
                token_boxes.push(wb);
                token_roi.push(row);
            }
        }
    }

    let dim = roi.dim();
    let mut roi_vectors = Array2::zeros((token_ids.len(), dim));
    for (t, &row) in token_roi.iter().enumerate() {
        for (k, v) in roi_rows[row].iter().enumerate() {
            roi_vectors[[t, k]] = *v;
        }
    }
    Ok(PageFeatures {
        segment_ids: vec![SEGMENT_PAGE; token_ids.len()],
        token_ids,
        token_boxes,
        roi_vectors,
        marker_positions,
        region_ids,
        region_labels,
        unit_starts,
    })
}

/// Where page rasters come from.
#[derive(Clone, Debug)]
pub enum PageImages {
    /// Draw each page from its layout.
    Rendered,
    /// Read `root/<image_path>`.
    Directory(PathBuf),
}

impl PageImages {
    pub fn load(&self, page: &Page) -> Result<GrayImage> {
        match self {
            PageImages::Rendered => Ok(render::render_page(page)),
            PageImages::Directory(root) => {
                let path = root.join(&page.image_path);
                let img = image::open(&path).map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(&path, io),
                    other => Error::Image(other),
                })?;
                Ok(img.to_luma8())
            }
        }
    }
}

/// Featurization settings plus the vocabulary; cheap to share across threads.
#[derive(Clone)]
pub struct Featurizer {
    pub vocab: Arc<Vocabulary>,
    pub roi: Arc<dyn RoiExtractor>,
    pub images: PageImages,
    /// Token budget for a page encoded on its own (retrieval).
    pub page_max_len: usize,
    /// Token budget for question + page encoded jointly (QA).
    pub joint_max_len: usize,
    pub question_max_len: usize,
}

impl Featurizer {
    pub fn new(vocab: Arc<Vocabulary>, images: PageImages) -> Self {
        Featurizer {
            vocab,
            roi: Arc::new(CropProjection::default()),
            images,
            page_max_len: 512,
            joint_max_len: 512,
            question_max_len: 64,
        }
    }

    pub fn roi_dim(&self) -> usize {
        self.roi.dim()
    }

    pub fn question(&self, text: &str) -> Result<QuestionFeatures> {
        encode_question_with_max(text, &self.vocab, self.question_max_len)
    }

    pub fn page(&self, page: &Page) -> Result<PageFeatures> {
        let img = self.images.load(page)?;
        encode_page(page, &self.vocab, self.page_max_len, self.roi.as_ref(), &img)
    }

    /// Features for every page of the given manuals, computed in parallel.
    pub fn page_store(&self, manuals: &[&Manual]) -> Result<PageStore> {
        let refs: Vec<(&Manual, &Page)> = manuals
            .iter()
            .flat_map(|m| m.pages.iter().map(move |p| (*m, p)))
            .collect();
        let feats = crate::par::try_map(&refs, |(_, p)| self.page(p))?;
        let map = refs
            .iter()
            .zip(feats)
            .map(|((m, p), f)| ((m.id.clone(), p.index), Arc::new(f)))
            .collect();
        Ok(PageStore { map })
    }

    pub fn page_store_for(&self, view: &SplitView<'_>) -> Result<PageStore> {
        self.page_store(&view.manuals)
    }
}

/// Precomputed page features keyed by `(manual_id, page_index)`.
#[derive(Clone, Debug, Default)]
pub struct PageStore {
    map: HashMap<(String, usize), Arc<PageFeatures>>,
}

impl PageStore {
    pub fn get(&self, manual_id: &str, page_index: usize) -> Result<Arc<PageFeatures>> {
        self.map
            .get(&(manual_id.to_string(), page_index))
            .cloned()
            .ok_or_else(|| Error::NotFound {
                kind: "page",
                name: format!("{manual_id}#{page_index}"),
            })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn merge(&mut self, other: PageStore) {
        self.map.extend(other.map);
    }
}

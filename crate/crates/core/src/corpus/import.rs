//! Adapter from the released annotation layout into the corpus format.
//!
//! Expected input:
//!
//! ```text
//! <root>/split.json                 {"train": [name, ...], "val": [...], "test": [...]}
//! <root>/annotations/<name>.json    one manual
//! ```
//!
//! where a manual file looks like
//!
//! ```json
//! {"name": "...", "brand": "...", "category": "...",
//!  "pages": [{"image": "...", "width": 1240, "height": 1754,
//!             "regions": [{"id": "...", "category": "product image",
//!                          "bbox": [x, y, w, h],
//!                          "words": [{"text": "...", "bbox": [x0, y0, x1, y1]}]}]}],
//!  "qas": [{"id": "...", "question": "...",
//!           "answer": {"text": "...", "regions": ["..."]}}]}
//! ```
//!
//! Region boxes are `[x, y, width, height]`; word boxes are corner pairs.
//! Boxes are clamped to the page, blank words are dropped, and word-less
//! textual regions that no answer references are skipped. QA pairs whose
//! answers cannot be resolved are dropped and counted in the report.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{BBox, Corpus, Manual, MultimodalAnswer, Page, QaPair, Region, SemanticLabel, Split, Word};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawManual {
    name: String,
    #[serde(default)]
    brand: String,
    #[serde(default)]
    category: String,
    pages: Vec<RawPage>,
    #[serde(default)]
    qas: Vec<RawQa>,
}

#[derive(Deserialize)]
struct RawPage {
    image: String,
    width: u32,
    height: u32,
    #[serde(default)]
    regions: Vec<RawRegion>,
}

#[derive(Deserialize)]
struct RawRegion {
    id: String,
    category: String,
    bbox: [f64; 4],
    #[serde(default)]
    words: Vec<RawWord>,
}

#[derive(Deserialize)]
struct RawWord {
    text: String,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct RawQa {
    id: String,
    question: String,
    answer: RawAnswer,
}

#[derive(Deserialize)]
struct RawAnswer {
    #[serde(default)]
    text: String,
    #[serde(default)]
    regions: Vec<String>,
}

/// What the importer had to drop.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub manuals: usize,
    pub qas_kept: usize,
    pub qas_dropped: usize,
    pub regions_dropped: usize,
    pub words_dropped: usize,
}

pub fn parse_label(raw: &str) -> Option<SemanticLabel> {
    let key: String = raw
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    Some(match key.as_str() {
        "text" | "paragraph" => SemanticLabel::Text,
        "title" | "heading" => SemanticLabel::Title,
        "productimage" | "product" => SemanticLabel::ProductImage,
        "illustration" => SemanticLabel::Illustration,
        "table" => SemanticLabel::Table,
        "graphic" | "icon" => SemanticLabel::Graphic,
        _ => return None,
    })
}

fn clamp_box(b: BBox, w: f64, h: f64) -> Option<BBox> {
    let c = BBox::new(b.x0.clamp(0.0, w), b.y0.clamp(0.0, h), b.x1.clamp(0.0, w), b.y1.clamp(0.0, h));
    (c.x0 < c.x1 && c.y0 < c.y1).then_some(c)
}

fn convert_manual(raw: RawManual, report: &mut ImportReport) -> Result<Manual> {
    let referenced: HashSet<&str> = raw
        .qas
        .iter()
        .flat_map(|q| q.answer.regions.iter().map(String::as_str))
        .collect();
    let mut pages = Vec::with_capacity(raw.pages.len());
    for (index, p) in raw.pages.iter().enumerate() {
        let (w, h) = (p.width as f64, p.height as f64);
        let mut regions = Vec::new();
        for r in &p.regions {
            let label = parse_label(&r.category).ok_or_else(|| {
                Error::schema(
                    format!("manual {} / page {index} / region {}", raw.name, r.id),
                    format!("unknown region category {:?}", r.category),
                )
            })?;
            let [x, y, bw, bh] = r.bbox;
            let Some(bbox) = clamp_box(BBox::new(x, y, x + bw, y + bh), w, h) else {
                report.regions_dropped += 1;
                continue;
            };
            let mut words = Vec::new();
            for word in &r.words {
                let text = word.text.trim();
                match clamp_box(BBox::from(word.bbox), w, h) {
                    Some(b) if !text.is_empty() => words.push(Word {
                        text: text.to_string(),
                        bbox: b,
                    }),
                    _ => report.words_dropped += 1,
                }
            }
            if words.is_empty() && !label.allows_empty_words() && !referenced.contains(r.id.as_str()) {
                report.regions_dropped += 1;
                continue;
            }
            let label = if words.is_empty() && !label.allows_empty_words() {
                SemanticLabel::Graphic
            } else {
                label
            };
            regions.push(Region {
                id: r.id.clone(),
                label,
                bbox,
                words,
            });
        }
        pages.push(Page {
            id: format!("{}-p{index}", raw.name),
            index,
            width: p.width,
            height: p.height,
            image_path: p.image.clone(),
            regions,
        });
    }
    let known: HashSet<&str> = pages
        .iter()
        .flat_map(|p| p.regions.iter().map(|r| r.id.as_str()))
        .collect();
    let mut qas = Vec::new();
    for q in &raw.qas {
        let ok = !q.question.trim().is_empty()
            && !q.answer.regions.is_empty()
            && q.answer.regions.iter().all(|r| known.contains(r.as_str()))
            && q.answer.regions.iter().collect::<BTreeSet<_>>().len() == q.answer.regions.len();
        if !ok {
            report.qas_dropped += 1;
            continue;
        }
        qas.push(QaPair {
            id: q.id.clone(),
            manual_id: raw.name.clone(),
            question: q.question.trim().to_string(),
            answer: MultimodalAnswer {
                text: q.answer.text.trim().to_string(),
                region_ids: q.answer.regions.clone(),
            },
            relevant_pages: BTreeSet::new(),
        });
    }
    report.qas_kept += qas.len();
    report.manuals += 1;
    Ok(Manual {
        id: raw.name,
        brand: raw.brand,
        category: raw.category,
        pages,
        qas,
    })
}

/// Imports a released-layout directory into a validated [`Corpus`].
pub fn import_release(root: impl AsRef<Path>, corpus_name: &str) -> Result<(Corpus, ImportReport)> {
    let root = root.as_ref();
    let split_path = root.join("split.json");
    let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let splits: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| Error::schema("split.json", e.to_string()))?;
    let mut assignment = BTreeMap::new();
    let mut order = Vec::new();
    for (name, ids) in &splits {
        let split: Split = name.parse()?;
        for id in ids {
            if assignment.insert(id.clone(), split).is_some() {
                return Err(Error::schema("split.json", format!("manual {id:?} in two splits")));
            }
            order.push(id.clone());
        }
    }
    order.sort();
    let mut report = ImportReport::default();
    let mut manuals = Vec::with_capacity(order.len());
    for id in &order {
        let path = root.join("annotations").join(format!("{id}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let raw: RawManual =
            serde_json::from_str(&text).map_err(|e| Error::schema(format!("manual {id}"), e.to_string()))?;
        if &raw.name != id {
            return Err(Error::schema(format!("manual {id}"), format!("file names manual {:?}", raw.name)));
        }
        manuals.push(convert_manual(raw, &mut report)?);
    }
    Ok((Corpus::new(corpus_name, manuals, assignment)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imports_minimal_release() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("annotations")).unwrap();
        fs::write(dir.path().join("split.json"), r#"{"train": ["cam1"], "test": []}"#).unwrap();
        let manual = r#"{
          "name": "cam1", "brand": "Acme", "category": "Camera",
          "pages": [
            {"image": "cam1/0.png", "width": 100, "height": 100,
             "regions": [
               {"id": "a", "category": "Title", "bbox": [0, 0, 100, 20],
                "words": [{"text": "Setup", "bbox": [2, 2, 40, 18]}, {"text": "  ", "bbox": [50, 2, 60, 18]}]},
               {"id": "b", "category": "product image", "bbox": [0, 30, 120, 50], "words": []},
               {"id": "c", "category": "Text", "bbox": [0, 90, 50, 10], "words": []}
             ]},
            {"image": "cam1/1.png", "width": 100, "height": 100, "regions": []}
          ],
          "qas": [
            {"id": "q1", "question": "how to set up?", "answer": {"text": "press it", "regions": ["a", "b"]}},
            {"id": "q2", "question": "ghost?", "answer": {"text": "x", "regions": ["zzz"]}}
          ]}"#;
        fs::write(dir.path().join("annotations/cam1.json"), manual).unwrap();
        let (corpus, report) = import_release(dir.path(), "pm").unwrap();
        assert_eq!(report.manuals, 1);
        assert_eq!((report.qas_kept, report.qas_dropped), (1, 1));
        assert_eq!(report.regions_dropped, 1);
        assert_eq!(report.words_dropped, 1);
        let m = &corpus.manuals[0];
        assert_eq!(m.pages[0].regions[1].label, SemanticLabel::ProductImage);
        assert_eq!(m.pages[0].regions[1].bbox, BBox::new(0.0, 30.0, 100.0, 80.0));
        assert!(m.pages[1].regions.is_empty());
        assert_eq!(m.qas[0].relevant_pages, BTreeSet::from([0]));
    }

    #[test]
    fn label_aliases() {
        assert_eq!(parse_label("Product_Image"), Some(SemanticLabel::ProductImage));
        assert_eq!(parse_label("GRAPHIC"), Some(SemanticLabel::Graphic));
        assert_eq!(parse_label("chart"), None);
    }
}

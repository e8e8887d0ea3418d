//! Manual corpus: data model, validation, splits and filtering.
//!
//! A [`Corpus`] is a set of [`Manual`]s, each an ordered list of [`Page`]s made
//! of labeled [`Region`]s carrying OCR [`Word`]s, plus the manual's question
//! answer pairs. Everything here is immutable once validated.

mod format;
pub mod import;
pub mod render;
mod stats;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{load_corpus, save_corpus, write_page_images};
pub use stats::{corpus_stats, whitespace_len, StatsReport};
pub use synth::{generate_synthetic, SynthConfig};

/// The six region categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticLabel {
    Text,
    Title,
    ProductImage,
    Illustration,
    Table,
    Graphic,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 6] = [
        SemanticLabel::Text,
        SemanticLabel::Title,
        SemanticLabel::ProductImage,
        SemanticLabel::Illustration,
        SemanticLabel::Table,
        SemanticLabel::Graphic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticLabel::Text => "Text",
            SemanticLabel::Title => "Title",
            SemanticLabel::ProductImage => "ProductImage",
            SemanticLabel::Illustration => "Illustration",
            SemanticLabel::Table => "Table",
            SemanticLabel::Graphic => "Graphic",
        }
    }

    /// Position in [`SemanticLabel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Visual categories may legitimately carry no OCR words.
    pub fn allows_empty_words(self) -> bool {
        matches!(
            self,
            SemanticLabel::ProductImage | SemanticLabel::Graphic | SemanticLabel::Illustration
        )
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SemanticLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown semantic label {s:?}")))
    }
}

/// Axis-aligned box in page pixel coordinates, serialized as `[x0, y0, x1, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [f64; 4]) -> Self {
        BBox { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// `0 <= x0 < x1 <= width` and likewise for y.
    pub fn is_valid_within(&self, width: f64, height: f64) -> bool {
        let finite = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite());
        finite
            && 0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= width
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Word {
    pub text: String,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: String,
    pub label: SemanticLabel,
    pub bbox: BBox,
    pub words: Vec<Word>,
}

impl Region {
    /// OCR words joined by single spaces, in stored order.
    pub fn text(&self) -> String {
        self.words
            .iter()
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Page {
    pub id: String,
    pub index: usize,
    pub width: u32,
    pub height: u32,
    pub image_path: String,
    pub regions: Vec<Region>,
}

impl Page {
    /// Concatenated OCR text, regions in list order.
    pub fn text(&self) -> String {
        self.regions
            .iter()
            .flat_map(|r| r.words.iter().map(|w| w.text.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Textual part plus the visual part (region references) of an answer.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalAnswer {
    pub text: String,
    pub region_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaPair {
    pub id: String,
    pub manual_id: String,
    pub question: String,
    pub answer: MultimodalAnswer,
    /// Pages holding the answer regions; derived, never stored on disk.
    pub relevant_pages: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manual {
    pub id: String,
    pub brand: String,
    pub category: String,
    pub pages: Vec<Page>,
    pub qas: Vec<QaPair>,
}

impl Manual {
    /// Page index of every region id in the manual.
    pub fn region_pages(&self) -> HashMap<&str, usize> {
        self.pages
            .iter()
            .flat_map(|p| p.regions.iter().map(move |r| (r.id.as_str(), p.index)))
            .collect()
    }

    pub fn find_region(&self, region_id: &str) -> Option<(&Page, &Region)> {
        self.pages.iter().find_map(|p| {
            p.regions
                .iter()
                .find(|r| r.id == region_id)
                .map(|r| (p, r))
        })
    }

    /// Recomputes `relevant_pages` and `manual_id` on every QA pair.
    pub(crate) fn derive_qa_fields(&mut self) -> Result<()> {
        let owners: HashMap<String, usize> = self
            .region_pages()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for qa in &mut self.qas {
            qa.manual_id = self.id.clone();
            let mut pages = BTreeSet::new();
            for rid in &qa.answer.region_ids {
                let page = owners.get(rid).ok_or_else(|| {
                    Error::validation(
                        format!("manual {} / qa {}", self.id, qa.id),
                        format!("answer references unknown region {rid:?}"),
                    )
                })?;
                pages.insert(*page);
            }
            qa.relevant_pages = pages;
        }
        Ok(())
    }

    /// Checks every structural invariant of a manual.
    pub fn validate(&self) -> Result<()> {
        let loc = |rest: String| format!("manual {}{}", self.id, rest);
        if self.pages.is_empty() {
            return Err(Error::validation(loc(String::new()), "manual has no pages"));
        }
        let mut region_ids = HashMap::new();
        for (i, page) in self.pages.iter().enumerate() {
            let ploc = format!(" / page {}", page.id);
            if page.index != i {
                return Err(Error::validation(
                    loc(ploc),
                    format!("page index {} is not contiguous (expected {i})", page.index),
                ));
            }
            if page.width == 0 || page.height == 0 {
                return Err(Error::validation(loc(ploc), "page has zero size"));
            }
            let (w, h) = (page.width as f64, page.height as f64);
            for region in &page.regions {
                let rloc = format!("{ploc} / region {}", region.id);
                if region_ids.insert(region.id.as_str(), page.index).is_some() {
                    return Err(Error::validation(loc(rloc), "duplicate region id"));
                }
                if !region.bbox.is_valid_within(w, h) {
                    return Err(Error::validation(
                        loc(rloc),
                        format!("region box {:?} outside page {w}x{h}", region.bbox),
                    ));
                }
                if region.words.is_empty() && !region.label.allows_empty_words() {
                    return Err(Error::validation(
                        loc(rloc),
                        format!("{} region without words", region.label),
                    ));
                }
                for word in &region.words {
                    if word.text.trim().is_empty() {
                        return Err(Error::validation(loc(rloc), "blank OCR word"));
                    }
                    if !word.bbox.is_valid_within(w, h) {
                        return Err(Error::validation(
                            loc(rloc),
                            format!("word box {:?} outside page", word.bbox),
                        ));
                    }
                }
            }
        }
        let mut qa_ids = BTreeSet::new();
        for qa in &self.qas {
            let qloc = format!(" / qa {}", qa.id);
            if !qa_ids.insert(qa.id.as_str()) {
                return Err(Error::validation(loc(qloc), "duplicate qa id"));
            }
            if qa.manual_id != self.id {
                return Err(Error::validation(loc(qloc), "qa belongs to another manual"));
            }
            if qa.question.trim().is_empty() {
                return Err(Error::validation(loc(qloc), "empty question"));
            }
            if qa.answer.region_ids.is_empty() && qa.answer.text.trim().is_empty() {
                return Err(Error::validation(loc(qloc), "answer has neither text nor regions"));
            }
            let mut seen = BTreeSet::new();
            let mut pages = BTreeSet::new();
            for rid in &qa.answer.region_ids {
                if !seen.insert(rid.as_str()) {
                    return Err(Error::validation(loc(qloc), format!("region {rid:?} listed twice")));
                }
                match region_ids.get(rid.as_str()) {
                    Some(p) => {
                        pages.insert(*p);
                    }
                    None => {
                        return Err(Error::validation(
                            loc(qloc),
                            format!("answer references unknown region {rid:?}"),
                        ))
                    }
                }
            }
            if pages.is_empty() {
                return Err(Error::validation(loc(qloc), "answer touches no page"));
            }
            if pages != qa.relevant_pages {
                return Err(Error::validation(loc(qloc), "relevant pages disagree with answer regions"));
            }
        }
        Ok(())
    }
}

/// Dataset split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::NotFound {
                kind: "split",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub manuals: Vec<Manual>,
    pub split_assignment: BTreeMap<String, Split>,
}

impl Corpus {
    /// Builds a corpus, deriving QA fields and validating all invariants.
    pub fn new(
        name: impl Into<String>,
        mut manuals: Vec<Manual>,
        split_assignment: BTreeMap<String, Split>,
    ) -> Result<Self> {
        for m in &mut manuals {
            m.derive_qa_fields()?;
        }
        let corpus = Corpus {
            name: name.into(),
            manuals,
            split_assignment,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for m in &self.manuals {
            if !ids.insert(m.id.as_str()) {
                return Err(Error::validation(format!("manual {}", m.id), "duplicate manual id"));
            }
            m.validate()?;
            if !self.split_assignment.contains_key(&m.id) {
                return Err(Error::validation(
                    format!("manual {}", m.id),
                    "manual has no split assignment",
                ));
            }
        }
        if let Some(extra) = self.split_assignment.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::validation(
                "manifest",
                format!("split assignment names unknown manual {extra:?}"),
            ));
        }
        Ok(())
    }

    pub fn manual(&self, id: &str) -> Option<&Manual> {
        self.manuals.iter().find(|m| m.id == id)
    }

    pub fn view_all(&self) -> SplitView<'_> {
        SplitView {
            split: None,
            manuals: self.manuals.iter().collect(),
        }
    }

    /// Manuals assigned to `split_name`, in corpus order.
    pub fn split_view(&self, split_name: &str) -> Result<SplitView<'_>> {
        let split: Split = split_name.parse()?;
        Ok(self.view(split))
    }

    pub fn view(&self, split: Split) -> SplitView<'_> {
        SplitView {
            split: Some(split),
            manuals: self
                .manuals
                .iter()
                .filter(|m| self.split_assignment.get(&m.id) == Some(&split))
                .collect(),
        }
    }

    /// Copy of the corpus keeping only QA pairs grounded on exactly one page.
    pub fn filter_single_page_qas(&self) -> Corpus {
        filter_single_page_qas(self)
    }
}

/// Borrowed subset of a corpus's manuals.
#[derive(Clone, Debug)]
pub struct SplitView<'a> {
    pub split: Option<Split>,
    pub manuals: Vec<&'a Manual>,
}

impl<'a> SplitView<'a> {
    pub fn len(&self) -> usize {
        self.manuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manuals.is_empty()
    }

    pub fn n_pages(&self) -> usize {
        self.manuals.iter().map(|m| m.pages.len()).sum()
    }

    pub fn n_qas(&self) -> usize {
        self.manuals.iter().map(|m| m.qas.len()).sum()
    }

    pub fn qas(&self) -> impl Iterator<Item = (&'a Manual, &'a QaPair)> + '_ {
        self.manuals
            .iter()
            .flat_map(|m| m.qas.iter().map(move |q| (*m, q)))
    }

    pub fn manual(&self, id: &str) -> Option<&'a Manual> {
        self.manuals.iter().copied().find(|m| m.id == id)
    }
}

/// Keeps only QA pairs whose answer regions lie on a single page.
pub fn filter_single_page_qas(corpus: &Corpus) -> Corpus {
    let mut out = corpus.clone();
    for m in &mut out.manuals {
        m.qas.retain(|qa| qa.relevant_pages.len() == 1);
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn word(text: &str, x: f64) -> Word {
        Word {
            text: text.to_string(),
            bbox: BBox::new(x, 10.0, x + 20.0, 20.0),
        }
    }

    pub(crate) fn tiny_manual(id: &str) -> Manual {
        let page = |index: usize, rid: &str| Page {
            id: format!("{id}-p{index}"),
            index,
            width: 100,
            height: 100,
            image_path: format!("images/{id}/page_{index}.png"),
            regions: vec![
                Region {
                    id: format!("{rid}a"),
                    label: SemanticLabel::Title,
                    bbox: BBox::new(0.0, 0.0, 100.0, 30.0),
                    words: vec![word("Setup", 5.0)],
                },
                Region {
                    id: format!("{rid}b"),
                    label: SemanticLabel::ProductImage,
                    bbox: BBox::new(0.0, 40.0, 100.0, 90.0),
                    words: vec![],
                },
            ],
        };
        let qa = |qid: &str, regions: &[&str]| QaPair {
            id: qid.to_string(),
            manual_id: String::new(),
            question: format!("question {qid}"),
            answer: MultimodalAnswer {
                text: "press power".into(),
                region_ids: regions.iter().map(|s| s.to_string()).collect(),
            },
            relevant_pages: BTreeSet::new(),
        };
        let mut m = Manual {
            id: id.to_string(),
            brand: "Acme".into(),
            category: "Camera".into(),
            pages: vec![page(0, "r0"), page(1, "r1")],
            qas: vec![qa("q0", &["r0a"]), qa("q1", &["r0b", "r1a"])],
        };
        m.derive_qa_fields().unwrap();
        m
    }

    pub(crate) fn tiny_corpus() -> Corpus {
        let split = BTreeMap::from([
            ("m1".to_string(), Split::Train),
            ("m2".to_string(), Split::Test),
        ]);
        Corpus::new("tiny", vec![tiny_manual("m1"), tiny_manual("m2")], split).unwrap()
    }

    #[test]
    fn relevant_pages_follow_answer_regions() {
        let c = tiny_corpus();
        let m = &c.manuals[0];
        assert_eq!(m.qas[0].relevant_pages, BTreeSet::from([0]));
        assert_eq!(m.qas[1].relevant_pages, BTreeSet::from([0, 1]));
        assert_eq!(m.qas[0].manual_id, "m1");
    }

    #[test]
    fn unknown_region_reference_is_rejected() {
        let mut m = tiny_manual("m1");
        m.qas[0].answer.region_ids = vec!["nope".into()];
        let err = m.derive_qa_fields().unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn filter_keeps_single_page_questions_only() {
        let c = tiny_corpus();
        let f = filter_single_page_qas(&c);
        assert_eq!(f.manuals[0].qas.len(), 1);
        assert_eq!(f.manuals[0].qas[0].id, "q0");
        // original untouched
        assert_eq!(c.manuals[0].qas.len(), 2);
        // idempotent
        assert_eq!(filter_single_page_qas(&f), f);
    }

    #[test]
    fn split_views_partition_manuals() {
        let c = tiny_corpus();
        let sizes: Vec<usize> = Split::ALL.iter().map(|s| c.view(*s).len()).collect();
        assert_eq!(sizes, vec![1, 0, 1]);
        let mut union: Vec<&str> = Split::ALL
            .iter()
            .flat_map(|s| c.view(*s).manuals.into_iter().map(|m| m.id.as_str()))
            .collect();
        union.sort();
        assert_eq!(union, vec!["m1", "m2"]);
        assert!(c.split_view("dev").is_err());
    }

    #[test]
    fn text_region_without_words_is_invalid() {
        let mut m = tiny_manual("m1");
        m.pages[0].regions[0].words.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn box_outside_page_is_invalid() {
        let mut m = tiny_manual("m1");
        m.pages[1].regions[1].bbox = BBox::new(0.0, 40.0, 120.0, 90.0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn label_strings_round_trip() {
        for l in SemanticLabel::ALL {
            assert_eq!(l.as_str().parse::<SemanticLabel>().unwrap(), l);
        }
        assert!("Photo".parse::<SemanticLabel>().is_err());
    }
}

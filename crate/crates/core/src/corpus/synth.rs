//! Seeded synthetic manuals for desk-scale runs.
//!
//! Words come from a pseudo-word lexicon. Every question quotes two words of
//! its answer region, and the answer text is that region's words, so both
//! retrieval and answer generation are learnable by memorization.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BBox, Corpus, Manual, MultimodalAnswer, Page, QaPair, Region, SemanticLabel, Split, Word};
use crate::error::{Error, Result};

pub const PAGE_WIDTH: u32 = 600;
pub const PAGE_HEIGHT: u32 = 800;
const LEXICON_SIZE: usize = 400;
const MAX_ANSWER_WORDS: usize = 8;

const BRANDS: [&str; 6] = ["Acme", "Borealis", "Cobalt", "Dynamo", "Electra", "Fennec"];
const CATEGORIES: [&str; 5] = ["Camera", "Speaker", "Router", "Blender", "Headphones"];
const TEMPLATES: [&str; 5] = [
    "how do i {a} the {b}?",
    "what does {a} {b} mean?",
    "where is the {a} {b}?",
    "why is {a} {b} needed?",
    "when should i use {a} {b}?",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_manuals: usize,
    pub pages_per_manual: usize,
    pub qas_per_page: usize,
}

fn lexicon(rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(LEXICON_SIZE);
    while words.len() < LEXICON_SIZE {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        if rng.gen_bool(0.3) {
            w.push_str(["n", "r", "s", "l"][rng.gen_range(0..4)]);
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn pick_label(rng: &mut ChaCha8Rng) -> SemanticLabel {
    let roll = rng.gen_range(0..100);
    match roll {
        0..=34 => SemanticLabel::Text,
        35..=49 => SemanticLabel::Title,
        50..=59 => SemanticLabel::Table,
        60..=74 => SemanticLabel::ProductImage,
        75..=89 => SemanticLabel::Illustration,
        _ => SemanticLabel::Graphic,
    }
}

fn word_count(label: SemanticLabel, rng: &mut ChaCha8Rng) -> usize {
    match label {
        SemanticLabel::Title => rng.gen_range(1..=3),
        SemanticLabel::Text => rng.gen_range(3..=7),
        SemanticLabel::Table => rng.gen_range(4..=8),
        _ => 0,
    }
}

fn lay_out_words(texts: Vec<String>, area: &BBox) -> Vec<Word> {
    const LINE: f64 = 14.0;
    const GAP: f64 = 6.0;
    const CHAR: f64 = 9.0;
    let (mut x, mut y) = (area.x0 + 8.0, area.y0 + 8.0);
    let mut words = Vec::new();
    for text in texts {
        let w = CHAR * text.chars().count() as f64;
        if x + w > area.x1 - 8.0 {
            x = area.x0 + 8.0;
            y += LINE + GAP;
        }
        if y + LINE > area.y1 - 4.0 {
            break;
        }
        words.push(Word {
            text,
            bbox: BBox::new(x, y, x + w, y + LINE),
        });
        x += w + GAP;
    }
    words
}

fn make_page(manual_id: &str, index: usize, cfg: &SynthConfig, lex: &[String], rng: &mut ChaCha8Rng) -> Page {
    let n_regions = rng.gen_range(2..=6);
    let mut labels: Vec<SemanticLabel> = (0..n_regions).map(|_| pick_label(rng)).collect();
    if rng.gen_bool(0.5) {
        labels[0] = SemanticLabel::Title;
    }
    let needed = cfg.qas_per_page.clamp(1, 3).min(n_regions);
    let mut bearing = labels.iter().filter(|l| !l.allows_empty_words()).count();
    for l in labels.iter_mut() {
        if bearing >= needed {
            break;
        }
        if l.allows_empty_words() {
            *l = SemanticLabel::Text;
            bearing += 1;
        }
    }

    let top = 30.0;
    let slot = (PAGE_HEIGHT as f64 - 2.0 * top) / n_regions as f64;
    let regions = labels
        .into_iter()
        .enumerate()
        .map(|(j, label)| {
            let y0 = top + slot * j as f64;
            let y1 = y0 + slot - 10.0;
            let (x0, x1) = if label.allows_empty_words() {
                let w = rng.gen_range(200.0..420.0_f64).round();
                let x0 = ((PAGE_WIDTH as f64 - w) / 2.0).round();
                (x0, x0 + w)
            } else {
                (40.0, PAGE_WIDTH as f64 - 40.0)
            };
            let bbox = BBox::new(x0, y0.round(), x1, y1.round());
            let texts = (0..word_count(label, rng))
                .map(|_| lex[rng.gen_range(0..lex.len())].clone())
                .collect();
            let words = lay_out_words(texts, &bbox);
            Region {
                id: format!("{manual_id}-p{index}-r{j}"),
                label,
                bbox,
                words,
            }
        })
        .collect();

    Page {
        id: format!("{manual_id}-p{index}"),
        index,
        width: PAGE_WIDTH,
        height: PAGE_HEIGHT,
        image_path: format!("images/{manual_id}/page_{index:03}.png"),
        regions,
    }
}

fn make_qa(manual_id: &str, qa_no: usize, page: &Page, region_pos: usize, rng: &mut ChaCha8Rng) -> QaPair {
    let region = &page.regions[region_pos];
    let words: Vec<&str> = region.words.iter().map(|w| w.text.as_str()).collect();
    let a = words[rng.gen_range(0..words.len())];
    let b = if words.len() > 1 {
        let mut b = a;
        while b == a && words.iter().any(|w| *w != a) {
            b = words[rng.gen_range(0..words.len())];
        }
        b
    } else {
        a
    };
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let question = template.replace("{a}", a).replace("{b}", b);
    let text = words
        .iter()
        .take(MAX_ANSWER_WORDS)
        .copied()
        .collect::<Vec<_>>()
        .join(" ");
    let mut region_ids = vec![region.id.clone()];
    if let Some(next) = page.regions.get(region_pos + 1) {
        if next.label.allows_empty_words() {
            region_ids.push(next.id.clone());
        }
    }
    QaPair {
        id: format!("{manual_id}-q{qa_no}"),
        manual_id: manual_id.to_string(),
        question,
        answer: MultimodalAnswer { text, region_ids },
        relevant_pages: BTreeSet::from([page.index]),
    }
}

/// Deterministic split: the last ~15% of manuals go to test, the ~15% before
/// them to val (each at least one manual once there are three or more).
fn assign_splits(ids: &[String]) -> BTreeMap<String, Split> {
    let n = ids.len();
    let (n_val, n_test) = match n {
        1 => (0, 0),
        2 => (0, 1),
        _ => {
            let k = ((n as f64) * 0.15).round().max(1.0) as usize;
            (k, k)
        }
    };
    let n_train = n - n_val - n_test;
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect()
}

/// Generates `n_manuals × pages_per_manual` pages and `qas_per_page` QA pairs
/// per page. Identical arguments always yield identical corpora.
pub fn generate_synthetic(seed: u64, n_manuals: usize, pages_per_manual: usize, qas_per_page: usize) -> Result<Corpus> {
    let cfg = SynthConfig {
        seed,
        n_manuals,
        pages_per_manual,
        qas_per_page,
    };
    if n_manuals == 0 || pages_per_manual == 0 || qas_per_page == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus counts must be >= 1, got {cfg:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex = lexicon(&mut rng);
    let mut manuals = Vec::with_capacity(n_manuals);
    for k in 0..n_manuals {
        let id = format!("m{k:03}");
        let pages: Vec<Page> = (0..pages_per_manual)
            .map(|i| make_page(&id, i, &cfg, &lex, &mut rng))
            .collect();
        let mut qas = Vec::new();
        for page in &pages {
            let mut candidates: Vec<usize> = page
                .regions
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.words.is_empty())
                .map(|(j, _)| j)
                .collect();
            candidates.shuffle(&mut rng);
            for q in 0..qas_per_page {
                let pos = candidates[q % candidates.len()];
                let qa = make_qa(&id, qas.len(), page, pos, &mut rng);
                qas.push(qa);
            }
        }
        manuals.push(Manual {
            id,
            brand: BRANDS[rng.gen_range(0..BRANDS.len())].to_string(),
            category: CATEGORIES[rng.gen_range(0..CATEGORIES.len())].to_string(),
            pages,
            qas,
        });
    }
    let ids: Vec<String> = manuals.iter().map(|m| m.id.clone()).collect();
    Corpus::new(format!("synthetic-{seed}"), manuals, assign_splits(&ids))
}

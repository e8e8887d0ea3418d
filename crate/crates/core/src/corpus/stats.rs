use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, SemanticLabel};

/// Corpus-level statistics. Lengths count whitespace-separated tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_manuals: usize,
    pub n_pages: usize,
    pub n_qas: usize,
    /// Percentage of distinct question strings.
    pub question_uniqueness: f64,
    /// Percentage of distinct answer texts.
    pub answer_uniqueness: f64,
    pub mean_question_len: f64,
    pub mean_answer_len: f64,
    pub mean_page_len: f64,
    pub regions_by_label: BTreeMap<SemanticLabel, usize>,
    /// pages-per-manual → number of manuals
    pub pages_per_manual: BTreeMap<usize, usize>,
}

pub fn whitespace_len(s: &str) -> usize {
    s.split_whitespace().count()
}

fn mean(values: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = values.fold((0usize, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

fn uniqueness<'a>(items: impl Iterator<Item = &'a str>) -> f64 {
    let all: Vec<&str> = items.collect();
    if all.is_empty() {
        return 0.0;
    }
    let distinct: BTreeSet<&str> = all.iter().copied().collect();
    100.0 * distinct.len() as f64 / all.len() as f64
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let qas = || corpus.manuals.iter().flat_map(|m| m.qas.iter());
    let pages = || corpus.manuals.iter().flat_map(|m| m.pages.iter());
    let mut regions_by_label: BTreeMap<SemanticLabel, usize> =
        SemanticLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for r in pages().flat_map(|p| p.regions.iter()) {
        *regions_by_label.entry(r.label).or_default() += 1;
    }
    let mut pages_per_manual = BTreeMap::new();
    for m in &corpus.manuals {
        *pages_per_manual.entry(m.pages.len()).or_default() += 1;
    }
    StatsReport {
        n_manuals: corpus.manuals.len(),
        n_pages: pages().count(),
        n_qas: qas().count(),
        question_uniqueness: uniqueness(qas().map(|q| q.question.as_str())),
        answer_uniqueness: uniqueness(qas().map(|q| q.answer.text.as_str())),
        mean_question_len: mean(qas().map(|q| whitespace_len(&q.question))),
        mean_answer_len: mean(qas().map(|q| whitespace_len(&q.answer.text))),
        mean_page_len: mean(pages().map(|p| p.regions.iter().map(|r| r.words.len()).sum())),
        regions_by_label,
        pages_per_manual,
    }
}

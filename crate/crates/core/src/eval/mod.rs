//! Metric reports and the two evaluation settings: answering on the gold
//! page ("separate") and on the top retrieved page ("cascade").

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Manual, QaPair, SemanticLabel, SplitView};
use crate::error::{Error, Result};
use crate::featurize::{Featurizer, PageStore};
use crate::model::{Model, TaskFlags};
use crate::qa::{answer_multimodal, AnswerOptions, JointInput};
use crate::retrieval::{question_states, retrieve, PageIndex, RetrievalConfig, RetrievalResult, Scope, ScoringMode};

pub use metrics::{
    bleu4, cider, meteor_lite, normalize_tokens, region_prf, region_prf_micro, rouge_l, weighted_recall_at_k, Prf,
    RankedQuestion,
};

pub const RECALL_KS: [usize; 3] = [1, 3, 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Separate,
    Cascade,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Setting::Separate),
            "cascade" => Ok(Setting::Cascade),
            other => Err(Error::InvalidArgument(format!("unknown setting {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub r_at_1: f64,
    pub r_at_3: f64,
    pub r_at_5: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextMetrics {
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Fraction of answers equal to the reference after normalization.
    pub exact_match: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub micro: Prf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub manuals: usize,
    pub pages: usize,
    pub questions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub setting: Setting,
    pub model: String,
    pub counts: Counts,
    pub retrieval: Option<RetrievalMetrics>,
    pub textual: Option<TextMetrics>,
    pub visual: Option<VisualMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// True when every metric and count agrees bit for bit, ignoring the
    /// setting tag.
    pub fn same_measurements(&self, other: &MetricReport) -> bool {
        MetricReport {
            setting: other.setting,
            ..self.clone()
        } == *other
    }

    /// Fixed-width table: retrieval, textual and visual column groups,
    /// scaled to percentages.
    pub fn table(reports: &[(&str, &MetricReport)]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} | {:>5} {:>5} {:>5} | {:>5} {:>6} {:>5} {:>5} | {:>5} {:>5} {:>5}",
            "Model", "R@1", "R@3", "R@5", "B4", "M-lite", "R-L", "C", "P", "R", "F1"
        );
        let _ = writeln!(out, "{}", "-".repeat(94));
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x));
        for (name, r) in reports {
            let rt = r.retrieval;
            let tx = r.textual;
            let vs = r.visual;
            let _ = writeln!(
                out,
                "{:<16} | {:>5} {:>5} {:>5} | {:>5} {:>6} {:>5} {:>5} | {:>5} {:>5} {:>5}",
                name,
                pct(rt.map(|m| m.r_at_1)),
                pct(rt.map(|m| m.r_at_3)),
                pct(rt.map(|m| m.r_at_5)),
                pct(tx.map(|m| m.bleu4)),
                pct(tx.map(|m| m.meteor_lite)),
                pct(tx.map(|m| m.rouge_l)),
                pct(tx.map(|m| m.cider)),
                pct(vs.map(|m| m.precision)),
                pct(vs.map(|m| m.recall)),
                pct(vs.map(|m| m.f1)),
            );
        }
        out
    }
}

/// Chooses the page a question is answered on.
pub trait PageRanker: Sync {
    fn rank(&self, manual: &Manual, qa: &QaPair) -> Result<RetrievalResult>;
}

/// Ranks a manual's pages with the retrieval index.
pub struct IndexRanker<'a> {
    pub model: &'a Model,
    pub featurizer: &'a Featurizer,
    pub index: &'a PageIndex,
    pub config: RetrievalConfig,
}

impl PageRanker for IndexRanker<'_> {
    fn rank(&self, manual: &Manual, qa: &QaPair) -> Result<RetrievalResult> {
        let q = self.featurizer.question(&qa.question)?;
        let h = question_states(self.model, &q)?;
        retrieve(self.index, &h, Scope::Manual(&manual.id), &self.config)
    }
}

/// Always ranks the gold pages first, in page order, then the rest.
pub struct OracleRanker;

impl PageRanker for OracleRanker {
    fn rank(&self, manual: &Manual, qa: &QaPair) -> Result<RetrievalResult> {
        let hits = manual
            .pages
            .iter()
            .map(|p| crate::retrieval::Hit {
                manual_id: manual.id.clone(),
                page_index: p.index,
                score: if qa.relevant_pages.contains(&p.index) { 1.0 } else { 0.0 },
            })
            .collect();
        Ok(crate::retrieval::rank_hits(hits, manual.pages.len()))
    }
}

/// Everything needed to evaluate one checkpoint.
pub struct Evaluator<'a> {
    pub model: &'a Model,
    pub featurizer: &'a Featurizer,
    pub pages: &'a PageStore,
    pub index: &'a PageIndex,
    pub tasks: TaskFlags,
    pub answer: AnswerOptions,
    pub retrieval: RetrievalConfig,
    /// Name printed in the report's model column.
    pub label: String,
}

/// Per-question outcome, kept so reports can be re-aggregated by bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qa_id: String,
    pub manual_id: String,
    pub gold_pages: Vec<usize>,
    pub gold_ranks: Vec<Option<usize>>,
    /// Page the answer was generated on.
    pub answered_page: Option<usize>,
    pub reference: String,
    pub hypothesis: String,
    pub gold_regions: BTreeSet<String>,
    pub predicted_regions: BTreeSet<String>,
    pub gold_labels: BTreeSet<SemanticLabel>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a Model,
        featurizer: &'a Featurizer,
        pages: &'a PageStore,
        index: &'a PageIndex,
        tasks: TaskFlags,
    ) -> Self {
        Evaluator {
            model,
            featurizer,
            pages,
            index,
            tasks,
            answer: AnswerOptions::default(),
            retrieval: RetrievalConfig {
                top_k: usize::MAX,
                mode: if tasks.pr_global {
                    ScoringMode::Global
                } else {
                    ScoringMode::TokenInteraction
                },
                ..RetrievalConfig::default()
            },
            label: tasks.label(),
        }
    }

    fn index_ranker(&self) -> IndexRanker<'_> {
        IndexRanker {
            model: self.model,
            featurizer: self.featurizer,
            index: self.index,
            config: self.retrieval,
        }
    }

    fn qa_enabled(&self) -> bool {
        self.tasks.ta || self.tasks.va
    }

    /// Scores every question in `view`. Retrieval ranks always come from the
    /// index; answers are generated on the page `answer_ranker` puts first,
    /// or on the first gold page when it is `None`.
    pub fn records(&self, view: &SplitView<'_>, answer_ranker: Option<&dyn PageRanker>) -> Result<Vec<QuestionRecord>> {
        let items: Vec<(&Manual, &QaPair)> = view.qas().collect();
        let index_ranker = self.index_ranker();
        let opts = AnswerOptions {
            text: self.tasks.ta,
            regions: self.tasks.va,
            ..self.answer
        };
        crate::par::try_map(&items, |(manual, qa)| -> Result<QuestionRecord> {
            let gold_pages: Vec<usize> = qa.relevant_pages.iter().copied().collect();
            let gold_ranks = if self.tasks.retrieval() {
                let ranked = index_ranker.rank(manual, qa)?;
                gold_pages.iter().map(|&p| ranked.rank_of(&manual.id, p)).collect()
            } else {
                Vec::new()
            };
            let answered_page = match answer_ranker {
                _ if !self.qa_enabled() => None,
                None => gold_pages.first().copied(),
                Some(r) => r.rank(manual, qa)?.hits.first().map(|h| h.page_index),
            };
            let (hypothesis, predicted_regions) = match answered_page {
                Some(page) => {
                    let feats = self.pages.get(&manual.id, page)?;
                    let q = self.featurizer.question(&qa.question)?;
                    let input = JointInput::new(&q, &feats, self.featurizer.joint_max_len);
                    let pred = answer_multimodal(self.model, &self.featurizer.vocab, &input, &opts)?;
                    (pred.text.clone(), pred.visual.selected_ids().into_iter().collect())
                }
                None => (String::new(), BTreeSet::new()),
            };
            let gold_labels = qa
                .answer
                .region_ids
                .iter()
                .filter_map(|id| manual.find_region(id).map(|(_, r)| r.label))
                .collect();
            Ok(QuestionRecord {
                qa_id: qa.id.clone(),
                manual_id: manual.id.clone(),
                gold_pages,
                gold_ranks,
                answered_page,
                reference: qa.answer.text.clone(),
                hypothesis,
                gold_regions: qa.answer.region_ids.iter().cloned().collect(),
                predicted_regions,
                gold_labels,
            })
        })
    }

    /// Aggregates records into a report.
    pub fn report(&self, setting: Setting, view: &SplitView<'_>, records: &[QuestionRecord]) -> Result<MetricReport> {
        let pages_per_manual: BTreeMap<String, usize> =
            view.manuals.iter().map(|m| (m.id.clone(), m.pages.len())).collect();
        let involved: BTreeSet<&str> = records.iter().map(|r| r.manual_id.as_str()).collect();
        let counts = Counts {
            manuals: involved.len(),
            pages: involved.iter().map(|m| pages_per_manual.get(*m).copied().unwrap_or(0)).sum(),
            questions: records.len(),
        };
        let mut report = MetricReport {
            setting,
            model: self.label.clone(),
            counts,
            retrieval: None,
            textual: None,
            visual: None,
        };
        if records.is_empty() {
            return Ok(report);
        }
        if self.tasks.retrieval() {
            let ranked: Vec<RankedQuestion> = records
                .iter()
                .map(|r| RankedQuestion {
                    manual_id: r.manual_id.clone(),
                    gold_ranks: r.gold_ranks.clone(),
                })
                .collect();
            let r = weighted_recall_at_k(&ranked, &pages_per_manual, &RECALL_KS)?;
            report.retrieval = Some(RetrievalMetrics {
                r_at_1: r[0],
                r_at_3: r[1],
                r_at_5: r[2],
            });
        }
        if self.tasks.ta {
            let hyps: Vec<String> = records.iter().map(|r| r.hypothesis.clone()).collect();
            let refs: Vec<String> = records.iter().map(|r| r.reference.clone()).collect();
            let exact = records
                .iter()
                .filter(|r| normalize_tokens(&r.hypothesis) == normalize_tokens(&r.reference))
                .count() as f64
                / records.len() as f64;
            report.textual = Some(TextMetrics {
                bleu4: bleu4(&hyps, &refs)?,
                meteor_lite: meteor_lite(&hyps, &refs)?,
                rouge_l: rouge_l(&hyps, &refs)?,
                cider: cider(&hyps, &refs)?,
                exact_match: exact,
            });
        }
        if self.tasks.va {
            let preds: Vec<BTreeSet<String>> = records.iter().map(|r| r.predicted_regions.clone()).collect();
            let golds: Vec<BTreeSet<String>> = records.iter().map(|r| r.gold_regions.clone()).collect();
            let macro_ = region_prf(&preds, &golds)?;
            report.visual = Some(VisualMetrics {
                precision: macro_.precision,
                recall: macro_.recall,
                f1: macro_.f1,
                micro: region_prf_micro(&preds, &golds)?,
            });
        }
        Ok(report)
    }

    /// Answers on the gold page; retrieval metrics from the index.
    pub fn evaluate_separate(&self, view: &SplitView<'_>) -> Result<MetricReport> {
        let records = self.records(view, None)?;
        self.report(Setting::Separate, view, &records)
    }

    /// Answers on the page `ranker` puts first (the index when `None`).
    pub fn evaluate_cascade(&self, view: &SplitView<'_>, ranker: Option<&dyn PageRanker>) -> Result<MetricReport> {
        let index_ranker = self.index_ranker();
        let ranker: &dyn PageRanker = ranker.unwrap_or(&index_ranker);
        let records = self.records(view, Some(ranker))?;
        self.report(Setting::Cascade, view, &records)
    }

    /// Separate-setting reports per gold region label. A question with
    /// gold regions of several labels counts in each of their buckets.
    pub fn report_by_region_label(&self, view: &SplitView<'_>) -> Result<BTreeMap<SemanticLabel, MetricReport>> {
        let records = self.records(view, None)?;
        let mut out = BTreeMap::new();
        for label in SemanticLabel::ALL {
            let bucket: Vec<QuestionRecord> =
                records.iter().filter(|r| r.gold_labels.contains(&label)).cloned().collect();
            if !bucket.is_empty() {
                out.insert(label, self.report(Setting::Separate, view, &bucket)?);
            }
        }
        Ok(out)
    }
}

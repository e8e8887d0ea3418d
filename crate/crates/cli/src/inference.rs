//! Question answering over loaded artifacts, shared by the service and the
//! command line.

use serde::{Deserialize, Serialize};

use ura_core::corpus::BBox;
use ura_core::qa::{answer_page, AnswerOptions, Prediction};
use ura_core::retrieval::{question_states, retrieve, RetrievalConfig, RetrievalResult, Scope, ScoringMode};
use ura_core::{Error, Result};

use crate::artifacts::Artifacts;

pub const DEFAULT_TOP_K: usize = 5;
/// Requests asking for more pages are clamped to this.
pub const MAX_TOP_K: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AskRequest {
    /// Restricts retrieval to one manual; all manuals are searched when absent.
    #[serde(default)]
    pub manual_id: Option<String>,
    pub question: String,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRegion {
    pub manual_id: String,
    pub page_index: usize,
    pub region_id: String,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPage {
    pub manual_id: String,
    pub page_index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer_text: String,
    pub regions: Vec<AnswerRegion>,
    pub retrieved_pages: Vec<RetrievedPage>,
}

impl Artifacts {
    fn retrieval_config(&self, top_k: usize) -> RetrievalConfig {
        RetrievalConfig {
            top_k,
            mode: if self.model.checkpoint.tasks.pr_global {
                ScoringMode::Global
            } else {
                ScoringMode::TokenInteraction
            },
            ..RetrievalConfig::default()
        }
    }

    /// Ranks pages for a question, within one manual or across all of them.
    pub fn rank(&self, question: &str, manual_id: Option<&str>, top_k: usize) -> Result<RetrievalResult> {
        let question = check_question(question)?;
        if top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be ≥ 1".into()));
        }
        let q = self.featurizer.question(question)?;
        let h = question_states(&self.model.checkpoint.model, &q)?;
        let scope = match manual_id {
            Some(id) => {
                if self.corpus.manual(id).is_none() {
                    return Err(Error::NotFound {
                        kind: "manual",
                        name: id.to_string(),
                    });
                }
                Scope::Manual(id)
            }
            None => Scope::All,
        };
        retrieve(&self.index, &h, scope, &self.retrieval_config(top_k.min(MAX_TOP_K)))
    }

    /// Generated text and selected regions (with their boxes) for one page.
    pub fn predict_on(
        &self,
        question: &str,
        manual_id: &str,
        page_index: usize,
        opts: &AnswerOptions,
    ) -> Result<(Prediction, Vec<AnswerRegion>)> {
        let question = check_question(question)?;
        let manual = self.corpus.manual(manual_id).ok_or_else(|| Error::NotFound {
            kind: "manual",
            name: manual_id.to_string(),
        })?;
        let features = self.pages.get(manual_id, page_index)?;
        let tasks = self.model.checkpoint.tasks;
        let opts = AnswerOptions {
            text: opts.text && tasks.ta,
            regions: opts.regions && tasks.va,
            ..*opts
        };
        let pred = answer_page(&self.model.checkpoint.model, &self.featurizer, question, &features, &opts)?;
        let regions = pred
            .visual
            .selected
            .iter()
            .filter_map(|r| {
                let (page, region) = manual.find_region(&r.region_id)?;
                Some(AnswerRegion {
                    manual_id: manual_id.to_string(),
                    page_index: page.index,
                    region_id: r.region_id.clone(),
                    label: r.label.as_str().to_string(),
                    bbox: region.bbox,
                    probability: r.probability,
                })
            })
            .collect();
        Ok((pred, regions))
    }

    /// Retrieves, then answers on the top-ranked page.
    pub fn ask(&self, req: &AskRequest, opts: &AnswerOptions) -> Result<AskResponse> {
        let ranked = self.rank(&req.question, req.manual_id.as_deref(), req.top_k.unwrap_or(DEFAULT_TOP_K))?;
        let retrieved_pages: Vec<RetrievedPage> = ranked
            .hits
            .iter()
            .map(|h| RetrievedPage {
                manual_id: h.manual_id.clone(),
                page_index: h.page_index,
                score: h.score,
            })
            .collect();
        let Some(top) = ranked.hits.first() else {
            return Ok(AskResponse {
                answer_text: String::new(),
                regions: Vec::new(),
                retrieved_pages,
            });
        };
        let (pred, regions) = self.predict_on(&req.question, &top.manual_id, top.page_index, opts)?;
        Ok(AskResponse {
            answer_text: pred.text,
            regions,
            retrieved_pages,
        })
    }
}

fn check_question(q: &str) -> Result<&str> {
    let q = q.trim();
    if q.is_empty() {
        return Err(Error::InvalidArgument("question is empty".into()));
    }
    Ok(q)
}

//! Multimodal answering over one page: a generated sentence plus the set
//! of page regions that support it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autograd::{bce_value, Tape, Var};
use crate::corpus::{MultimodalAnswer, SemanticLabel};
use crate::error::{Error, Result};
use crate::featurize::{Featurizer, PageFeatures, QuestionFeatures, Vocabulary};
use crate::model::{DropoutRng, HiddenStates, Model};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ANSWER_MAX_LEN: usize = 48;

/// A page cut to fit beside a question, with marker positions shifted into
/// the joint sequence.
#[derive(Clone, Debug)]
pub struct JointInput {
    pub question: QuestionFeatures,
    pub page: PageFeatures,
    /// Marker rows in the joint sequence, one per kept region.
    pub markers: Vec<usize>,
}

impl JointInput {
    pub fn new(question: &QuestionFeatures, page: &PageFeatures, max_len: usize) -> Self {
        let room = max_len.saturating_sub(question.len());
        let page = if page.len() > room { page.truncated(room) } else { page.clone() };
        let offset = question.len();
        let markers = page.marker_positions.iter().map(|m| m + offset).collect();
        JointInput {
            question: question.clone(),
            page,
            markers,
        }
    }

    pub fn len(&self) -> usize {
        self.question.len() + self.page.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn region_ids(&self) -> &[String] {
        &self.page.region_ids
    }

    pub fn region_labels(&self) -> &[SemanticLabel] {
        &self.page.region_labels
    }

    /// 0/1 membership of each kept region in `gold`.
    pub fn region_targets(&self, gold: &[String]) -> Vec<f64> {
        let gold: BTreeSet<&str> = gold.iter().map(String::as_str).collect();
        self.page
            .region_ids
            .iter()
            .map(|id| if gold.contains(id.as_str()) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Joint encoder pass over `[question; page]` on a tape.
pub fn joint_states_on(model: &Model, t: &mut Tape, input: &JointInput, rng: DropoutRng) -> Result<Var> {
    let zq = model.tables().question(t, &input.question)?;
    let emb = if input.page.is_empty() {
        zq
    } else {
        let zp = model.tables().page(t, &input.page)?;
        t.concat_rows(&[zq, zp])
    };
    model.encode(t, emb, &vec![true; input.len()], rng)
}

/// Evaluation-mode joint encoding.
pub fn joint_encode(model: &Model, input: &JointInput) -> Result<HiddenStates> {
    let mut t = model.tape();
    let h = joint_states_on(model, &mut t, input, None)?;
    Ok(t.value(h).clone())
}

/// Greedy answer text from joint states.
pub fn answer_textual(model: &Model, vocab: &Vocabulary, h: &HiddenStates, max_len: usize) -> Result<String> {
    let ids = model.generate(h, max_len)?;
    Ok(vocab.decode(&ids))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region_id: String,
    pub label: SemanticLabel,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualAnswer {
    /// Regions with probability at or above the threshold, in page order.
    pub selected: Vec<RegionScore>,
    /// Every kept region, in page order.
    pub all: Vec<RegionScore>,
}

impl VisualAnswer {
    pub fn selected_ids(&self) -> Vec<String> {
        self.selected.iter().map(|r| r.region_id.clone()).collect()
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(())
}

/// Region probabilities at the marker rows, thresholded inclusively.
pub fn answer_visual(model: &Model, input: &JointInput, h: &HiddenStates, threshold: f64) -> Result<VisualAnswer> {
    check_threshold(threshold)?;
    let probs = model.region_probabilities(h, &input.markers)?;
    let all: Vec<RegionScore> = probs
        .iter()
        .zip(input.region_ids().iter().zip(input.region_labels()))
        .map(|(&p, (id, &label))| RegionScore {
            region_id: id.clone(),
            label,
            probability: p,
        })
        .collect();
    let selected = all.iter().filter(|r| r.probability >= threshold).cloned().collect();
    Ok(VisualAnswer { selected, all })
}

/// Mean binary cross-entropy of region probabilities against 0/1 targets,
/// with probabilities clamped away from 0 and 1.
pub fn bce_region_loss(probabilities: &[f64], gold: &[f64]) -> Result<f64> {
    if probabilities.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} targets",
            probabilities.len(),
            gold.len()
        )));
    }
    Ok(bce_value(probabilities.iter().copied(), gold.iter().copied()))
}

/// Both answer parts from one joint encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    pub visual: VisualAnswer,
}

impl Prediction {
    pub fn to_answer(&self) -> MultimodalAnswer {
        MultimodalAnswer {
            text: self.text.clone(),
            region_ids: self.visual.selected_ids(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnswerOptions {
    pub threshold: f64,
    pub max_len: usize,
    pub text: bool,
    pub regions: bool,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        AnswerOptions {
            threshold: DEFAULT_THRESHOLD,
            max_len: DEFAULT_ANSWER_MAX_LEN,
            text: true,
            regions: true,
        }
    }
}

/// Answers from a single encoder pass shared by both heads. Disabled parts
/// come back empty.
pub fn answer_multimodal(model: &Model, vocab: &Vocabulary, input: &JointInput, opts: &AnswerOptions) -> Result<Prediction> {
    check_threshold(opts.threshold)?;
    let h = joint_encode(model, input)?;
    let text = if opts.text {
        answer_textual(model, vocab, &h, opts.max_len)?
    } else {
        String::new()
    };
    let visual = if opts.regions {
        answer_visual(model, input, &h, opts.threshold)?
    } else {
        VisualAnswer {
            selected: Vec::new(),
            all: Vec::new(),
        }
    };
    Ok(Prediction { text, visual })
}

/// Featurizes a question and page and answers.
pub fn answer_page(
    model: &Model,
    featurizer: &Featurizer,
    question: &str,
    page: &PageFeatures,
    opts: &AnswerOptions,
) -> Result<Prediction> {
    let q = featurizer.question(question)?;
    let input = JointInput::new(&q, page, featurizer.joint_max_len);
    answer_multimodal(model, &featurizer.vocab, &input, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mat;
    use crate::corpus::tests::tiny_manual;
    use crate::featurize::{build_vocab_from_texts, PageImages};
    use crate::model::ModelConfig;
    use std::sync::Arc;

    fn setup() -> (Model, Featurizer) {
        let m = tiny_manual("m1");
        let texts: Vec<String> = m.pages.iter().map(|p| p.text()).chain(m.qas.iter().map(|q| q.question.clone())).collect();
        let vocab = Arc::new(build_vocab_from_texts(texts.iter().map(String::as_str), 64).unwrap());
        let f = Featurizer::new(vocab.clone(), PageImages::Rendered);
        let config = ModelConfig {
            hidden_dim: 16,
            n_layers: 1,
            n_heads: 2,
            feedforward_dim: 32,
            ..ModelConfig::tiny(&vocab, f.roi_dim())
        };
        (Model::new(config, 3).unwrap(), f)
    }

    #[test]
    fn joint_input_offsets_markers() {
        let (_, f) = setup();
        let m = tiny_manual("m1");
        let q = f.question("how do i setup?").unwrap();
        let p = f.page(&m.pages[0]).unwrap();
        let j = JointInput::new(&q, &p, 512);
        assert_eq!(j.len(), q.len() + p.len());
        for (jm, pm) in j.markers.iter().zip(&p.marker_positions) {
            assert_eq!(*jm, pm + q.len());
        }
        let short = JointInput::new(&q, &p, q.len() + 1);
        assert_eq!(short.len(), q.len() + 1);
        assert_eq!(short.markers, vec![q.len()]);
    }

    #[test]
    fn joint_encoding_has_one_row_per_token() {
        let (model, f) = setup();
        let m = tiny_manual("m1");
        let q = f.question("setup?").unwrap();
        let p = f.page(&m.pages[0]).unwrap();
        let j = JointInput::new(&q, &p, 512);
        let h = joint_encode(&model, &j).unwrap();
        assert_eq!(h.nrows(), q.len() + p.len());
        assert_eq!(h, joint_encode(&model, &j).unwrap());
    }

    #[test]
    fn multimodal_is_one_pass_and_matches_separate_heads() {
        let (model, f) = setup();
        let m = tiny_manual("m1");
        let p = f.page(&m.pages[0]).unwrap();
        let q = f.question("what is the setup?").unwrap();
        let j = JointInput::new(&q, &p, 512);
        let before = model.encoder_passes();
        let pred = answer_multimodal(&model, &f.vocab, &j, &AnswerOptions::default()).unwrap();
        assert_eq!(model.encoder_passes() - before, 1);
        let h = joint_encode(&model, &j).unwrap();
        assert_eq!(pred.text, answer_textual(&model, &f.vocab, &h, DEFAULT_ANSWER_MAX_LEN).unwrap());
        assert_eq!(pred.visual, answer_visual(&model, &j, &h, 0.5).unwrap());
    }

    #[test]
    fn zero_head_selects_everything_at_one_half() {
        let (mut model, f) = setup();
        model.set_param("selector.w", Mat::zeros((16, 1))).unwrap();
        let m = tiny_manual("m1");
        let p = f.page(&m.pages[0]).unwrap();
        let q = f.question("setup?").unwrap();
        let j = JointInput::new(&q, &p, 512);
        let h = joint_encode(&model, &j).unwrap();
        let v = answer_visual(&model, &j, &h, 0.5).unwrap();
        assert_eq!(v.selected.len(), p.region_ids.len());
        assert!(v.all.iter().all(|r| r.probability == 0.5));
    }

    #[test]
    fn selection_shrinks_with_threshold() {
        let (model, f) = setup();
        let m = tiny_manual("m1");
        let p = f.page(&m.pages[1]).unwrap();
        let q = f.question("setup?").unwrap();
        let j = JointInput::new(&q, &p, 512);
        let h = joint_encode(&model, &j).unwrap();
        let mut prev = usize::MAX;
        for t in [0.01, 0.2, 0.4, 0.5, 0.6, 0.8, 0.99] {
            let n = answer_visual(&model, &j, &h, t).unwrap().selected.len();
            assert!(n <= prev);
            prev = n;
        }
        assert!(answer_visual(&model, &j, &h, 1.0).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((bce_region_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let eps = 1e-7;
        assert!(bce_region_loss(&[1.0 - eps, eps], &[1.0, 0.0]).unwrap() < 1e-6);
        let v = bce_region_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        assert!((v - (-(0.9f64.ln()))).abs() < 1e-12);
        assert!((v - 0.105).abs() < 1e-3);
        assert!(bce_region_loss(&[0.0, 1.0], &[0.0, 1.0]).unwrap() < 1e-6);
        assert!(bce_region_loss(&[0.5], &[]).is_err());
    }

    #[test]
    fn empty_page_still_answers() {
        let (model, f) = setup();
        let mut m = tiny_manual("m1");
        m.pages[0].regions.clear();
        let p = f.page(&m.pages[0]).unwrap();
        let pred = answer_page(&model, &f, "anything?", &p, &AnswerOptions::default()).unwrap();
        assert_eq!(pred.visual.all.len(), 1);
    }
}

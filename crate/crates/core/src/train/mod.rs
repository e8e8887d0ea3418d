//! Multitask training: retrieval contrastive loss, answer generation and
//! region selection, summed without weights.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Grads, Mat, ParamStore, Tape, Var};
use crate::corpus::{Corpus, Split, SplitView};
use crate::error::{Error, Result};
use crate::eval::{Evaluator, MetricReport};
use crate::featurize::{Featurizer, PageFeatures, PageStore, QuestionFeatures, TokenId};
use crate::model::{Checkpoint, Model, ModelConfig, TaskFlags};
use crate::par;
use crate::qa::{joint_states_on, JointInput};
use crate::retrieval::{
    build_index, maxsim_normalized, nce_loss_with_grad, page_states_on, question_states_on, retrieval_loss,
};

pub use config::{SelectionMetric, TrainConfig};

/// One featurized training triple.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub qa_id: String,
    pub manual_id: String,
    pub page_index: usize,
    pub question: QuestionFeatures,
    pub page: Arc<PageFeatures>,
    pub joint: JointInput,
    pub answer_ids: Vec<TokenId>,
    pub region_targets: Vec<f64>,
}

/// Featurizes the single-gold-page questions of `view`.
pub fn prepare_examples(view: &SplitView<'_>, featurizer: &Featurizer, pages: &PageStore) -> Result<Vec<TrainExample>> {
    let items: Vec<_> = view.qas().filter(|(_, qa)| qa.relevant_pages.len() == 1).collect();
    par::try_map(&items, |(manual, qa)| -> Result<TrainExample> {
        let page_index = *qa.relevant_pages.first().expect("one page");
        let page = pages.get(&manual.id, page_index)?;
        let question = featurizer.question(&qa.question)?;
        let joint = JointInput::new(&question, &page, featurizer.joint_max_len);
        let region_targets = joint.region_targets(&qa.answer.region_ids);
        Ok(TrainExample {
            qa_id: qa.id.clone(),
            manual_id: manual.id.clone(),
            page_index,
            question,
            page,
            joint,
            answer_ids: featurizer.vocab.encode(&qa.answer.text),
            region_targets,
        })
    })
}

/// Example indices grouped into batches, shuffled by `(seed, epoch)`. The
/// last batch may be short.
pub fn make_batches(n_examples: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if n_examples == 0 {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be ≥ 1".into()));
    }
    let mut idx: Vec<usize> = (0..n_examples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    idx.shuffle(&mut rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Loss of each enabled objective for one batch, and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    /// Retrieval loss (token-level or pooled, whichever is enabled).
    pub pr: Option<f64>,
    pub ta: Option<f64>,
    pub va: Option<f64>,
    pub total: f64,
}

impl LossComponents {
    fn finish(pr: Option<f64>, ta: Option<f64>, va: Option<f64>) -> Self {
        LossComponents {
            pr,
            ta,
            va,
            total: pr.unwrap_or(0.0) + ta.unwrap_or(0.0) + va.unwrap_or(0.0),
        }
    }
}

fn dropout_rng(seed: u64, step: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    r.set_stream(index as u64 * 4 + stream);
    r
}

struct Side<'p> {
    tape: Tape<'p>,
    out: Var,
    value: Mat,
}

fn backward_all(sides: Vec<(Side<'_>, Mat)>, n_params: usize) -> Vec<Grads> {
    par::map(&sides, |(side, seed)| {
        let mut g = Grads::new(n_params);
        side.tape.backward(&[(side.out, seed.clone())], &mut g);
        g
    })
}

/// Losses and summed parameter gradients for one batch. Per-example work
/// runs in parallel; gradients are reduced in a fixed order so the result
/// does not depend on the thread count.
pub fn compute_gradients(
    model: &Model,
    batch: &[&TrainExample],
    config: &TrainConfig,
    step: u64,
) -> Result<(LossComponents, Grads)> {
    let tasks = config.tasks;
    tasks.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n_params = model.params.len();
    let dropping = model.config.dropout > 0.0;
    let mut grads = Grads::new(n_params);
    let b = batch.len();

    let mut pr = None;
    if tasks.retrieval() {
        let global = tasks.pr_global;
        let encode = |i: usize, question: bool| -> Result<Side<'_>> {
            let ex = batch[i];
            let mut t = model.tape();
            let mut rng = dropout_rng(config.seed, step, i, if question { 0 } else { 1 });
            let rng = if dropping { Some(&mut rng) } else { None };
            let h = if question {
                question_states_on(model, &mut t, &ex.question, rng)?
            } else {
                page_states_on(model, &mut t, &ex.page, rng)?
            };
            let out = if global {
                let m = t.mean_rows(h);
                t.row_normalize(m)?
            } else {
                t.row_normalize(h)?
            };
            let value = t.value(out).clone();
            Ok(Side { tape: t, out, value })
        };
        let qs = par::map_range(b, |i| encode(i, true)).into_iter().collect::<Result<Vec<_>>>()?;
        let ps = par::map_range(b, |i| encode(i, false)).into_iter().collect::<Result<Vec<_>>>()?;
        let mut dq: Vec<Mat> = qs.iter().map(|s| Mat::zeros(s.value.dim())).collect();
        let mut dp: Vec<Mat> = ps.iter().map(|s| Mat::zeros(s.value.dim())).collect();
        let loss = if global {
            let g = Mat::from_shape_fn((b, b), |(i, j)| qs[i].value.row(0).dot(&ps[j].value.row(0)));
            let (loss, dg) = nce_loss_with_grad(&g, config.temperature)?;
            for i in 0..b {
                for j in 0..b {
                    dq[i].scaled_add(dg[[i, j]], &ps[j].value);
                    dp[j].scaled_add(dg[[i, j]], &qs[i].value);
                }
            }
            loss
        } else {
            let pairs = par::map_range(b * b, |k| maxsim_normalized(&qs[k / b].value, &ps[k % b].value))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let s_qp = Mat::from_shape_fn((b, b), |(i, j)| pairs[i * b + j].s_qp);
            let s_pq = Mat::from_shape_fn((b, b), |(i, j)| pairs[i * b + j].s_pq);
            let (loss, g_qp, g_pq) = retrieval_loss(&s_qp, &s_pq, config.temperature)?;
            for i in 0..b {
                for j in 0..b {
                    let (a, c) = pairs[i * b + j].backward(&qs[i].value, &ps[j].value, g_qp[[i, j]], g_pq[[i, j]]);
                    dq[i] += &a;
                    dp[j] += &c;
                }
            }
            loss
        };
        pr = Some(loss);
        let sides: Vec<(Side, Mat)> = qs.into_iter().zip(dq).chain(ps.into_iter().zip(dp)).collect();
        for g in backward_all(sides, n_params) {
            grads.merge(g);
        }
    }

    let (mut ta, mut va) = (None, None);
    if tasks.ta || tasks.va {
        let n_va = batch.iter().filter(|ex| !ex.joint.markers.is_empty()).count();
        let per_example = par::map_range(b, |i| -> Result<(Option<f64>, Option<f64>, Grads)> {
            let ex = batch[i];
            let mut t = model.tape();
            let mut rng = dropout_rng(config.seed, step, i, 2);
            let h = joint_states_on(model, &mut t, &ex.joint, if dropping { Some(&mut rng) } else { None })?;
            let mut seeds = Vec::new();
            let mut ta_i = None;
            let mut va_i = None;
            if tasks.ta {
                let l = model.decode_loss(&mut t, h, &ex.answer_ids, if dropping { Some(&mut rng) } else { None })?;
                ta_i = Some(t.value(l)[[0, 0]]);
                seeds.push((l, Mat::from_elem((1, 1), 1.0 / b as f64)));
            }
            if tasks.va && !ex.joint.markers.is_empty() {
                let hs = if config.detach_selector { t.detach(h) } else { h };
                let p = model.region_select(&mut t, hs, &ex.joint.markers)?;
                let l = t.bce(p, &ex.region_targets)?;
                va_i = Some(t.value(l)[[0, 0]]);
                seeds.push((l, Mat::from_elem((1, 1), 1.0 / n_va as f64)));
            }
            let mut g = Grads::new(n_params);
            t.backward(&seeds, &mut g);
            Ok((ta_i, va_i, g))
        });
        let mut ta_sum = 0.0;
        let mut va_sum = 0.0;
        for r in per_example {
            let (a, v, g) = r?;
            ta_sum += a.unwrap_or(0.0);
            va_sum += v.unwrap_or(0.0);
            grads.merge(g);
        }
        if tasks.ta {
            ta = Some(ta_sum / b as f64);
        }
        if tasks.va && n_va > 0 {
            va = Some(va_sum / n_va as f64);
        }
    }

    let losses = LossComponents::finish(pr, ta, va);
    if !losses.total.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss or gradient at step {step}: {losses:?}, examples {:?}",
            batch.iter().map(|e| e.qa_id.as_str()).collect::<Vec<_>>()
        )));
    }
    Ok((losses, grads))
}

/// Adam with decoupled weight decay and a constant learning rate. Decay
/// applies to matrices only; biases and normalization gains (single-row
/// parameters) are not decayed. Parameters are rounded to `f32` after
/// every update.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl AdamW {
    pub fn new(config: &TrainConfig, n_params: usize) -> Self {
        AdamW {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            t: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let k = id.0;
            let m = self.m[k].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v[k].get_or_insert_with(|| Mat::zeros(g.dim()));
            let decay = if params.value(id).nrows() > 1 { self.weight_decay } else { 0.0 };
            let p = params.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                let x = *p - self.learning_rate * (mh / (vh.sqrt() + self.eps) + decay * *p);
                *p = x as f32 as f64;
            });
        }
    }
}

/// A model with its optimizer state.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(&config, model.params.len());
        Ok(Trainer { model, optimizer, config })
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &[&TrainExample]) -> Result<LossComponents> {
        let step = self.optimizer.steps();
        let (losses, grads) = compute_gradients(&self.model, batch, &self.config, step)?;
        self.optimizer.update(&mut self.model.params, &grads);
        Ok(losses)
    }

    /// Runs `steps` optimizer steps, cycling through shuffled epochs.
    pub fn run_steps(&mut self, examples: &[TrainExample], steps: usize, mut on_step: impl FnMut(usize, &LossComponents)) -> Result<()> {
        let mut done = 0;
        let mut epoch = 0;
        while done < steps {
            for batch in make_batches(examples.len(), self.config.batch_size, self.config.seed, epoch)? {
                if done == steps {
                    break;
                }
                let refs: Vec<&TrainExample> = batch.iter().map(|&i| &examples[i]).collect();
                let losses = self.train_step(&refs)?;
                on_step(done, &losses);
                done += 1;
            }
            epoch += 1;
        }
        Ok(())
    }
}

/// Means of the per-step losses over an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub pr: Option<f64>,
    pub ta: Option<f64>,
    pub va: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub losses: EpochLosses,
    pub val: Option<MetricReport>,
    pub selection_score: Option<f64>,
}

pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub checkpoint_path: PathBuf,
}

fn selection_score(metric: SelectionMetric, r: &MetricReport) -> Option<f64> {
    let r1 = r.retrieval.map(|m| m.r_at_1);
    let rl = r.textual.map(|m| m.rouge_l);
    let f1 = r.visual.map(|m| m.f1);
    match metric {
        SelectionMetric::Composite => {
            let parts: Vec<f64> = [r1, rl, f1].into_iter().flatten().collect();
            (!parts.is_empty()).then(|| parts.iter().sum())
        }
        SelectionMetric::RAt1 => r1,
        SelectionMetric::RougeL => rl,
        SelectionMetric::F1 => f1,
    }
}

/// Builds a model for `config.profile` sized to the featurizer's vocabulary.
pub fn init_model(featurizer: &Featurizer, config: &TrainConfig) -> Result<Model> {
    let mc = ModelConfig::profile(&config.profile, &featurizer.vocab, featurizer.roi_dim())?;
    Model::new(mc, config.seed)
}

/// Trains on the train split, validates after every epoch, and keeps the
/// epoch with the best validation score (the earliest one on ties; the last
/// one when there is nothing to validate on). Writes `best.ckpt` and
/// `train_log.jsonl` under `config.checkpoint_dir`.
pub fn fit(corpus: &Corpus, featurizer: &Featurizer, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    let train_view = corpus.view(Split::Train);
    let val_view = corpus.view(Split::Val);
    let mut pages = featurizer.page_store_for(&train_view)?;
    pages.merge(featurizer.page_store_for(&val_view)?);
    let examples = prepare_examples(&train_view, featurizer, &pages)?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("train split has no single-page questions".into()));
    }
    let vocab_hash = featurizer.vocab.hash();
    let mut trainer = Trainer::new(init_model(featurizer, config)?, config.clone())?;

    fs::create_dir_all(&config.checkpoint_dir).map_err(|e| Error::io(&config.checkpoint_dir, e))?;
    let log_path = config.checkpoint_dir.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut best: Option<(f64, usize, Model)> = None;
    let mut last_model = None;
    let mut log = Vec::new();
    'epochs: for epoch in 0..config.epochs {
        let mut sums = EpochLosses::default();
        let mut counts = [0usize; 3];
        let mut n = 0usize;
        for batch in make_batches(examples.len(), config.batch_size, config.seed, epoch as u64)? {
            if config.max_steps.is_some_and(|m| trainer.optimizer.steps() as usize >= m) {
                break;
            }
            let refs: Vec<&TrainExample> = batch.iter().map(|&i| &examples[i]).collect();
            let l = trainer.train_step(&refs)?;
            for (k, (acc, v)) in [(&mut sums.pr, l.pr), (&mut sums.ta, l.ta), (&mut sums.va, l.va)]
                .into_iter()
                .enumerate()
            {
                if let Some(v) = v {
                    *acc = Some(acc.unwrap_or(0.0) + v);
                    counts[k] += 1;
                }
            }
            sums.total += l.total;
            n += 1;
        }
        if n == 0 {
            break 'epochs;
        }
        let mean = |s: Option<f64>, c: usize| s.map(|v| v / c as f64);
        let losses = EpochLosses {
            pr: mean(sums.pr, counts[0]),
            ta: mean(sums.ta, counts[1]),
            va: mean(sums.va, counts[2]),
            total: sums.total / n as f64,
        };
        let val = if val_view.n_qas() > 0 {
            Some(validate(&trainer.model, featurizer, &pages, &val_view, config.tasks)?)
        } else {
            None
        };
        let score = val.as_ref().and_then(|r| selection_score(config.selection_metric, r));
        info!("epoch {epoch}: loss {:.4} val score {:?}", losses.total, score);
        let entry = EpochLog {
            epoch,
            steps: trainer.optimizer.steps(),
            losses,
            val,
            selection_score: score,
        };
        let line = serde_json::to_string(&entry)?;
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.push(entry);
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
                best = Some((s, epoch, trainer.model.clone()));
            }
        }
        last_model = Some((epoch, trainer.model.clone()));
    }
    let (best_epoch, model) = match (best, last_model) {
        (Some((_, e, m)), _) => (e, m),
        (None, Some((e, m))) => (e, m),
        (None, None) => return Err(Error::InvalidArgument("no training steps were run".into())),
    };
    let checkpoint = Checkpoint {
        model,
        vocab_hash,
        step: log.get(best_epoch).map_or(0, |l| l.steps),
        tasks: config.tasks,
    };
    let checkpoint_path = config.checkpoint_dir.join("best.ckpt");
    checkpoint.save(&checkpoint_path)?;
    Ok(FitOutcome {
        checkpoint,
        best_epoch,
        log,
        checkpoint_path,
    })
}

fn validate(model: &Model, featurizer: &Featurizer, pages: &PageStore, view: &SplitView<'_>, tasks: TaskFlags) -> Result<MetricReport> {
    let index = build_index(model, featurizer, &view.manuals, "validation")?;
    Evaluator::new(model, featurizer, pages, &index, tasks).evaluate_separate(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;
    use crate::featurize::{build_vocab, PageImages};

    fn setup(tasks: &str) -> (Vec<TrainExample>, Model, TrainConfig) {
        let corpus = generate_synthetic(3, 2, 3, 2).unwrap();
        let vocab = Arc::new(build_vocab(&corpus, 200).unwrap());
        let f = Featurizer::new(vocab.clone(), PageImages::Rendered);
        let view = corpus.view_all();
        let pages = f.page_store_for(&view).unwrap();
        let examples = prepare_examples(&view, &f, &pages).unwrap();
        let config = TrainConfig {
            tasks: TaskFlags::parse(tasks).unwrap(),
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mc = ModelConfig {
            hidden_dim: 16,
            n_heads: 2,
            feedforward_dim: 32,
            ..ModelConfig::tiny(&vocab, f.roi_dim())
        };
        (examples, Model::new(mc, 1).unwrap(), config)
    }

    #[test]
    fn batches_cover_every_example_once() {
        let b = make_batches(80, 8, 5, 0).unwrap();
        assert_eq!(b.len(), 10);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..80).collect::<Vec<_>>());
        assert_eq!(b, make_batches(80, 8, 5, 0).unwrap());
        assert_ne!(b, make_batches(80, 8, 5, 1).unwrap());
        assert_eq!(make_batches(81, 8, 5, 0).unwrap().len(), 11);
        assert!(make_batches(0, 8, 5, 0).is_err());
    }

    #[test]
    fn total_is_sum_of_enabled_components() {
        for flags in ["TA", "PR", "PR_g", "PR+TA", "PR+TA+VA", "VA"] {
            let (ex, model, config) = setup(flags);
            let batch: Vec<&TrainExample> = ex.iter().take(4).collect();
            let (l, g) = compute_gradients(&model, &batch, &config, 0).unwrap();
            assert_eq!(l.pr.is_some(), config.tasks.retrieval(), "{flags}");
            assert_eq!(l.ta.is_some(), config.tasks.ta, "{flags}");
            assert_eq!(l.va.is_some(), config.tasks.va, "{flags}");
            assert_eq!(l.total, l.pr.unwrap_or(0.0) + l.ta.unwrap_or(0.0) + l.va.unwrap_or(0.0));
            assert!(g.norm() > 0.0);
        }
    }

    #[test]
    fn initial_qa_losses_match_uniform_predictions() {
        let (ex, model, config) = setup("PR+TA+VA");
        let batch: Vec<&TrainExample> = ex.iter().take(8).collect();
        let ln_v = (model.config.vocab_size as f64).ln();
        for seed in 0..5 {
            let m = Model::new(model.config.clone(), seed).unwrap();
            let (l, _) = compute_gradients(&m, &batch, &config, 0).unwrap();
            let (ta, va) = (l.ta.unwrap(), l.va.unwrap());
            assert!((ta / ln_v - 1.0).abs() < 0.1, "seed {seed}: {ta} vs ln V {ln_v}");
            assert!((va / 2f64.ln() - 1.0).abs() < 0.1, "seed {seed}: {va}");
        }
    }

    #[test]
    fn parallel_and_sequential_gradients_are_identical() {
        let (ex, model, config) = setup("PR+TA+VA");
        let batch: Vec<&TrainExample> = ex.iter().take(4).collect();
        let (lp, gp) = par::with_mode(par::Mode::Parallel, || compute_gradients(&model, &batch, &config, 0).unwrap());
        let (ls, gs) = par::with_mode(par::Mode::Sequential, || compute_gradients(&model, &batch, &config, 0).unwrap());
        assert_eq!(lp, ls);
        for id in model.params.ids() {
            assert_eq!(gp.get(id), gs.get(id));
        }
    }

    #[test]
    fn training_reduces_loss() {
        let (ex, model, config) = setup("PR+TA+VA");
        let mut t = Trainer::new(model, config).unwrap();
        let batch: Vec<&TrainExample> = ex.iter().take(4).collect();
        let first = t.train_step(&batch).unwrap().total;
        for _ in 0..30 {
            t.train_step(&batch).unwrap();
        }
        let last = compute_gradients(&t.model, &batch, &t.config, 99).unwrap().0.total;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn detached_selector_leaves_text_loss_unchanged() {
        let (ex, model, mut config) = setup("PR+TA+VA");
        config.detach_selector = true;
        let mut with_va = Trainer::new(model.clone(), config.clone()).unwrap();
        config.tasks = TaskFlags::parse("PR+TA").unwrap();
        let mut without_va = Trainer::new(model, config).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        with_va.run_steps(&ex, 5, |_, l| a.push(l.ta.unwrap())).unwrap();
        without_va.run_steps(&ex, 5, |_, l| b.push(l.ta.unwrap())).unwrap();
        assert_eq!(a, b);
    }
}

//! Page retrieval: token-level late interaction, contrastive loss, and a
//! persisted page index.

mod index;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autograd::{log_softmax_row, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::featurize::{PageFeatures, QuestionFeatures};
use crate::model::{DropoutRng, HiddenStates, Model};

pub use index::{build_index, PageIndex, PageRef, IndexEntry, INDEX_MAGIC};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Mean over question tokens of the best-matching page token.
    TokenInteraction,
    /// Cosine of mean-pooled sequence vectors.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub mode: ScoringMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            temperature: DEFAULT_TEMPERATURE,
            top_k: 5,
            mode: ScoringMode::TokenInteraction,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Scales each row to unit length; zero rows are an error.
pub fn normalize_rows(h: &Mat) -> Result<Mat> {
    let mut out = h.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numerical("cannot normalize a zero-norm embedding".into()));
        }
        row.mapv_inplace(|x| x / n);
    }
    Ok(out)
}

/// Late-interaction scores of one question against one page, with the
/// arg-max bookkeeping needed to back-propagate through them.
#[derive(Clone, Debug)]
pub struct MaxSim {
    /// Cosine similarity of question row `i` and page row `j`.
    pub s: Mat,
    pub s_qp: f64,
    pub s_pq: f64,
    /// For each question row, the page row attaining its maximum.
    pub best_page_row: Vec<usize>,
    /// For each page row, the question row attaining its maximum.
    pub best_question_row: Vec<usize>,
}

/// Scores rows that are already unit-normalized.
pub fn maxsim_normalized(q: &Mat, p: &Mat) -> Result<MaxSim> {
    if q.nrows() == 0 || p.nrows() == 0 {
        return Err(Error::Shape("score_pair needs at least one row on each side".into()));
    }
    if q.ncols() != p.ncols() {
        return Err(Error::Shape(format!("question width {} vs page width {}", q.ncols(), p.ncols())));
    }
    let s = q.dot(&p.t());
    let argmax = |it: ndarray::ArrayView1<f64>| {
        let mut best = 0;
        for (k, &v) in it.iter().enumerate() {
            if v > it[best] {
                best = k;
            }
        }
        best
    };
    let best_page_row: Vec<usize> = s.rows().into_iter().map(argmax).collect();
    let best_question_row: Vec<usize> = s.columns().into_iter().map(argmax).collect();
    let s_qp = best_page_row.iter().enumerate().map(|(i, &j)| s[[i, j]]).sum::<f64>() / q.nrows() as f64;
    let s_pq = best_question_row.iter().enumerate().map(|(j, &i)| s[[i, j]]).sum::<f64>() / p.nrows() as f64;
    Ok(MaxSim {
        s,
        s_qp,
        s_pq,
        best_page_row,
        best_question_row,
    })
}

/// Late-interaction scores of question states `h_q` (`N × d`) against page
/// states `h_p` (`M × d`).
pub fn score_pair(h_q: &Mat, h_p: &Mat) -> Result<MaxSim> {
    maxsim_normalized(&normalize_rows(h_q)?, &normalize_rows(h_p)?)
}

impl MaxSim {
    /// Gradients with respect to the normalized question and page rows for
    /// upstream gradients `d_qp` on `s_qp` and `d_pq` on `s_pq`.
    pub fn backward(&self, q: &Mat, p: &Mat, d_qp: f64, d_pq: f64) -> (Mat, Mat) {
        let (n, m) = (q.nrows(), p.nrows());
        let mut dq = Mat::zeros(q.dim());
        let mut dp = Mat::zeros(p.dim());
        let a = d_qp / n as f64;
        for (i, &j) in self.best_page_row.iter().enumerate() {
            dq.row_mut(i).scaled_add(a, &p.row(j));
            dp.row_mut(j).scaled_add(a, &q.row(i));
        }
        let b = d_pq / m as f64;
        for (j, &i) in self.best_question_row.iter().enumerate() {
            dq.row_mut(i).scaled_add(b, &p.row(j));
            dp.row_mut(j).scaled_add(b, &q.row(i));
        }
        (dq, dp)
    }
}

fn check_square(s: &Mat) -> Result<()> {
    if s.nrows() != s.ncols() || s.nrows() == 0 {
        return Err(Error::Shape(format!("score matrix must be square and non-empty, got {:?}", s.dim())));
    }
    Ok(())
}

/// Mean over rows of `-log softmax(S_i / τ)[i]`, and its gradient.
pub fn nce_direction(s: &Mat, tau: f64) -> Result<(f64, Mat)> {
    check_square(s)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be > 0")));
    }
    let b = s.nrows();
    let mut loss = 0.0;
    let mut grad = Mat::zeros((b, b));
    for i in 0..b {
        let lp = log_softmax_row(s.row(i).mapv(|x| x / tau).view());
        loss -= lp[i];
        for j in 0..b {
            let target = if i == j { 1.0 } else { 0.0 };
            grad[[i, j]] = (lp[j].exp() - target) / (tau * b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}

/// Symmetric contrastive loss over a matched score matrix: the average of
/// the row-wise and column-wise cross-entropies at the diagonal.
pub fn nce_loss(s: &Mat, tau: f64) -> Result<f64> {
    Ok(nce_loss_with_grad(s, tau)?.0)
}

pub fn nce_loss_with_grad(s: &Mat, tau: f64) -> Result<(f64, Mat)> {
    let (a, ga) = nce_direction(s, tau)?;
    let st = s.t().to_owned();
    let (b, gb) = nce_direction(&st, tau)?;
    Ok((0.5 * (a + b), 0.5 * (ga + gb.t())))
}

/// Bidirectional retrieval loss. `s_qp[a][b]` and `s_pq[a][b]` score
/// question `a` against page `b`; the question-to-page direction ranks pages
/// for each question by `s_qp`, the page-to-question direction ranks
/// questions for each page by `s_pq`.
pub fn retrieval_loss(s_qp: &Mat, s_pq: &Mat, tau: f64) -> Result<(f64, Mat, Mat)> {
    if s_qp.dim() != s_pq.dim() {
        return Err(Error::Shape("score matrices differ in shape".into()));
    }
    let (a, ga) = nce_direction(s_qp, tau)?;
    let (b, gb) = nce_direction(&s_pq.t().to_owned(), tau)?;
    Ok((0.5 * (a + b), 0.5 * ga, 0.5 * gb.t().to_owned()))
}

/// Mean-pooled, unit-normalized sequence vector.
pub fn encode_global(h: &Mat) -> Result<Array1<f64>> {
    if h.nrows() == 0 {
        return Err(Error::Shape("cannot pool an empty sequence".into()));
    }
    let mean = h.mean_axis(Axis(0)).expect("non-empty");
    let n = mean.dot(&mean).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numerical("cannot normalize a zero-norm embedding".into()));
    }
    Ok(mean / n)
}

pub fn global_score(a: &Mat, b: &Mat) -> Result<f64> {
    Ok(encode_global(a)?.dot(&encode_global(b)?))
}

/// Question-side encoder pass on a tape.
pub fn question_states_on(model: &Model, t: &mut Tape, q: &QuestionFeatures, rng: DropoutRng) -> Result<Var> {
    let emb = model.tables().question(t, q)?;
    model.encode(t, emb, &vec![true; q.len()], rng)
}

/// Page-side encoder pass on a tape.
pub fn page_states_on(model: &Model, t: &mut Tape, p: &PageFeatures, rng: DropoutRng) -> Result<Var> {
    let emb = model.tables().page(t, p)?;
    model.encode(t, emb, &vec![true; p.len()], rng)
}

pub fn question_states(model: &Model, q: &QuestionFeatures) -> Result<HiddenStates> {
    let mut t = model.tape();
    let h = question_states_on(model, &mut t, q, None)?;
    Ok(t.value(h).clone())
}

pub fn page_states(model: &Model, p: &PageFeatures) -> Result<HiddenStates> {
    let mut t = model.tape();
    let h = page_states_on(model, &mut t, p, None)?;
    Ok(t.value(h).clone())
}

/// One ranked page.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub manual_id: String,
    pub page_index: usize,
    pub score: f64,
}

/// Pages in descending score order; equal scores are ordered by
/// `(manual_id, page_index)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    /// 1-based rank of a page, if present.
    pub fn rank_of(&self, manual_id: &str, page_index: usize) -> Option<usize> {
        self.hits
            .iter()
            .position(|h| h.manual_id == manual_id && h.page_index == page_index)
            .map(|p| p + 1)
    }
}

/// Sorts by descending score with the deterministic tie-break and keeps
/// the first `top_k`.
pub fn rank_hits(mut hits: Vec<Hit>, top_k: usize) -> RetrievalResult {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.manual_id.cmp(&b.manual_id))
            .then_with(|| a.page_index.cmp(&b.page_index))
    });
    hits.truncate(top_k);
    RetrievalResult { hits }
}

/// Which pages a query may retrieve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope<'a> {
    Manual(&'a str),
    All,
}

/// Ranks indexed pages against encoded question states.
pub fn retrieve(index: &PageIndex, h_q: &HiddenStates, scope: Scope<'_>, config: &RetrievalConfig) -> Result<RetrievalResult> {
    config.validate()?;
    let candidates: Vec<&IndexEntry> = match scope {
        Scope::All => index.entries().iter().collect(),
        Scope::Manual(id) => {
            let c: Vec<&IndexEntry> = index.entries().iter().filter(|e| e.page.manual_id == id).collect();
            if c.is_empty() {
                return Err(Error::NotFound {
                    kind: "manual",
                    name: id.to_string(),
                });
            }
            c
        }
    };
    let hits = match config.mode {
        ScoringMode::TokenInteraction => {
            let q = normalize_rows(h_q)?;
            crate::par::try_map(&candidates, |e| -> Result<Hit> {
                Ok(Hit {
                    manual_id: e.page.manual_id.clone(),
                    page_index: e.page.page_index,
                    score: maxsim_normalized(&q, &e.rows)?.s_qp,
                })
            })?
        }
        ScoringMode::Global => {
            let g = encode_global(h_q)?;
            candidates
                .iter()
                .map(|e| Hit {
                    manual_id: e.page.manual_id.clone(),
                    page_index: e.page.page_index,
                    score: g.dot(&e.global),
                })
                .collect()
        }
    };
    Ok(rank_hits(hits, config.top_k))
}

/// Brute-force reference used to cross-check [`score_pair`].
#[doc(hidden)]
pub fn score_pair_naive(h_q: &Array2<f64>, h_p: &Array2<f64>) -> (f64, f64) {
    let norm = |r: ndarray::ArrayView1<f64>| r.dot(&r).sqrt();
    let (n, m) = (h_q.nrows(), h_p.nrows());
    let mut s = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut dot = 0.0;
            for k in 0..h_q.ncols() {
                dot += h_q[[i, k]] * h_p[[j, k]];
            }
            s[i][j] = dot / (norm(h_q.row(i)) * norm(h_p.row(j)));
        }
    }
    let qp = s.iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n as f64;
    let pq = (0..m)
        .map(|j| (0..n).map(|i| s[i][j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / m as f64;
    (qp, pq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let p = arr2(&[[1.0, 0.0], [0.0, 1.0], [h, h]]);
        let m = score_pair(&q, &p).unwrap();
        assert!((m.s_qp - 1.0).abs() < 1e-12);
        assert!((m.s_pq - (2.0 + h) / 3.0).abs() < 1e-12);
        assert!((m.s_pq - 0.9024).abs() < 1e-4);
    }

    #[test]
    fn self_similarity_and_scale_invariance() {
        let a = arr2(&[[1.0, 2.0, 0.5], [-1.0, 0.3, 2.0]]);
        let m = score_pair(&a, &a).unwrap();
        assert!((m.s_qp - 1.0).abs() < 1e-12 && (m.s_pq - 1.0).abs() < 1e-12);
        let b = arr2(&[[0.2, -1.0, 0.4], [1.0, 1.0, 1.0], [3.0, 0.0, 0.1]]);
        let m1 = score_pair(&a, &b).unwrap();
        let m5 = score_pair(&a, &(&b * 5.0)).unwrap();
        assert!((m1.s_qp - m5.s_qp).abs() < 1e-12);
        assert!((m1.s_pq - m5.s_pq).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_an_error() {
        let a = arr2(&[[0.0, 0.0]]);
        assert!(score_pair(&a, &arr2(&[[1.0, 0.0]])).is_err());
    }

    #[test]
    fn nce_analytic_values() {
        for b in [2usize, 4, 8] {
            let s = Mat::from_elem((b, b), 0.3);
            assert!((nce_loss(&s, 0.01).unwrap() - (b as f64).ln()).abs() < 1e-9);
        }
        assert_eq!(nce_loss(&Mat::from_elem((1, 1), 0.7), 0.01).unwrap(), 0.0);
        let s = arr2(&[[10.0, 0.0], [0.0, 10.0]]);
        let expected = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((nce_loss(&s, 1.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 4.54e-5).abs() < 1e-6);
        assert!(nce_loss(&Mat::zeros((2, 3)), 1.0).is_err());
    }

    #[test]
    fn nce_gradient_matches_differences() {
        let s = arr2(&[[0.3, 0.1, -0.2], [0.0, 0.5, 0.4], [0.2, -0.1, 0.6]]);
        let (_, g) = nce_loss_with_grad(&s, 0.5).unwrap();
        let (_, g_qp, g_pq) = retrieval_loss(&s, &s, 0.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut up = s.clone();
                up[[i, j]] += 1e-6;
                let mut down = s.clone();
                down[[i, j]] -= 1e-6;
                let num = (nce_loss(&up, 0.5).unwrap() - nce_loss(&down, 0.5).unwrap()) / 2e-6;
                assert!((num - g[[i, j]]).abs() < 1e-6);
                assert!((g_qp[[i, j]] + g_pq[[i, j]] - g[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxsim_backward_matches_differences() {
        let q = normalize_rows(&arr2(&[[0.3, 0.9, -0.2], [1.0, 0.1, 0.4]])).unwrap();
        let p = normalize_rows(&arr2(&[[0.5, -0.3, 0.8], [0.2, 0.9, 0.1], [-0.7, 0.2, 0.3]])).unwrap();
        let m = maxsim_normalized(&q, &p).unwrap();
        let (dq, dp) = m.backward(&q, &p, 0.7, -1.3);
        let f = |q: &Mat, p: &Mat| {
            let m = maxsim_normalized(q, p).unwrap();
            0.7 * m.s_qp - 1.3 * m.s_pq
        };
        for (target, grad, is_q) in [(&q, &dq, true), (&p, &dp, false)] {
            for idx in ndarray::indices(target.dim()) {
                let mut up = target.clone();
                up[idx] += 1e-7;
                let mut down = target.clone();
                down[idx] -= 1e-7;
                let num = if is_q { (f(&up, &p) - f(&down, &p)) / 2e-7 } else { (f(&q, &up) - f(&q, &down)) / 2e-7 };
                assert!((num - grad[idx]).abs() < 1e-6, "{idx:?}");
            }
        }
    }

    #[test]
    fn global_pooling() {
        let a = arr2(&[[3.0, 4.0]]);
        let g = encode_global(&a).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let b = arr2(&[[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]]);
        let c = arr2(&[[2.0, 0.0], [1.0, 2.0], [0.5, -1.0]]);
        assert_eq!(encode_global(&b).unwrap(), encode_global(&c).unwrap());
        assert!((global_score(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_manual_then_page() {
        let hits = vec![
            Hit { manual_id: "b".into(), page_index: 0, score: 0.5 },
            Hit { manual_id: "a".into(), page_index: 2, score: 0.5 },
            Hit { manual_id: "a".into(), page_index: 1, score: 0.5 },
            Hit { manual_id: "c".into(), page_index: 0, score: 0.9 },
        ];
        let r = rank_hits(hits, 10);
        let order: Vec<(&str, usize)> = r.hits.iter().map(|h| (h.manual_id.as_str(), h.page_index)).collect();
        assert_eq!(order, vec![("c", 0), ("a", 1), ("a", 2), ("b", 0)]);
        assert_eq!(r.rank_of("a", 2), Some(3));
    }

    fn matrix(rows: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Mat> {
        rows.prop_flat_map(move |n| {
            proptest::collection::vec(-1.0f64..1.0, n * d)
                .prop_filter("no zero rows", move |v| v.chunks(d).all(|r| r.iter().any(|x| x.abs() > 1e-3)))
                .prop_map(move |v| Mat::from_shape_vec((n, d), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_symmetric(
            (q, p) in (1usize..33).prop_flat_map(|d| (matrix(1..21, d), matrix(1..51, d)))
        ) {
            let m = score_pair(&q, &p).unwrap();
            let (qp, pq) = score_pair_naive(&q, &p);
            prop_assert!((m.s_qp - qp).abs() < 1e-6);
            prop_assert!((m.s_pq - pq).abs() < 1e-6);
            prop_assert!(m.s_qp.abs() <= 1.0 + 1e-12 && m.s_pq.abs() <= 1.0 + 1e-12);
            let r = score_pair(&p, &q).unwrap();
            prop_assert!((r.s_pq - m.s_qp).abs() < 1e-12);
            prop_assert!((r.s_qp - m.s_pq).abs() < 1e-12);
        }

        #[test]
        fn nce_is_non_negative(v in proptest::collection::vec(-1.0f64..1.0, 16), tau in 0.01f64..2.0) {
            let s = Mat::from_shape_vec((4, 4), v).unwrap();
            prop_assert!(nce_loss(&s, tau).unwrap() >= 0.0);
        }
    }
}

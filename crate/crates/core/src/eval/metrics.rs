//! Text-generation, region-selection and retrieval metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on whitespace, emitting every non-alphanumeric
/// character as its own token.
pub fn normalize_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn check_parallel(hyps: &[String], refs: &[String]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::InvalidArgument("no hypotheses to score".into()));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with brevity penalty and no smoothing: zero when
/// any n-gram order has no clipped match.
pub fn bleu4(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_parallel(hyps, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h = normalize_tokens(h);
        let r = normalize_tokens(r);
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

pub const ROUGE_BETA: f64 = 1.2;

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L F-measure.
pub fn rouge_l_sentence(hyp: &str, reference: &str) -> f64 {
    let h = normalize_tokens(hyp);
    let r = normalize_tokens(reference);
    let l = lcs_len(&h, &r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / h.len() as f64;
    let rec = l as f64 / r.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

/// ROUGE-L F-measure averaged over pairs.
pub fn rouge_l(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_parallel(hyps, refs)?;
    Ok(hyps.iter().zip(refs).map(|(h, r)| rouge_l_sentence(h, r)).sum::<f64>() / hyps.len() as f64)
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

/// METEOR restricted to exact and stem matching. Words are aligned greedily
/// left to right, exact matches first.
pub fn meteor_lite_sentence(hyp: &str, reference: &str) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    let h = normalize_tokens(hyp);
    let r = normalize_tokens(reference);
    let mut ref_used = vec![false; r.len()];
    let mut align: Vec<Option<usize>> = vec![None; h.len()];
    for i in 0..h.len() {
        if let Some(j) = (0..r.len()).find(|&j| !ref_used[j] && r[j] == h[i]) {
            ref_used[j] = true;
            align[i] = Some(j);
        }
    }
    let h_stem: Vec<String> = h.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    let r_stem: Vec<String> = r.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    for i in 0..h.len() {
        if align[i].is_some() {
            continue;
        }
        if let Some(j) = (0..r.len()).find(|&j| !ref_used[j] && r_stem[j] == h_stem[i]) {
            ref_used[j] = true;
            align[i] = Some(j);
        }
    }
    let pairs: Vec<(usize, usize)> = align.iter().enumerate().filter_map(|(i, a)| a.map(|j| (i, j))).collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / h.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let fmean = p * rec / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * rec);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

pub fn meteor_lite(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_parallel(hyps, refs)?;
    Ok(hyps.iter().zip(refs).map(|(h, r)| meteor_lite_sentence(h, r)).sum::<f64>() / hyps.len() as f64)
}

type NgramVec = BTreeMap<Vec<String>, f64>;

/// Plain CIDEr: mean over n = 1..4 of the tf-idf cosine between hypothesis
/// and reference, document frequencies taken over the references. Scores
/// lie in `[0, 1]`.
pub fn cider(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_parallel(hyps, refs)?;
    let h_tok: Vec<Vec<String>> = hyps.iter().map(|s| normalize_tokens(s)).collect();
    let r_tok: Vec<Vec<String>> = refs.iter().map(|s| normalize_tokens(s)).collect();
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for r in &r_tok {
        let mut seen = BTreeSet::new();
        for n in 1..=4 {
            for g in ngram_counts(r, n).into_keys() {
                seen.insert(g.to_vec());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_docs = (refs.len() as f64).ln();
    let vectorize = |tokens: &[String], n: usize| -> NgramVec {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| {
                let d = df.get(g).copied().unwrap_or(0.0).max(1.0);
                (g.to_vec(), c as f64 / total as f64 * (log_docs - d.ln()))
            })
            .collect()
    };
    let cosine = |a: &NgramVec, b: &NgramVec| {
        let dot: f64 = a.iter().map(|(g, v)| v * b.get(g).copied().unwrap_or(0.0)).sum();
        let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let mut total = 0.0;
    for (h, r) in h_tok.iter().zip(&r_tok) {
        let mut s = 0.0;
        for n in 1..=4 {
            s += cosine(&vectorize(h, n), &vectorize(r, n));
        }
        total += s / 4.0;
    }
    Ok(total / hyps.len() as f64)
}

/// Region-selection precision, recall and F1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One question's scores. An empty prediction has precision 1 only when
/// the gold set is empty too; an empty gold set has recall 1.
pub fn prf_single(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> Prf {
    let inter = pred.intersection(gold).count() as f64;
    let precision = if pred.is_empty() {
        if gold.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        inter / pred.len() as f64
    };
    let recall = if gold.is_empty() { 1.0 } else { inter / gold.len() as f64 };
    Prf {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

/// Per-question scores averaged over questions.
pub fn region_prf(preds: &[BTreeSet<String>], golds: &[BTreeSet<String>]) -> Result<Prf> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::InvalidArgument("region_prf needs equal, non-empty lists".into()));
    }
    let n = preds.len() as f64;
    let mut acc = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for (p, g) in preds.iter().zip(golds) {
        let s = prf_single(p, g);
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    Ok(Prf {
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    })
}

/// Scores pooled over all region decisions.
pub fn region_prf_micro(preds: &[BTreeSet<String>], golds: &[BTreeSet<String>]) -> Result<Prf> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::InvalidArgument("region_prf needs equal, non-empty lists".into()));
    }
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        inter += p.intersection(g).count();
        np += p.len();
        ng += g.len();
    }
    let precision = if np == 0 {
        if ng == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        inter as f64 / np as f64
    };
    let recall = if ng == 0 { 1.0 } else { inter as f64 / ng as f64 };
    Ok(Prf {
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

/// One question's retrieval outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuestion {
    pub manual_id: String,
    /// 1-based rank of each gold page (`None` when not retrieved).
    pub gold_ranks: Vec<Option<usize>>,
}

impl RankedQuestion {
    /// Fraction of gold pages ranked within the top `k`.
    pub fn recall_at(&self, k: usize) -> f64 {
        if self.gold_ranks.is_empty() {
            return 0.0;
        }
        let hit = self.gold_ranks.iter().filter(|r| matches!(r, Some(x) if *x <= k)).count();
        hit as f64 / self.gold_ranks.len() as f64
    }
}

/// Mean recall per manual, then averaged across manuals weighted by page
/// count. Manuals without questions do not contribute.
pub fn weighted_recall_at_k(
    questions: &[RankedQuestion],
    pages_per_manual: &BTreeMap<String, usize>,
    ks: &[usize],
) -> Result<Vec<f64>> {
    let mut by_manual: BTreeMap<&str, Vec<&RankedQuestion>> = BTreeMap::new();
    for q in questions {
        by_manual.entry(q.manual_id.as_str()).or_default().push(q);
    }
    if by_manual.is_empty() {
        return Err(Error::InvalidArgument("no questions to score".into()));
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut num, mut den) = (0.0, 0.0);
        for (m, qs) in &by_manual {
            let w = *pages_per_manual.get(*m).ok_or_else(|| Error::NotFound {
                kind: "manual",
                name: m.to_string(),
            })? as f64;
            let r = qs.iter().map(|q| q.recall_at(k)).sum::<f64>() / qs.len() as f64;
            num += w * r;
            den += w;
        }
        out.push(if den == 0.0 { 0.0 } else { num / den });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tokenization() {
        assert_eq!(normalize_tokens("Press the POWER-button, twice!"), s(&["press", "the", "power", "-", "button", ",", "twice", "!"]));
        assert!(normalize_tokens("   ").is_empty());
    }

    #[test]
    fn identical_and_disjoint() {
        let h = s(&["press the power button firmly", "open the lid slowly now"]);
        assert!((bleu4(&h, &h).unwrap() - 1.0).abs() < 1e-12);
        assert!((rouge_l(&h, &h).unwrap() - 1.0).abs() < 1e-12);
        let d = s(&["alpha beta gamma delta", "epsilon zeta eta theta"]);
        assert_eq!(bleu4(&d, &h).unwrap(), 0.0);
        assert_eq!(rouge_l(&d, &h).unwrap(), 0.0);
        assert_eq!(meteor_lite(&d, &h).unwrap(), 0.0);
        assert_eq!(cider(&d, &h).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_example() {
        let h = s(&["the cat sat on a mat"]);
        let r = s(&["the cat sat on a mat today"]);
        let expected = (1.0f64 - 7.0 / 6.0).exp();
        assert!((bleu4(&h, &r).unwrap() - expected).abs() < 1e-12);
        // Three words cannot contain a 4-gram, so the unsmoothed score is 0.
        assert_eq!(bleu4(&s(&["the cat sat"]), &s(&["the cat sat down"])).unwrap(), 0.0);
    }

    #[test]
    fn rouge_uses_weighted_f() {
        let v = rouge_l_sentence("the cat", "the cat sat down");
        let (p, r) = (1.0, 0.5);
        let b2 = 1.44;
        assert!((v - (1.0 + b2) * p * r / (r + b2 * p)).abs() < 1e-12);
    }

    #[test]
    fn meteor_stem_stage_and_fragmentation() {
        assert!((meteor_lite_sentence("press the button", "press the button") - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        let stemmed = meteor_lite_sentence("pressing buttons", "press button");
        assert!(stemmed > 0.0);
        let m: f64 = 2.0;
        let fmean = 1.0;
        assert!((stemmed - fmean * (1.0 - 0.5 * (1.0 / m).powi(3))).abs() < 1e-12);
        assert!(meteor_lite_sentence("b a", "a b") < meteor_lite_sentence("a b", "a b"));
    }

    #[test]
    fn cider_is_bounded_and_maximal_on_identity() {
        let r = s(&["press the power button", "open the battery lid", "turn the dial left"]);
        let same = cider(&r, &r).unwrap();
        assert!(same > 0.0 && same <= 1.0 + 1e-12);
        let other = s(&["press the button", "open the lid", "turn left"]);
        assert!(cider(&other, &r).unwrap() < same);
    }

    #[test]
    fn region_worked_examples() {
        let p = region_prf(&[set(&["r1", "r2"])], &[set(&["r2", "r3"])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        let p = region_prf(&[set(&["a"])], &[set(&["a"])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = region_prf(&[set(&[])], &[set(&[])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = region_prf(&[set(&[])], &[set(&["a"])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let micro = region_prf_micro(&[set(&["a", "b"]), set(&["c"])], &[set(&["a"]), set(&["d"])]).unwrap();
        assert!((micro.precision - 1.0 / 3.0).abs() < 1e-12 && (micro.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_recall_example() {
        let mut questions = Vec::new();
        questions.push(RankedQuestion { manual_id: "A".into(), gold_ranks: vec![Some(1)] });
        questions.push(RankedQuestion { manual_id: "B".into(), gold_ranks: vec![Some(1)] });
        questions.push(RankedQuestion { manual_id: "B".into(), gold_ranks: vec![Some(4)] });
        let pages = BTreeMap::from([("A".to_string(), 10), ("B".to_string(), 30), ("C".to_string(), 100)]);
        let r = weighted_recall_at_k(&questions, &pages, &[1, 3, 5]).unwrap();
        assert_eq!(r[0], 0.625);
        assert_eq!(r[2], 1.0);
        assert!(r[0] <= r[1] && r[1] <= r[2]);
    }

    #[test]
    fn multi_gold_recall_is_fractional() {
        let q = RankedQuestion { manual_id: "A".into(), gold_ranks: vec![Some(1), Some(4)] };
        assert_eq!(q.recall_at(1), 0.5);
        assert_eq!(q.recall_at(5), 1.0);
    }
}

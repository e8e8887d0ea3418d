//! Input embedding tables and their sum into encoder inputs.

use ndarray::Array2;

use super::features::{PageFeatures, QuestionFeatures, COORD_GRID};
use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Number of buckets in each 2D-position table.
pub const COORD_BUCKETS: usize = COORD_GRID as usize + 1;
pub const N_SEGMENTS: usize = 2;

/// Handles to the embedding parameters inside a [`ParamStore`].
///
/// `x` embeds both x0 and x1, `y` both y0 and y1; `w` and `h` embed box
/// width and height.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub token: ParamId,
    pub segment: ParamId,
    pub x: ParamId,
    pub y: ParamId,
    pub w: ParamId,
    pub h: ParamId,
    pub roi_w: ParamId,
    pub roi_b: ParamId,
}

impl EmbeddingTables {
    /// Registers the tables under `emb.*`, drawing entries from `init`.
    pub fn register(
        store: &mut ParamStore,
        vocab_size: usize,
        hidden: usize,
        roi_dim: usize,
        mut init: impl FnMut(usize, usize) -> Mat,
    ) -> Self {
        EmbeddingTables {
            token: store.add("emb.token", init(vocab_size, hidden)),
            segment: store.add("emb.segment", init(N_SEGMENTS, hidden)),
            x: store.add("emb.x", init(COORD_BUCKETS, hidden)),
            y: store.add("emb.y", init(COORD_BUCKETS, hidden)),
            w: store.add("emb.w", init(COORD_BUCKETS, hidden)),
            h: store.add("emb.h", init(COORD_BUCKETS, hidden)),
            roi_w: store.add("emb.roi.w", init(roi_dim, hidden)),
            roi_b: store.add("emb.roi.b", Mat::zeros((1, hidden))),
        }
    }

    /// Looks the tables up by name in an existing store.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |name: &str| {
            store.id(name).ok_or_else(|| Error::NotFound {
                kind: "parameter",
                name: name.to_string(),
            })
        };
        Ok(EmbeddingTables {
            token: get("emb.token")?,
            segment: get("emb.segment")?,
            x: get("emb.x")?,
            y: get("emb.y")?,
            w: get("emb.w")?,
            h: get("emb.h")?,
            roi_w: get("emb.roi.w")?,
            roi_b: get("emb.roi.b")?,
        })
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.value(self.token).ncols()
    }

    pub fn vocab_size(&self, store: &ParamStore) -> usize {
        store.value(self.token).nrows()
    }

    pub fn roi_dim(&self, store: &ParamStore) -> usize {
        store.value(self.roi_w).nrows()
    }

    fn check_tokens(&self, store: &ParamStore, ids: &[u32], segments: &[usize]) -> Result<()> {
        let v = self.vocab_size(store);
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Shape(format!("token id {bad} outside table of {v}")));
        }
        if ids.len() != segments.len() {
            return Err(Error::Shape(format!("{} tokens but {} segment ids", ids.len(), segments.len())));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= N_SEGMENTS) {
            return Err(Error::Shape(format!("segment id {bad} outside table of {N_SEGMENTS}")));
        }
        Ok(())
    }

    /// Token plus segment embedding.
    pub fn question(&self, t: &mut Tape, q: &QuestionFeatures) -> Result<Var> {
        self.check_tokens(t.store(), &q.token_ids, &q.segment_ids)?;
        let ids: Vec<usize> = q.token_ids.iter().map(|&i| i as usize).collect();
        let tok = t.gather(self.token, &ids);
        let seg = t.gather(self.segment, &q.segment_ids);
        Ok(t.add(tok, seg))
    }

    /// Token, segment, 2D-position and projected ROI embeddings, summed.
    pub fn page(&self, t: &mut Tape, p: &PageFeatures) -> Result<Var> {
        self.check_tokens(t.store(), &p.token_ids, &p.segment_ids)?;
        let n = p.token_ids.len();
        if p.token_boxes.len() != n || p.roi_vectors.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} tokens, {} boxes, {} roi rows",
                p.token_boxes.len(),
                p.roi_vectors.nrows()
            )));
        }
        let roi_dim = self.roi_dim(t.store());
        if p.roi_vectors.ncols() != roi_dim {
            return Err(Error::Shape(format!(
                "roi vectors have {} columns, projection expects {roi_dim}",
                p.roi_vectors.ncols()
            )));
        }
        let ids: Vec<usize> = p.token_ids.iter().map(|&i| i as usize).collect();
        let col = |k: usize| -> Vec<usize> { p.token_boxes.iter().map(|b| b[k] as usize).collect() };
        let width: Vec<usize> = p.token_boxes.iter().map(|b| b[2].saturating_sub(b[0]) as usize).collect();
        let height: Vec<usize> = p.token_boxes.iter().map(|b| b[3].saturating_sub(b[1]) as usize).collect();

        let tok = t.gather(self.token, &ids);
        let seg = t.gather(self.segment, &p.segment_ids);
        let x0 = t.gather(self.x, &col(0));
        let y0 = t.gather(self.y, &col(1));
        let x1 = t.gather(self.x, &col(2));
        let y1 = t.gather(self.y, &col(3));
        let w = t.gather(self.w, &width);
        let h = t.gather(self.h, &height);
        let roi_in = t.constant(p.roi_vectors.clone());
        let roi_w = t.param(self.roi_w);
        let roi_b = t.param(self.roi_b);
        let roi = t.matmul(roi_in, roi_w);
        let roi = t.add_row(roi, roi_b);

        let mut acc = t.add(tok, seg);
        for part in [x0, y0, x1, y1, w, h, roi] {
            acc = t.add(acc, part);
        }
        Ok(acc)
    }
}

/// What [`assemble_embeddings`] embeds.
#[derive(Clone, Copy, Debug)]
pub enum EmbeddingInput<'a> {
    Question(&'a QuestionFeatures),
    Page(&'a PageFeatures),
}

/// Embedding matrix for a question or page, one row per token.
pub fn assemble_embeddings(input: EmbeddingInput<'_>, tables: &EmbeddingTables, store: &ParamStore) -> Result<Array2<f64>> {
    let mut t = Tape::new(store);
    let v = match input {
        EmbeddingInput::Question(q) => tables.question(&mut t, q)?,
        EmbeddingInput::Page(p) => tables.page(&mut t, p)?,
    };
    Ok(t.value(v).clone())
}

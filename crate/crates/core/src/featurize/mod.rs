//! Token sequences and input embeddings for questions and pages.

mod embed;
mod features;
mod roi;
mod vocab;

pub use embed::{assemble_embeddings, EmbeddingInput, EmbeddingTables, COORD_BUCKETS, N_SEGMENTS};
pub use features::{
    encode_page, encode_question, encode_question_with_max, normalize_box, Featurizer, GridBox, PageFeatures,
    PageImages, PageStore, QuestionFeatures, COORD_GRID, SEGMENT_PAGE, SEGMENT_QUESTION,
};
pub use roi::{CropProjection, RoiExtractor};
pub use vocab::{build_vocab, build_vocab_from_texts, corpus_texts, Specials, TokenId, Vocabulary};

//! Loading and cross-checking the files a trained system is made of.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ura_core::corpus::{load_corpus, Corpus};
use ura_core::featurize::{Featurizer, PageImages, PageStore, Vocabulary};
use ura_core::model::Checkpoint;
use ura_core::retrieval::{build_index, PageIndex};
use ura_core::{Error, Result};

/// File name of the vocabulary written next to a checkpoint.
pub const VOCAB_FILE: &str = "vocab.json";

/// `vocab.json` in the checkpoint's directory.
pub fn default_vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE)
}

/// Reads page rasters from the corpus directory when they were written
/// there, and renders them from the layout otherwise.
pub fn featurizer_for(corpus: &Corpus, corpus_dir: &Path, vocab: Arc<Vocabulary>) -> Featurizer {
    let on_disk = corpus
        .manuals
        .iter()
        .flat_map(|m| m.pages.first())
        .next()
        .is_some_and(|p| corpus_dir.join(&p.image_path).is_file());
    let images = if on_disk {
        PageImages::Directory(corpus_dir.to_path_buf())
    } else {
        PageImages::Rendered
    };
    Featurizer::new(vocab, images)
}

/// A checkpoint with its vocabulary, verified against each other.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub checkpoint_hash: String,
    pub vocab: Arc<Vocabulary>,
}

pub fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<LoadedModel> {
    let vocab_path = vocab.map_or_else(|| default_vocab_path(checkpoint), Path::to_path_buf);
    let vocab = Arc::new(Vocabulary::load(&vocab_path)?);
    let checkpoint = Checkpoint::load(checkpoint, Some(&vocab.hash()))?;
    let checkpoint_hash = checkpoint.hash()?;
    Ok(LoadedModel {
        checkpoint,
        checkpoint_hash,
        vocab,
    })
}

/// Everything the service and the inference commands read.
pub struct Artifacts {
    pub corpus: Corpus,
    pub featurizer: Featurizer,
    pub model: LoadedModel,
    pub index: PageIndex,
    pub pages: PageStore,
    pub corpus_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct ArtifactPaths {
    pub checkpoint: PathBuf,
    pub vocab: Option<PathBuf>,
    /// Built in memory from the checkpoint when absent.
    pub index: Option<PathBuf>,
    pub corpus: PathBuf,
}

impl Artifacts {
    /// Loads and cross-checks all artifacts. An index built from a
    /// different checkpoint is rejected.
    pub fn load(paths: &ArtifactPaths) -> Result<Self> {
        let model = load_model(&paths.checkpoint, paths.vocab.as_deref())?;
        let corpus = load_corpus(&paths.corpus)?;
        let featurizer = featurizer_for(&corpus, &paths.corpus, model.vocab.clone());
        let manuals: Vec<_> = corpus.manuals.iter().collect();
        let index = match &paths.index {
            Some(p) => {
                let index = PageIndex::load(p)?;
                index.ensure_checkpoint(&model.checkpoint_hash)?;
                index
            }
            None => build_index(&model.checkpoint.model, &featurizer, &manuals, &model.checkpoint_hash)?,
        };
        for m in &corpus.manuals {
            for p in &m.pages {
                if index.get(&m.id, p.index).is_none() {
                    return Err(Error::NotFound {
                        kind: "indexed page",
                        name: format!("{}#{}", m.id, p.index),
                    });
                }
            }
        }
        let pages = featurizer.page_store(&manuals)?;
        Ok(Artifacts {
            corpus,
            featurizer,
            model,
            index,
            pages,
            corpus_dir: paths.corpus.clone(),
        })
    }
}

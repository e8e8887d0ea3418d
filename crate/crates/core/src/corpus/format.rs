//! On-disk corpus layout.
//!
//! ```text
//! <root>/manifest.json        {corpus_name, manual_ids, split_assignment}
//! <root>/manuals/<id>.json    one manual, schema below
//! <root>/<image_path>         PNG page rasters
//! ```
//!
//! Manual files carry exactly the fields
//! `{id, brand, category, pages:[{id, index, width, height, image_path,
//! regions:[{id, label, box:[x0,y0,x1,y1], words:[{text, box}]}]}],
//! qas:[{id, question, answer:{text, region_ids}}]}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{render, BBox, Corpus, Manual, MultimodalAnswer, Page, QaPair, Region, SemanticLabel, Split, Word};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    corpus_name: String,
    manual_ids: Vec<String>,
    split_assignment: BTreeMap<String, Split>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManualFile {
    id: String,
    brand: String,
    category: String,
    pages: Vec<PageFile>,
    qas: Vec<QaFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PageFile {
    id: String,
    index: usize,
    width: u32,
    height: u32,
    image_path: String,
    regions: Vec<RegionFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    id: String,
    label: SemanticLabel,
    #[serde(rename = "box")]
    bbox: BBox,
    words: Vec<WordFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordFile {
    text: String,
    #[serde(rename = "box")]
    bbox: BBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaFile {
    id: String,
    question: String,
    answer: AnswerFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerFile {
    text: String,
    region_ids: Vec<String>,
}

impl From<&Manual> for ManualFile {
    fn from(m: &Manual) -> Self {
        ManualFile {
            id: m.id.clone(),
            brand: m.brand.clone(),
            category: m.category.clone(),
            pages: m
                .pages
                .iter()
                .map(|p| PageFile {
                    id: p.id.clone(),
                    index: p.index,
                    width: p.width,
                    height: p.height,
                    image_path: p.image_path.clone(),
                    regions: p
                        .regions
                        .iter()
                        .map(|r| RegionFile {
                            id: r.id.clone(),
                            label: r.label,
                            bbox: r.bbox,
                            words: r
                                .words
                                .iter()
                                .map(|w| WordFile {
                                    text: w.text.clone(),
                                    bbox: w.bbox,
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
            qas: m
                .qas
                .iter()
                .map(|q| QaFile {
                    id: q.id.clone(),
                    question: q.question.clone(),
                    answer: AnswerFile {
                        text: q.answer.text.clone(),
                        region_ids: q.answer.region_ids.clone(),
                    },
                })
                .collect(),
        }
    }
}

impl From<ManualFile> for Manual {
    fn from(f: ManualFile) -> Self {
        let id = f.id;
        Manual {
            brand: f.brand,
            category: f.category,
            pages: f
                .pages
                .into_iter()
                .map(|p| Page {
                    id: p.id,
                    index: p.index,
                    width: p.width,
                    height: p.height,
                    image_path: p.image_path,
                    regions: p
                        .regions
                        .into_iter()
                        .map(|r| Region {
                            id: r.id,
                            label: r.label,
                            bbox: r.bbox,
                            words: r
                                .words
                                .into_iter()
                                .map(|w| Word {
                                    text: w.text,
                                    bbox: w.bbox,
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
            qas: f
                .qas
                .into_iter()
                .map(|q| QaPair {
                    id: q.id,
                    manual_id: id.clone(),
                    question: q.question,
                    answer: MultimodalAnswer {
                        text: q.answer.text,
                        region_ids: q.answer.region_ids,
                    },
                    relevant_pages: BTreeSet::new(),
                })
                .collect(),
            id,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn manual_file_name(id: &str) -> Result<String> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::validation(format!("manual {id:?}"), "id is not a valid file name"));
    }
    Ok(format!("{id}.json"))
}

/// Writes the manifest and one JSON file per manual. Output is byte-stable.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let root = path.as_ref();
    corpus.validate()?;
    let manuals_dir = root.join("manuals");
    fs::create_dir_all(&manuals_dir).map_err(|e| Error::io(&manuals_dir, e))?;
    let manifest = ManifestFile {
        corpus_name: corpus.name.clone(),
        manual_ids: corpus.manuals.iter().map(|m| m.id.clone()).collect(),
        split_assignment: corpus.split_assignment.clone(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    for m in &corpus.manuals {
        write_json(&manuals_dir.join(manual_file_name(&m.id)?), &ManualFile::from(m))?;
    }
    Ok(())
}

/// Reads and validates a corpus directory written by [`save_corpus`].
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let root = path.as_ref();
    let manifest_path = root.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::schema("manifest.json", e.to_string()))?;
    let mut manuals = Vec::with_capacity(manifest.manual_ids.len());
    for id in &manifest.manual_ids {
        let file = root.join("manuals").join(manual_file_name(id)?);
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let parsed: ManualFile = serde_json::from_str(&text)
            .map_err(|e| Error::schema(format!("manual {id}"), describe_json_error(&text, &e)))?;
        if &parsed.id != id {
            return Err(Error::schema(
                format!("manual {id}"),
                format!("file declares id {:?}", parsed.id),
            ));
        }
        manuals.push(Manual::from(parsed));
    }
    Corpus::new(manifest.corpus_name, manuals, manifest.split_assignment)
}

/// Locates a serde error inside the page/region structure when possible.
fn describe_json_error(text: &str, err: &serde_json::Error) -> String {
    let line = err.line();
    let prefix: String = text.lines().take(line).collect::<Vec<_>>().join("\n");
    let last = |key: &str| {
        prefix
            .rmatch_indices(&format!("\"{key}\": \""))
            .next()
            .and_then(|(i, m)| {
                let rest = &prefix[i + m.len()..];
                rest.split('"').next().map(str::to_string)
            })
    };
    let mut ctx = Vec::new();
    if let Some(id) = last("id") {
        ctx.push(format!("near id {id:?}"));
    }
    if ctx.is_empty() {
        err.to_string()
    } else {
        format!("{err} ({})", ctx.join(", "))
    }
}

/// Renders every page and writes it to `root/<image_path>` as PNG.
pub fn write_page_images(corpus: &Corpus, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let pages: Vec<&Page> = corpus.manuals.iter().flat_map(|m| m.pages.iter()).collect();
    crate::par::try_map(&pages, |page| {
        let path = root.join(&page.image_path);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        render::render_page(page).save(&path)?;
        Ok::<_, Error>(())
    })?;
    Ok(())
}

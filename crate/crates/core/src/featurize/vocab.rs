//! Subword vocabulary.
//!
//! The inventory is learned with byte-pair merges over whitespace-split words
//! and applied with greedy longest-match. Word-initial pieces are plain,
//! continuation pieces carry a `##` prefix. Characters outside the inventory
//! fall back to byte pieces (`<0xNN>` word-initial, `##<0xNN>` continuation)
//! so every string encodes losslessly up to whitespace normalization.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, SemanticLabel};
use crate::error::{Error, Result};

pub type TokenId = u32;

const CONT: &str = "##";

/// Ids of the reserved tokens. They occupy the first slots of the id space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub pad: TokenId,
    /// `</s>`: terminates questions and generated answers.
    pub eos: TokenId,
    /// `<s>`: decoder start.
    pub bos: TokenId,
    labels: [TokenId; 6],
}

impl Specials {
    pub fn label(&self, label: SemanticLabel) -> TokenId {
        self.labels[label.index()]
    }

    pub fn is_label(&self, id: TokenId) -> bool {
        self.labels.contains(&id)
    }
}

const SPECIAL_NAMES: [(&str, &str); 9] = [
    ("pad", "<pad>"),
    ("eos", "</s>"),
    ("bos", "<s>"),
    ("label_text", "<Text>"),
    ("label_title", "<Title>"),
    ("label_product_image", "<ProductImage>"),
    ("label_illustration", "<Illustration>"),
    ("label_table", "<Table>"),
    ("label_graphic", "<Graphic>"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Special,
    Byte { value: u8, initial: bool },
    Piece,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    pieces: Vec<String>,
    specials: BTreeMap<String, TokenId>,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<Kind>,
    pieces: HashMap<String, TokenId>,
    bytes_initial: [TokenId; 256],
    bytes_cont: [TokenId; 256],
    specials: Specials,
    max_piece_chars: usize,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

fn byte_token(b: u8, initial: bool) -> String {
    if initial {
        format!("<0x{b:02X}>")
    } else {
        format!("{CONT}<0x{b:02X}>")
    }
}

fn strip_cont(s: &str) -> &str {
    s.strip_prefix(CONT).unwrap_or(s)
}

impl Vocabulary {
    /// Builds the id space: specials, 512 byte pieces, then `pieces` in order.
    fn from_pieces(learned: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|(_, t)| t.to_string()).collect();
        let mut kinds = vec![Kind::Special; tokens.len()];
        let mut bytes_initial = [0; 256];
        let mut bytes_cont = [0; 256];
        for b in 0..=255u8 {
            bytes_initial[b as usize] = tokens.len() as TokenId;
            tokens.push(byte_token(b, true));
            kinds.push(Kind::Byte { value: b, initial: true });
        }
        for b in 0..=255u8 {
            bytes_cont[b as usize] = tokens.len() as TokenId;
            tokens.push(byte_token(b, false));
            kinds.push(Kind::Byte { value: b, initial: false });
        }
        let mut pieces = HashMap::new();
        let mut max_piece_chars = 1;
        for p in learned {
            if p.is_empty() || strip_cont(&p).is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid subword piece {p:?}")));
            }
            if tokens[..SPECIAL_NAMES.len() + 512].contains(&p) || pieces.contains_key(&p) {
                return Err(Error::InvalidArgument(format!("duplicate subword piece {p:?}")));
            }
            max_piece_chars = max_piece_chars.max(strip_cont(&p).chars().count());
            pieces.insert(p.clone(), tokens.len() as TokenId);
            tokens.push(p);
            kinds.push(Kind::Piece);
        }
        let specials = Specials {
            pad: 0,
            eos: 1,
            bos: 2,
            labels: [3, 4, 5, 6, 7, 8],
        };
        Ok(Vocabulary {
            tokens,
            kinds,
            pieces,
            bytes_initial,
            bytes_cont,
            specials,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> &Specials {
        &self.specials
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == token).map(|i| i as TokenId)
    }

    /// Learned (non-special, non-byte) pieces in id order.
    pub fn learned_pieces(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == Kind::Piece)
            .map(|(t, _)| t.as_str())
    }

    fn encode_word(&self, word: &str, out: &mut Vec<TokenId>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut i = 0;
        while i < chars.len() {
            let start = chars[i].0;
            let longest = (chars.len() - i).min(self.max_piece_chars);
            let mut matched = None;
            for n in (1..=longest).rev() {
                let end = chars.get(i + n).map_or(word.len(), |c| c.0);
                let body = &word[start..end];
                if i == 0 && body.starts_with(CONT) {
                    continue;
                }
                let key = if i == 0 {
                    body.to_string()
                } else {
                    format!("{CONT}{body}")
                };
                if let Some(id) = self.pieces.get(&key) {
                    matched = Some((*id, n));
                    break;
                }
            }
            match matched {
                Some((id, n)) => {
                    out.push(id);
                    i += n;
                }
                None => {
                    let mut buf = [0u8; 4];
                    for (k, b) in chars[i].1.encode_utf8(&mut buf).bytes().enumerate() {
                        let initial = i == 0 && k == 0;
                        out.push(if initial {
                            self.bytes_initial[b as usize]
                        } else {
                            self.bytes_cont[b as usize]
                        });
                    }
                    i += 1;
                }
            }
        }
    }

    /// Subword ids of `text`, no specials added.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.encode_word(word, &mut out);
        }
        out
    }

    /// Subword ids of one OCR word (which may itself contain spaces).
    pub fn encode_words<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<Vec<TokenId>> {
        words.into_iter().map(|w| self.encode(w)).collect()
    }

    /// Inverse of [`Vocabulary::encode`]; special tokens are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut words: Vec<Vec<u8>> = Vec::new();
        for &id in ids {
            let Some(kind) = self.kinds.get(id as usize) else {
                continue;
            };
            match *kind {
                Kind::Special => {}
                Kind::Byte { value, initial } => {
                    if initial || words.is_empty() {
                        words.push(Vec::new());
                    }
                    words.last_mut().unwrap().push(value);
                }
                Kind::Piece => {
                    let tok = &self.tokens[id as usize];
                    match tok.strip_prefix(CONT) {
                        Some(rest) if !words.is_empty() => {
                            words.last_mut().unwrap().extend_from_slice(rest.as_bytes())
                        }
                        Some(rest) => words.push(rest.as_bytes().to_vec()),
                        None => words.push(tok.as_bytes().to_vec()),
                    }
                }
            }
        }
        words
            .into_iter()
            .map(|w| String::from_utf8_lossy(&w).into_owned())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            pieces: self.tokens.clone(),
            specials: SPECIAL_NAMES
                .iter()
                .enumerate()
                .map(|(i, (name, _))| (name.to_string(), i as TokenId))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| Error::schema("vocabulary", e.to_string()))?;
        let n_fixed = SPECIAL_NAMES.len() + 512;
        for (i, (name, tok)) in SPECIAL_NAMES.iter().enumerate() {
            if file.specials.get(*name) != Some(&(i as TokenId)) || file.pieces.get(i).map(String::as_str) != Some(tok) {
                return Err(Error::schema("vocabulary", format!("special {name} missing or misplaced")));
            }
        }
        if file.pieces.len() < n_fixed {
            return Err(Error::schema("vocabulary", "byte pieces missing"));
        }
        let vocab = Vocabulary::from_pieces(file.pieces[n_fixed..].to_vec())?;
        if vocab.tokens != file.pieces {
            return Err(Error::schema("vocabulary", "byte pieces out of order"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 over the token list, used to pair checkpoints with vocabularies.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Text the vocabulary is trained on: OCR words, questions and answers.
pub fn corpus_texts(corpus: &Corpus) -> Vec<&str> {
    let mut out = Vec::new();
    for m in &corpus.manuals {
        for p in &m.pages {
            for r in &p.regions {
                out.extend(r.words.iter().map(|w| w.text.as_str()));
            }
        }
        for q in &m.qas {
            out.push(q.question.as_str());
            out.push(q.answer.text.as_str());
        }
    }
    out
}

/// Learns an inventory of `target_size` pieces (characters plus merges).
pub fn build_vocab_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Vocabulary> {
    if target_size < 64 {
        return Err(Error::InvalidArgument(format!("target_size must be >= 64, got {target_size}")));
    }
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for t in texts {
        for w in t.split_whitespace() {
            *freq.entry(w).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::InvalidArgument("cannot build a vocabulary from an empty corpus".into()));
    }
    let reserved: Vec<String> = SPECIAL_NAMES
        .iter()
        .map(|(_, t)| t.to_string())
        .chain((0..=255u8).flat_map(|b| [byte_token(b, true), byte_token(b, false)]))
        .collect();

    // (initial, body) symbols; the piece string is derived only when stored
    type Sym = (bool, String);
    let mut words: Vec<(Vec<Sym>, u64)> = freq
        .iter()
        .map(|(w, n)| {
            let syms = w.chars().enumerate().map(|(i, c)| (i == 0, c.to_string())).collect();
            (syms, *n)
        })
        .collect();
    let piece_string = |(initial, body): &Sym| -> Option<String> {
        if *initial {
            // an initial piece spelled like a continuation would be ambiguous
            (!body.starts_with(CONT)).then(|| body.clone())
        } else {
            Some(format!("{CONT}{body}"))
        }
    };

    let mut inventory: Vec<String> = Vec::new();
    let mut known = std::collections::HashSet::new();
    let mut add = |sym: &Sym, inventory: &mut Vec<String>| {
        if let Some(p) = piece_string(sym) {
            if !reserved.contains(&p) && known.insert(p.clone()) {
                inventory.push(p);
            }
        }
    };
    let mut alphabet: Vec<Sym> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    alphabet.sort();
    alphabet.dedup();
    for a in &alphabet {
        add(a, &mut inventory);
    }

    while inventory.len() < target_size {
        let mut pairs: HashMap<(&Sym, &Sym), u64> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pairs.entry((&w[0], &w[1])).or_default() += n;
            }
        }
        let best = pairs
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((a, b), _)| (a.clone(), b.clone()));
        let Some((a, b)) = best else { break };
        let merged: Sym = (a.0, format!("{}{}", a.1, b.1));
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == a && syms[i + 1] == b {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        add(&merged, &mut inventory);
    }
    Vocabulary::from_pieces(inventory)
}

/// Learns a vocabulary over every text field of the corpus.
pub fn build_vocab(corpus: &Corpus, target_size: usize) -> Result<Vocabulary> {
    build_vocab_from_texts(corpus_texts(corpus), target_size)
}

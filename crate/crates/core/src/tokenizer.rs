//! Byte-level BPE with line provenance.
//!
//! Every newline byte is a token of its own and no merge ever crosses it, so
//! each token lies inside exactly one source line. The newline token belongs
//! to the line it terminates.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::line_spans;
use crate::{Error, Result};

pub const BASE_SIZE: usize = 256;
pub const SPECIAL_COUNT: usize = 3;
pub const DEFAULT_VOCAB_SIZE: usize = 8192;
/// Content-token budget: 512 model positions minus begin/end markers.
pub const DEFAULT_BUDGET: usize = 510;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
}

impl Specials {
    pub fn contains(&self, id: u32) -> bool {
        id == self.bos || id == self.eos || id == self.pad
    }
}

/// Ordered merge rules over a 256-symbol byte alphabet plus three special ids.
///
/// A merge whose concatenated expansion already names a symbol reuses that
/// symbol's id, so byte expansions identify symbols uniquely and the JSON form
/// (which stores expansions) is unambiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    merges: Vec<(u32, u32)>,
    merge_outputs: Vec<u32>,
    symbols: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
    specials: Specials,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    base_size: usize,
    specials: Specials,
    merges: Vec<[Vec<u8>; 2]>,
}

/// Symbol table shared by training and loading so both assign identical ids.
struct SymbolTable {
    symbols: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, u32>,
}

impl SymbolTable {
    fn bytes() -> Self {
        let symbols: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        SymbolTable { symbols, index }
    }

    fn intern(&mut self, left: u32, right: u32) -> u32 {
        let mut joined = self.symbols[left as usize].clone();
        joined.extend_from_slice(&self.symbols[right as usize]);
        if let Some(&id) = self.index.get(&joined) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.index.insert(joined.clone(), id);
        self.symbols.push(joined);
        id
    }
}

impl Vocabulary {
    /// A vocabulary with no merges: one token per byte.
    pub fn byte_level() -> Self {
        Self::from_id_merges(Vec::new()).expect("empty merge list is valid")
    }

    fn from_id_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut table = SymbolTable::bytes();
        let mut ranks = HashMap::with_capacity(merges.len());
        let mut merge_outputs = Vec::with_capacity(merges.len());
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let n = table.symbols.len() as u32;
            if l >= n || r >= n {
                return Err(Error::InvalidVocab(format!(
                    "merge {rank} refers to undefined symbol"
                )));
            }
            let out = table.intern(l, r);
            if table.symbols[out as usize].contains(&b'\n') {
                return Err(Error::InvalidVocab(format!(
                    "merge {rank} produces a symbol spanning a newline"
                )));
            }
            if ranks.insert((l, r), (rank, out)).is_some() {
                return Err(Error::InvalidVocab(format!("merge {rank} is a duplicate")));
            }
            merge_outputs.push(out);
        }
        let first_special = table.symbols.len() as u32;
        Ok(Vocabulary {
            merges,
            merge_outputs,
            symbols: table.symbols,
            ranks,
            specials: Specials {
                bos: first_special,
                eos: first_special + 1,
                pad: first_special + 2,
            },
        })
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Id produced by each merge rule, in rule order.
    pub fn merge_outputs(&self) -> &[u32] {
        &self.merge_outputs
    }

    /// Number of content symbols (bytes plus distinct merged symbols).
    pub fn content_size(&self) -> usize {
        self.symbols.len()
    }

    /// Size of the id space, specials included.
    pub fn len(&self) -> usize {
        let max_special = self.specials.bos.max(self.specials.eos).max(self.specials.pad);
        self.symbols.len().max(max_special as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn expansion(&self, id: u32) -> Option<&[u8]> {
        self.symbols.get(id as usize).map(Vec::as_slice)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            base_size: BASE_SIZE,
            specials: self.specials,
            merges: self
                .merges
                .iter()
                .map(|&(l, r)| [self.symbols[l as usize].clone(), self.symbols[r as usize].clone()])
                .collect(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.base_size != BASE_SIZE {
            return Err(Error::InvalidVocab(format!(
                "base_size must be {BASE_SIZE}, got {}",
                file.base_size
            )));
        }
        let mut table = SymbolTable::bytes();
        let mut merges = Vec::with_capacity(file.merges.len());
        for (rank, [l, r]) in file.merges.iter().enumerate() {
            let lookup = |s: &Vec<u8>| {
                table.index.get(s).copied().ok_or_else(|| {
                    Error::InvalidVocab(format!("merge {rank} refers to unknown symbol {s:?}"))
                })
            };
            let (l, r) = (lookup(l)?, lookup(r)?);
            table.intern(l, r);
            merges.push((l, r));
        }
        let mut vocab = Self::from_id_merges(merges)?;
        let s = file.specials;
        let content = vocab.symbols.len() as u32;
        if s.bos < content || s.eos < content || s.pad < content {
            return Err(Error::InvalidVocab("special id collides with a content id".into()));
        }
        if s.bos == s.eos || s.bos == s.pad || s.eos == s.pad {
            return Err(Error::InvalidVocab("special ids must be distinct".into()));
        }
        vocab.specials = s;
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the JSON form, hex encoded. Checkpoints record it.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Tokenizes one line's content (no newline) into (id, byte length) pieces.
    fn encode_segment(&self, bytes: &[u8]) -> Vec<(u32, usize)> {
        let mut pieces: Vec<(u32, usize)> = bytes.iter().map(|&b| (b as u32, 1)).collect();
        loop {
            let best = pieces
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].0, w[1].0)).map(|&(rank, _)| rank))
                .min();
            let Some(rank) = best else { break };
            let pair = self.merges[rank];
            let out = self.merge_outputs[rank];
            let mut merged = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && (pieces[i].0, pieces[i + 1].0) == pair {
                    merged.push((out, pieces[i].1 + pieces[i + 1].1));
                    i += 2;
                } else {
                    merged.push(pieces[i]);
                    i += 1;
                }
            }
            pieces = merged;
        }
        pieces
    }

    /// Encodes `code`, keeping at most `budget` content tokens.
    pub fn encode(&self, function_id: &str, code: &str, budget: usize) -> TokenizedFunction {
        let bytes = code.as_bytes();
        let spans = line_spans(bytes);
        let mut tokens = Vec::new();
        let mut cache: HashMap<&[u8], Vec<(u32, usize)>> = HashMap::new();
        for (line_index, span) in spans.iter().enumerate() {
            let line = &bytes[span.clone()];
            let (content, newline) = match line.split_last() {
                Some((b'\n', rest)) => (rest, true),
                _ => (line, false),
            };
            let pieces = cache
                .entry(content)
                .or_insert_with(|| self.encode_segment(content));
            let mut offset = span.start;
            for &(id, len) in pieces.iter() {
                tokens.push(Token {
                    id,
                    byte_span: offset..offset + len,
                    line_index,
                });
                offset += len;
            }
            if newline {
                tokens.push(Token {
                    id: b'\n' as u32,
                    byte_span: offset..offset + 1,
                    line_index,
                });
            }
        }
        let truncated = tokens.len() > budget;
        tokens.truncate(budget);
        TokenizedFunction {
            function_id: function_id.to_string(),
            tokens,
            line_count: spans.len(),
            truncated,
            max_content_tokens: budget,
        }
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            if self.specials.contains(id) {
                continue;
            }
            let exp = self.expansion(id).ok_or(Error::UnknownToken(id))?;
            out.extend_from_slice(exp);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| Error::InvalidUtf8)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub byte_span: Range<usize>,
    pub line_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedFunction {
    pub function_id: String,
    pub tokens: Vec<Token>,
    pub line_count: usize,
    pub truncated: bool,
    pub max_content_tokens: usize,
}

impl TokenizedFunction {
    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn token_lines(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.line_index).collect()
    }

    /// Model input: `[bos, content..., eos]`.
    pub fn model_input(&self, specials: Specials) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.tokens.len() + 2);
        ids.push(specials.bos);
        ids.extend(self.tokens.iter().map(|t| t.id));
        ids.push(specials.eos);
        ids
    }
}

#[derive(Clone, PartialEq, Eq)]
struct HeapEntry {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for HeapEntry {
    // Max-heap on count, then lexicographically smallest expansion first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pairs_of(word: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

/// Learns `target_vocab_size - 256 - 3` merges greedily by pair frequency.
///
/// Pairs are counted within lines only. Ties go to the pair whose
/// (left, right) byte expansions sort first. Training stops early if the
/// corpus runs out of adjacent pairs.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let minimum = BASE_SIZE + SPECIAL_COUNT;
    if target_vocab_size < minimum {
        return Err(Error::VocabTooSmall {
            target: target_vocab_size,
            minimum,
        });
    }
    let wanted = target_vocab_size - minimum;

    let mut word_counts: HashMap<&[u8], u64> = HashMap::new();
    for text in corpus {
        for segment in text.as_ref().as_bytes().split(|&b| b == b'\n') {
            if segment.len() >= 2 {
                *word_counts.entry(segment).or_default() += 1;
            }
        }
    }
    let mut entries: Vec<(&[u8], u64)> = word_counts.into_iter().collect();
    entries.sort_unstable();
    let mut words: Vec<Vec<u32>> = entries
        .iter()
        .map(|(w, _)| w.iter().map(|&b| b as u32).collect())
        .collect();
    let freqs: Vec<u64> = entries.iter().map(|&(_, c)| c).collect();

    let mut table = SymbolTable::bytes();
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (i, w) in words.iter().enumerate() {
        for p in pairs_of(w) {
            *counts.entry(p).or_default() += freqs[i];
            where_.entry(p).or_default().insert(i);
        }
    }
    let entry = |table: &SymbolTable, pair: (u32, u32), count: u64| HeapEntry {
        count,
        left: table.symbols[pair.0 as usize].clone(),
        right: table.symbols[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<HeapEntry> = counts
        .iter()
        .map(|(&p, &c)| entry(&table, p, c))
        .collect();

    let mut merges = Vec::with_capacity(wanted);
    while merges.len() < wanted {
        let Some(top) = heap.pop() else { break };
        let current = counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 || current != top.count {
            continue;
        }
        let pair = top.pair;
        let out = table.intern(pair.0, pair.1);
        merges.push(pair);

        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let f = freqs[wi];
            let old = std::mem::take(&mut words[wi]);
            if !pairs_of(&old).any(|p| p == pair) {
                words[wi] = old;
                continue;
            }
            for p in pairs_of(&old) {
                if let Some(c) = counts.get_mut(&p) {
                    *c -= f;
                }
                touched.insert(p);
            }
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    merged.push(out);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            for p in pairs_of(&merged) {
                *counts.entry(p).or_default() += f;
                where_.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            words[wi] = merged;
        }
        counts.remove(&pair);
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match counts.get(&p).copied() {
                Some(0) => {
                    counts.remove(&p);
                }
                Some(c) => heap.push(entry(&table, p, c)),
                None => {}
            }
        }
    }
    Vocabulary::from_id_merges(merges)
}

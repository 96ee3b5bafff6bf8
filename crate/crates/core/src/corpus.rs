//! Tokenized corpus handling: vocabulary, encoding, word dropout, batching
//! and imputation masks.
//!
//! Corpora are pre-tokenized, one sentence per line, tokens separated by
//! whitespace. No lowercasing or further tokenization is applied.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<s>", "</s>"];
const VOCAB_HEADER: &str = "sentvae-vocab v1";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sentence is empty")]
    EmptySentence,
    #[error("token id {id} invalid for vocabulary of size {size}")]
    InvalidId { id: usize, size: usize },
    #[error("token sequence must not contain padding")]
    EmbeddedPad,
    #[error("keep rate {0} outside [0, 1]")]
    InvalidKeepRate(f64),
    #[error("malformed vocabulary file: {0}")]
    MalformedVocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token-id mapping with reserved ids 0=PAD, 1=UNK, 2=SOS, 3=EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary with only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_tokens(Vec::new()).expect("reserved vocabulary")
    }

    /// Builds a vocabulary from non-reserved tokens listed in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CorpusError::MalformedVocab(format!("bad token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::MalformedVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// Counts tokens over `lines` and keeps the most frequent, ties broken
    /// lexicographically. `max_size` counts the reserved ids.
    pub fn build<I, S>(lines: I, max_size: Option<usize>, min_freq: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                any = true;
                if RESERVED.contains(&tok) {
                    continue;
                }
                *counts.entry(tok.to_string()).or_default() += 1;
            }
        }
        if !any {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let capacity = max_size.map_or(usize::MAX, |m| m.saturating_sub(NUM_RESERVED));
        ranked.truncate(capacity);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Result<&str, CorpusError> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(CorpusError::InvalidId { id, size: self.len() })
    }

    /// Maps OOV tokens to UNK and appends EOS.
    pub fn encode(&self, line: &str) -> Result<TokenSequence, CorpusError> {
        let mut ids: Vec<usize> = line.split_whitespace().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        ids.push(EOS);
        Ok(TokenSequence(ids))
    }

    /// Drops SOS, EOS and PAD and joins with single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String, CorpusError> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id)?;
            if id == SOS || id == EOS || id == PAD {
                continue;
            }
            words.push(tok);
        }
        Ok(words.join(" "))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CorpusError> {
        writeln!(w, "{VOCAB_HEADER}")?;
        for t in &self.tokens[NUM_RESERVED..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, CorpusError> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref() != Some(VOCAB_HEADER) {
            return Err(CorpusError::MalformedVocab("missing header".into()));
        }
        let tokens = lines.collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CorpusError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub fn encode_sentence(vocab: &Vocabulary, line: &str) -> Result<TokenSequence, CorpusError> {
    vocab.encode(line)
}

pub fn decode_tokens(vocab: &Vocabulary, ids: &[usize]) -> Result<String, CorpusError> {
    vocab.decode(ids)
}

/// An encoded sentence: content tokens, normally followed by EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self, CorpusError> {
        if ids.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        if ids.contains(&PAD) {
            return Err(CorpusError::EmbeddedPad);
        }
        Ok(TokenSequence(ids))
    }

    /// Content ids followed by EOS.
    pub fn from_content(content: &[usize]) -> Result<Self, CorpusError> {
        let mut ids = content.to_vec();
        ids.push(EOS);
        Self::new(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.0.last() == Some(&EOS)
    }

    /// Tokens before the trailing EOS.
    pub fn content(&self) -> &[usize] {
        if self.ends_with_eos() {
            &self.0[..self.0.len() - 1]
        } else {
            &self.0
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<(), CorpusError> {
        match self.0.iter().find(|&&id| id >= vocab_size) {
            Some(&id) => Err(CorpusError::InvalidId { id, size: vocab_size }),
            None => Ok(()),
        }
    }
}

/// Decoding order. Right-to-left reverses the content tokens; EOS stays last.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Direction {
    #[default]
    LeftToRight,
    RightToLeft,
}

impl Direction {
    /// Maps a surface-order sequence into model order. Applying it twice is
    /// the identity.
    pub fn apply(self, seq: &TokenSequence) -> TokenSequence {
        TokenSequence(self.apply_ids(seq.ids()))
    }

    pub fn apply_ids(self, ids: &[usize]) -> Vec<usize> {
        match self {
            Direction::LeftToRight => ids.to_vec(),
            Direction::RightToLeft => {
                let (content, tail) = if ids.last() == Some(&EOS) {
                    (&ids[..ids.len() - 1], &ids[ids.len() - 1..])
                } else {
                    (ids, &[][..])
                };
                content.iter().rev().chain(tail).copied().collect()
            }
        }
    }

    /// Reorders per-position data (such as a known mask) the same way
    /// [`Direction::apply_ids`] reorders tokens.
    pub fn apply_ids_mask<T: Clone>(self, items: &[T], has_eos: bool) -> Vec<T> {
        match self {
            Direction::LeftToRight => items.to_vec(),
            Direction::RightToLeft => {
                let n = if has_eos { items.len().saturating_sub(1) } else { items.len() };
                items[..n].iter().rev().chain(&items[n..]).cloned().collect()
            }
        }
    }

    /// Maps a position in surface order to its model-order position for a
    /// sequence of `len` tokens.
    pub fn position(self, pos: usize, len: usize, has_eos: bool) -> usize {
        match self {
            Direction::LeftToRight => pos,
            Direction::RightToLeft => {
                let content = if has_eos { len - 1 } else { len };
                if pos < content {
                    content - 1 - pos
                } else {
                    pos
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeftToRight => "l2r",
            Direction::RightToLeft => "r2l",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2r" => Ok(Direction::LeftToRight),
            "r2l" => Ok(Direction::RightToLeft),
            _ => Err(format!("unknown direction {s:?} (expected l2r or r2l)")),
        }
    }
}

/// Decoder conditioning inputs for `targets`: SOS followed by every target
/// except the last.
pub fn decoder_inputs(targets: &[usize]) -> Vec<usize> {
    let mut inputs = Vec::with_capacity(targets.len());
    inputs.push(SOS);
    inputs.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
    inputs
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WordDropoutConfig {
    pub keep_rate: f64,
    pub seed: u64,
}

pub fn check_keep_rate(k: f64) -> Result<(), CorpusError> {
    if (0.0..=1.0).contains(&k) {
        Ok(())
    } else {
        Err(CorpusError::InvalidKeepRate(k))
    }
}

/// Replaces each conditioning token other than SOS, EOS and PAD with UNK
/// with probability `1 - keep_rate`.
pub fn apply_word_dropout(inputs: &[usize], keep_rate: f64, rng: &mut impl Rng) -> Result<Vec<usize>, CorpusError> {
    check_keep_rate(keep_rate)?;
    if keep_rate >= 1.0 {
        return Ok(inputs.to_vec());
    }
    Ok(inputs
        .iter()
        .map(|&t| {
            if t == SOS || t == EOS || t == PAD {
                t
            } else if keep_rate <= 0.0 || rng.random::<f64>() >= keep_rate {
                UNK
            } else {
                t
            }
        })
        .collect())
}

/// A sentence with a known/unknown flag per position (surface order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImputationInstance {
    pub sequence: TokenSequence,
    pub known: Vec<bool>,
}

impl ImputationInstance {
    pub fn unknown_count(&self) -> usize {
        self.known.iter().filter(|k| !**k).count()
    }

    /// Known tokens before the first unknown position.
    pub fn known_prefix(&self) -> &[usize] {
        let first = self.known.iter().position(|k| !k).unwrap_or(self.known.len());
        &self.sequence.ids()[..first]
    }

    /// The true tokens at unknown positions.
    pub fn hidden_tokens(&self) -> Vec<usize> {
        self.sequence
            .ids()
            .iter()
            .zip(&self.known)
            .filter(|(_, k)| !**k)
            .map(|(t, _)| *t)
            .collect()
    }

    /// The sequence with UNK at every unknown position.
    pub fn with_unk(&self) -> TokenSequence {
        TokenSequence(
            self.sequence
                .ids()
                .iter()
                .zip(&self.known)
                .map(|(&t, &k)| if k { t } else { UNK })
                .collect(),
        )
    }
}

/// Number of unknown tokens for `n` content tokens: `max(1, ceil(0.2 n))`,
/// never more than `n`.
pub fn imputation_unknown_count(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        n.div_ceil(5).max(1)
    }
}

/// Marks the final 20% of content tokens unknown. EOS is always known.
pub fn mask_for_imputation(seq: &TokenSequence) -> ImputationInstance {
    let n = seq.content().len();
    let u = imputation_unknown_count(n);
    let known = (0..seq.len()).map(|i| i >= n || i < n - u).collect();
    ImputationInstance {
        sequence: seq.clone(),
        known,
    }
}

/// Padded id matrix in model order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub direction: Direction,
}

impl Batch {
    pub fn new(seqs: &[TokenSequence], direction: Direction) -> Self {
        let width = seqs.iter().map(TokenSequence::len).max().unwrap_or(0);
        let ids = seqs
            .iter()
            .map(|s| {
                let mut row = direction.apply_ids(s.ids());
                row.resize(width, PAD);
                row
            })
            .collect();
        Batch {
            ids,
            lengths: seqs.iter().map(TokenSequence::len).collect(),
            direction,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row `i` without padding, in model order.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i][..self.lengths[i]]
    }

    /// Same sentences in the opposite decoding direction.
    pub fn reversed(&self) -> Batch {
        let flipped = match self.direction {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        };
        let width = self.ids.first().map_or(0, Vec::len);
        let ids = (0..self.len())
            .map(|i| {
                let mut row = Direction::RightToLeft.apply_ids(self.row(i));
                row.resize(width, PAD);
                row
            })
            .collect();
        Batch {
            ids,
            lengths: self.lengths.clone(),
            direction: flipped,
        }
    }

    /// Surface-order sequences.
    pub fn sequences(&self) -> Vec<TokenSequence> {
        (0..self.len())
            .map(|i| {
                let ids = match self.direction {
                    Direction::LeftToRight => self.row(i).to_vec(),
                    Direction::RightToLeft => Direction::RightToLeft.apply_ids(self.row(i)),
                };
                TokenSequence(ids)
            })
            .collect()
    }
}

/// Reads non-empty lines of a corpus file.
pub fn read_lines(path: &std::path::Path) -> Result<Vec<String>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn encode_all(vocab: &Vocabulary, lines: &[String]) -> Result<Vec<TokenSequence>, CorpusError> {
    lines.iter().map(|l| vocab.encode(l)).collect()
}

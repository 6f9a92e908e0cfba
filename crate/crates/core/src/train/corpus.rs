//! Byte-level corpus with contiguous train/valid/test splits, plus a seeded
//! generator of English-like prose for runs without a text file at hand.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fractions of the byte stream given to the first two splits; the rest is test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vec<u8>,
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
    checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Corpus {
    pub fn from_bytes(bytes: &[u8], fractions: SplitFractions) -> Result<Self> {
        let SplitFractions { train, valid } = fractions;
        if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
            return Err(Error::Validation(format!(
                "split fractions train={train} valid={valid} must be positive and leave room for test"
            )));
        }
        let n = bytes.len();
        let n_train = (n as f64 * train).floor() as usize;
        let n_valid = (n as f64 * valid).floor() as usize;
        if n_train < 2 || n_valid < 2 || n - n_train - n_valid < 2 {
            return Err(Error::Validation(format!("corpus of {n} bytes is too small to split")));
        }
        let mut seen = [false; 256];
        for &b in bytes {
            seen[b as usize] = true;
        }
        let vocab: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
        let mut index = [0usize; 256];
        for (i, &b) in vocab.iter().enumerate() {
            index[b as usize] = i;
        }
        let ids: Vec<usize> = bytes.iter().map(|&b| index[b as usize]).collect();
        Ok(Self {
            vocab,
            train: ids[..n_train].to_vec(),
            valid: ids[n_train..n_train + n_valid].to_vec(),
            test: ids[n_train + n_valid..].to_vec(),
            checksum: hex::encode(Sha256::digest(bytes)),
        })
    }

    pub fn from_file(path: &Path, fractions: SplitFractions) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, fractions)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Distinct bytes in ascending order; token id `i` stands for `vocab()[i]`.
    pub fn vocab(&self) -> &[u8] {
        &self.vocab
    }

    pub fn split(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn valid(&self) -> &[usize] {
        &self.valid
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// Hex SHA-256 of the raw bytes.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<u8> {
        ids.iter().map(|&i| self.vocab[i]).collect()
    }
}

const NOUNS: &[&str] = &[
    "river", "house", "garden", "letter", "village", "window", "captain", "winter", "road", "table",
    "mother", "stranger", "harbor", "candle", "mountain", "door", "friend", "market", "field", "ship",
    "morning", "evening", "forest", "child", "doctor", "horse", "bridge", "storm", "teacher", "island",
    "book", "voice", "kitchen", "lamp", "tower", "station", "farmer", "sister", "brother", "clock",
    "church", "wall", "stone", "valley", "king", "servant", "story", "journey", "night", "boat",
];
const VERBS: &[&str] = &[
    "found", "watched", "carried", "followed", "opened", "remembered", "crossed", "left", "heard",
    "described", "painted", "visited", "closed", "answered", "built", "lost", "kept", "brought",
    "noticed", "wanted", "touched", "reached", "called", "saw", "passed", "mended", "sold", "read",
];
const INTRANSITIVE: &[&str] = &[
    "waited", "slept", "laughed", "returned", "listened", "vanished", "trembled", "wandered",
    "smiled", "rested", "spoke", "arrived", "departed", "hesitated", "sang", "fell silent",
];
const ADJECTIVES: &[&str] = &[
    "old", "quiet", "cold", "bright", "narrow", "small", "heavy", "gentle", "broken", "distant",
    "green", "dark", "strange", "warm", "empty", "little", "grey", "patient", "tall", "careful",
];
const ADVERBS: &[&str] = &[
    "slowly", "quietly", "again", "at last", "once more", "without a word", "in silence", "carefully",
    "for a while", "before dawn", "after supper", "all day",
];
const PREPOSITIONS: &[&str] = &["near", "beside", "behind", "across", "under", "beyond", "toward", "above"];
const NAMES: &[&str] = &[
    "Anna", "Thomas", "Martha", "John", "Eliza", "Henry", "Clara", "Samuel", "Ruth", "Peter",
];
const CONNECTIVES: &[&str] = &["and", "but", "while", "because", "so", "until", "when"];
const SPEECH: &[&str] = &[
    "It is late", "Come inside", "We should go", "I know the way", "Nobody saw it", "Wait for me",
    "The road is long", "Listen", "That was years ago", "Tell me again",
];

struct Prose<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Prose<'_> {
    fn pick(&mut self, words: &[&'static str]) -> &'static str {
        words.choose(self.rng).expect("word lists are non-empty")
    }

    fn noun_phrase(&mut self) -> String {
        match self.rng.gen_range(0..10) {
            0..=1 => self.pick(NAMES).to_string(),
            2..=5 => format!("the {}", self.pick(NOUNS)),
            6..=7 => format!("the {} {}", self.pick(ADJECTIVES), self.pick(NOUNS)),
            8 => format!("a {} {}", self.pick(ADJECTIVES), self.pick(NOUNS)),
            _ => format!("the {} of the {}", self.pick(NOUNS), self.pick(NOUNS)),
        }
    }

    fn clause(&mut self) -> String {
        let subject = self.noun_phrase();
        let mut s = match self.rng.gen_range(0..3) {
            0 => format!("{subject} {}", self.pick(INTRANSITIVE)),
            _ => format!("{subject} {} {}", self.pick(VERBS), self.noun_phrase()),
        };
        if self.rng.gen_bool(0.35) {
            s = format!("{s} {} {}", self.pick(PREPOSITIONS), self.noun_phrase());
        }
        if self.rng.gen_bool(0.25) {
            s = format!("{s} {}", self.pick(ADVERBS));
        }
        s
    }

    fn sentence(&mut self) -> String {
        let body = match self.rng.gen_range(0..10) {
            0 => {
                let who = self.pick(NAMES);
                return format!("\"{}\", said {who}.", self.pick(SPEECH));
            }
            1..=3 => format!("{}, {} {}", self.clause(), self.pick(CONNECTIVES), self.clause()),
            _ => self.clause(),
        };
        let mut chars = body.chars();
        let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or(' ');
        let end = if self.rng.gen_bool(0.08) { '?' } else { '.' };
        format!("{first}{}{end}", chars.as_str())
    }
}

/// Deterministic English-like prose of at least `min_bytes` bytes, in
/// paragraphs of a few sentences separated by blank lines.
pub fn synthetic_text(min_bytes: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(min_bytes + 512);
    while out.len() < min_bytes {
        let sentences = rng.gen_range(3..8);
        let mut line = 0;
        for i in 0..sentences {
            let s = Prose { rng: &mut rng }.sentence();
            if i > 0 {
                if line + s.len() + 1 > 72 {
                    out.push('\n');
                    line = 0;
                } else {
                    out.push(' ');
                    line += 1;
                }
            }
            line += s.len();
            out.push_str(&s);
        }
        out.push_str("\n\n");
    }
    out
}

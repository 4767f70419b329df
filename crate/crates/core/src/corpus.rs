//! Character vocabulary, integer encoding and dataset splits for the TCN.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default maximum input length of the generator.
pub const MAX_SEQ_LEN: usize = 250;

/// Bijective character ⇄ id mapping, sorted by code point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    char_to_id: HashMap<char, u32>,
    id_to_char: Vec<char>,
}

impl Vocabulary {
    /// Builds the vocabulary of a UTF-8 corpus. Invalid sequences are decoded lossily.
    pub fn build(corpus: &[u8]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let text = String::from_utf8_lossy(corpus);
        Self::from_chars(text.chars())
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let id_to_char: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if id_to_char.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let char_to_id = id_to_char
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32))
            .collect();
        Ok(Self {
            char_to_id,
            id_to_char,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_char.len()
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.char_to_id.get(&c).copied()
    }

    pub fn char(&self, id: u32) -> Option<char> {
        self.id_to_char.get(id as usize).copied()
    }

    /// Strict encoding; fails on the first character outside the vocabulary.
    pub fn encode(&self, text: &str) -> Result<EncodedSequence> {
        text.chars()
            .map(|c| self.id(c).ok_or(Error::UnknownChar(c)))
            .collect::<Result<Vec<_>>>()
            .map(EncodedSequence::new)
    }

    /// Inference-time encoding: unknown characters map to id 0.
    pub fn encode_lossy(&self, text: &str) -> EncodedSequence {
        EncodedSequence::new(text.chars().map(|c| self.id(c).unwrap_or(0)).collect())
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.char(id).ok_or(Error::IdOutOfRange {
                    id,
                    size: self.size(),
                })
            })
            .collect()
    }

    /// `codepoint<TAB>id` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.id_to_char.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", *c as u32, id);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::Parse(format!("vocabulary line {}: {line:?}", n + 1));
            let (cp, id) = line.split_once('\t').ok_or_else(bad)?;
            let cp: u32 = cp.trim().parse().map_err(|_| bad())?;
            let id: u32 = id.trim().parse().map_err(|_| bad())?;
            pairs.push((id, char::from_u32(cp).ok_or_else(bad)?));
        }
        pairs.sort_unstable();
        if pairs.iter().enumerate().any(|(i, (id, _))| *id as usize != i) {
            return Err(Error::Parse("vocabulary ids are not dense".into()));
        }
        let vocab = Self::from_chars(pairs.iter().map(|(_, c)| *c))?;
        if vocab.size() != pairs.len() || vocab.id_to_char.iter().zip(&pairs).any(|(a, (_, b))| a != b) {
            return Err(Error::Parse("vocabulary is not sorted by code point".into()));
        }
        Ok(vocab)
    }

    /// Short content hash used to tie checkpoints to their vocabulary.
    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.to_tsv().as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
}

impl EncodedSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One train/validation partition: the validation part is a contiguous
/// segment of the corpus, the training part is everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: EncodedSequence,
    pub validation: EncodedSequence,
    pub split_seed: u64,
    pub split_fraction: f64,
    /// Offset of the validation segment within the corpus.
    pub validation_offset: usize,
}

/// Draws `n_splits` distinct splits. `fraction` is the training share.
pub fn make_splits(
    corpus: &EncodedSequence,
    n_splits: usize,
    fraction: f64,
    seed: u64,
    window_len: usize,
) -> Result<Vec<DatasetSplit>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} not in (0, 1)")));
    }
    if corpus.len() < window_len + 1 {
        return Err(Error::InsufficientData(format!(
            "corpus of {} ids is shorter than one window of {}",
            corpus.len(),
            window_len + 1
        )));
    }
    let len = corpus.len();
    let train_len = ((len as f64) * fraction).round() as usize;
    let val_len = len - train_len;
    if train_len < 2 || val_len < 2 {
        return Err(Error::InsufficientData(format!(
            "fraction {fraction} leaves an empty partition of {len} ids"
        )));
    }
    let positions = len - val_len + 1;
    if positions < n_splits {
        return Err(Error::InsufficientData(format!(
            "only {positions} distinct validation offsets for {n_splits} splits"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = index::sample(&mut rng, positions, n_splits);
    Ok(offsets
        .iter()
        .map(|offset| {
            let ids = &corpus.ids;
            let validation = ids[offset..offset + val_len].to_vec();
            let mut train = Vec::with_capacity(train_len);
            train.extend_from_slice(&ids[..offset]);
            train.extend_from_slice(&ids[offset + val_len..]);
            DatasetSplit {
                train: EncodedSequence::new(train),
                validation: EncodedSequence::new(validation),
                split_seed: seed,
                split_fraction: fraction,
                validation_offset: offset,
            }
        })
        .collect())
}

/// Next-character training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window<'a> {
    pub input: &'a [u32],
    pub target: &'a [u32],
}

/// Yields windows of `window_len` inputs with targets shifted by one, starting
/// every `stride` positions. Only full windows are produced.
pub fn training_windows(
    seq: &EncodedSequence,
    window_len: usize,
    stride: usize,
) -> impl Iterator<Item = Window<'_>> + '_ {
    let stride = stride.max(1);
    let count = window_count(seq.len(), window_len, stride);
    (0..count).map(move |i| {
        let start = i * stride;
        Window {
            input: &seq.ids[start..start + window_len],
            target: &seq.ids[start + 1..start + window_len + 1],
        }
    })
}

pub fn window_count(len: usize, window_len: usize, stride: usize) -> usize {
    if window_len == 0 || len < window_len + 1 {
        0
    } else {
        (len - 1 - window_len) / stride.max(1) + 1
    }
}

/// Windows used for loss evaluation: full windows when the sequence holds at
/// least one, otherwise a single window spanning the whole sequence.
pub fn evaluation_windows(seq: &EncodedSequence, window_len: usize) -> Vec<Window<'_>> {
    let full: Vec<_> = training_windows(seq, window_len, window_len).collect();
    if !full.is_empty() || seq.len() < 2 {
        return full;
    }
    let n = seq.len() - 1;
    vec![Window {
        input: &seq.ids[..n],
        target: &seq.ids[1..],
    }]
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::grammar::{generate_corpus, GrammarConfig};

    #[test]
    fn sorted_vocabulary() {
        let v = Vocabulary::build(b"abca").unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.id('a'), Some(0));
        assert_eq!(v.id('b'), Some(1));
        assert_eq!(v.id('c'), Some(2));
        assert!(matches!(Vocabulary::build(b""), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn reference_grammar_has_107_characters() {
        let corpus = generate_corpus(&GrammarConfig::with_seed(0), 20_000).unwrap();
        let v = Vocabulary::build(corpus.to_text().as_bytes()).unwrap();
        assert_eq!(v.size(), 107);
    }

    #[test]
    fn unknown_chars() {
        let v = Vocabulary::build(b"xyz").unwrap();
        assert!(matches!(v.encode("xq"), Err(Error::UnknownChar('q'))));
        assert_eq!(v.encode_lossy("xqz").ids, vec![0, 0, 2]);
        assert!(v.decode(&[3]).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::build("héllo\nwörld<>\"".as_bytes()).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
        assert!(Vocabulary::from_tsv("97\t1\n").is_err());
    }

    #[test]
    fn shift_by_one() {
        let v = Vocabulary::build(b"abcd").unwrap();
        let seq = v.encode("abcd").unwrap();
        let windows: Vec<_> = training_windows(&seq, 3, 3).collect();
        assert_eq!(windows.len(), 1);
        assert_eq!(v.decode(windows[0].input).unwrap(), "abc");
        assert_eq!(v.decode(windows[0].target).unwrap(), "bcd");
    }

    #[test]
    fn window_count_matches_enumeration() {
        // Brute force: every start s with s + w + 1 <= len, taken every `stride`.
        for len in 0..40usize {
            for w in 1..12usize {
                for stride in 1..8usize {
                    let brute = (0..len)
                        .step_by(stride)
                        .filter(|s| s + w < len)
                        .count();
                    let seq = EncodedSequence::new((0..len as u32).collect());
                    assert_eq!(training_windows(&seq, w, stride).count(), brute);
                    assert_eq!(window_count(len, w, stride), brute);
                    if stride == w {
                        assert_eq!(brute, len.saturating_sub(1) / w);
                    }
                }
            }
        }
    }

    #[test]
    fn full_length_windows() {
        let seq = EncodedSequence::new((0..2000).map(|i| i % 7).collect());
        assert!(training_windows(&seq, MAX_SEQ_LEN, MAX_SEQ_LEN).all(|w| w.input.len() == 250));
    }

    #[test]
    fn splits_are_reproducible_and_distinct() {
        let seq = EncodedSequence::new((0..10_000).map(|i| (i * 31 % 97) as u32).collect());
        let a = make_splits(&seq, 5, 0.9, 17, 250).unwrap();
        let b = make_splits(&seq, 5, 0.9, 17, 250).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let offsets: BTreeSet<_> = a.iter().map(|s| s.validation_offset).collect();
        assert_eq!(offsets.len(), 5);
        for split in &a {
            assert_eq!(split.train.len() + split.validation.len(), seq.len());
            let o = split.validation_offset;
            assert_eq!(&seq.ids[o..o + split.validation.len()], &split.validation.ids[..]);
        }
    }

    #[test]
    fn half_split() {
        let seq = EncodedSequence::new(vec![1; 1000]);
        let split = &make_splits(&seq, 1, 0.5, 0, 250).unwrap()[0];
        assert!(split.train.len().abs_diff(500) <= 1);
        assert!(split.validation.len().abs_diff(500) <= 1);
    }

    #[test]
    fn split_errors() {
        let seq = EncodedSequence::new(vec![1; 100]);
        assert!(matches!(make_splits(&seq, 1, 0.5, 0, 250), Err(Error::InsufficientData(_))));
        assert!(make_splits(&seq, 1, 1.0, 0, 10).is_err());
        assert!(make_splits(&seq, 1, 0.0, 0, 10).is_err());
    }

    #[test]
    fn short_validation_gets_one_window() {
        let seq = EncodedSequence::new(vec![0, 1, 2, 3, 4]);
        let w = evaluation_windows(&seq, 250);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].input, &[0, 1, 2, 3]);
        assert_eq!(w[0].target, &[1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(corpus in "\\PC{1,64}", probe in "\\PC{0,64}") {
            let text = format!("{corpus}{probe}");
            let v = Vocabulary::build(text.as_bytes()).unwrap();
            let encoded = v.encode(&probe).unwrap();
            prop_assert_eq!(v.decode(&encoded.ids).unwrap(), probe);
        }

        #[test]
        fn windows_shift(ids in proptest::collection::vec(0u32..50, 2..300), w in 1usize..40, stride in 1usize..40) {
            let seq = EncodedSequence::new(ids);
            for win in training_windows(&seq, w, stride) {
                prop_assert_eq!(win.input.len(), w);
                prop_assert_eq!(&win.input[1..], &win.target[..w - 1]);
            }
        }
    }
}

//! Synthetic triple-aligned corpus: source strings, their rendered images,
//! and cipher-based target strings.

mod batch;
mod io;
mod render;
mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{batch, Batch, ImageBatch, PaddedSeq};
pub use io::{read_dataset, read_image, write_dataset, write_image, IMAGE_MAGIC};
pub use render::{
    mix64, render_text_image, GlyphBank, TextImage, DEFAULT_GLYPH_SEED, GLYPH_WIDTH, IMAGE_HEIGHT,
};
pub use vocab::{Vocab, BOS, EOS, NUM_SPECIALS, PAD, UNK};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub alphabet: String,
    pub min_len: usize,
    pub max_len: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default = "default_glyph_seed")]
    pub glyph_seed: u64,
}

fn default_glyph_seed() -> u64 {
    DEFAULT_GLYPH_SEED
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            alphabet: "abcdefghijklmnop".into(),
            min_len: 3,
            max_len: 8,
            n_train: 5000,
            n_valid: 500,
            n_test: 500,
            seed: 7,
            glyph_seed: DEFAULT_GLYPH_SEED,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        Vocab::build(&self.alphabet)?;
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("split sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00,
            Split::Valid => 0x7661_6c69_6400,
            Split::Test => 0x7465_7374_0000,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Aligned image, source text and target text.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSample {
    pub split: Split,
    pub index: usize,
    pub src: String,
    pub tgt: String,
    pub image: TextImage,
    /// `BOS src EOS` in the source vocabulary.
    pub src_ids: Vec<u32>,
    /// `BOS tgt EOS` in the target vocabulary.
    pub tgt_ids: Vec<u32>,
}

impl TripleSample {
    pub fn char_len(&self) -> usize {
        self.src_ids.len() - 2
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub train: Vec<TripleSample>,
    pub valid: Vec<TripleSample>,
    pub test: Vec<TripleSample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[TripleSample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Substitution cipher (shift by half the alphabet) followed by reversal.
pub fn translate_oracle(src: &str, alphabet: &str) -> Result<String> {
    let chars: Vec<char> = alphabet.chars().collect();
    if chars.is_empty() {
        return Err(Error::EmptyAlphabet);
    }
    let n = chars.len();
    let shift = n / 2;
    src.chars()
        .rev()
        .map(|c| {
            chars
                .iter()
                .position(|&a| a == c)
                .map(|k| chars[(k + shift) % n])
                .ok_or(Error::UnknownCharacter(c))
        })
        .collect()
}

/// Builds one sample; depends only on `(spec, split, index)`.
pub fn generate_sample(
    spec: &CorpusSpec,
    bank: &GlyphBank,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    split: Split,
    index: usize,
) -> Result<TripleSample> {
    let alphabet: Vec<char> = spec.alphabet.chars().collect();
    let seed = mix64(mix64(spec.seed ^ split.stream_id()) ^ index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let src: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
    let tgt = translate_oracle(&src, &spec.alphabet)?;
    Ok(TripleSample {
        split,
        index,
        image: bank.render(&src)?,
        src_ids: src_vocab.encode_with_bounds(&src)?,
        tgt_ids: tgt_vocab.encode_with_bounds(&tgt)?,
        src,
        tgt,
    })
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let src_vocab = Vocab::build(&spec.alphabet)?;
    let tgt_vocab = Vocab::build(&spec.alphabet)?;
    let bank = GlyphBank::new(&spec.alphabet, GLYPH_WIDTH, spec.glyph_seed)?;
    let gen = |split: Split, n: usize| -> Result<Vec<TripleSample>> {
        (0..n).map(|i| generate_sample(spec, &bank, &src_vocab, &tgt_vocab, split, i)).collect()
    };
    Ok(Corpus {
        train: gen(Split::Train, spec.n_train)?,
        valid: gen(Split::Valid, spec.n_valid)?,
        test: gen(Split::Test, spec.n_test)?,
        spec: spec.clone(),
        src_vocab,
        tgt_vocab,
    })
}

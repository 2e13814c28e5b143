//! On-disk dataset layout:
//!
//! ```text
//! <dir>/corpus.json          CorpusSpec used to generate the data
//! <dir>/manifest.jsonl       {"split","index","src","tgt","image"} per sample
//! <dir>/images/<split>_<index>.img
//! ```
//!
//! Image files: 8-byte magic `MTKDIMG1`, then `H`, `W`, `C` as little-endian
//! `u32`, then `H·W·C` little-endian `f32` values in row-major order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{translate_oracle, Corpus, CorpusSpec, Split, TextImage, TripleSample, Vocab};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: &[u8; 8] = b"MTKDIMG1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    split: Split,
    index: usize,
    src: String,
    tgt: String,
    image: String,
}

pub fn write_image(path: &Path, image: &TextImage) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + image.pixels.len() * 4);
    buf.extend_from_slice(IMAGE_MAGIC);
    for dim in [image.height, image.width, image.channels] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for p in &image.pixels {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<TextImage> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != IMAGE_MAGIC {
        return Err(Error::Format(format!("{}: not an MTKDIMG1 file", path.display())));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let n = height * width * channels;
    if bytes.len() != 20 + 4 * n {
        return Err(Error::Format(format!(
            "{}: header says {n} values but payload has {} bytes",
            path.display(),
            bytes.len() - 20
        )));
    }
    let pixels = bytes[20..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(TextImage { height, width, channels, pixels })
}

pub fn write_dataset(dir: &Path, corpus: &Corpus) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let spec_path = dir.join("corpus.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&corpus.spec)? + "\n")
        .map_err(|e| Error::io(&spec_path, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest =
        BufWriter::new(File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    for split in Split::ALL {
        for s in corpus.split(split) {
            let name = format!("images/{}_{:06}.img", split.name(), s.index);
            write_image(&dir.join(&name), &s.image)?;
            let rec = ManifestRecord {
                split,
                index: s.index,
                src: s.src.clone(),
                tgt: s.tgt.clone(),
                image: name,
            };
            writeln!(manifest, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&manifest_path, e))?;
        }
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))
}

/// Loads a dataset written by [`write_dataset`], re-checking every sample's
/// alignment.
pub fn read_dataset(dir: &Path) -> Result<Corpus> {
    let spec_path = dir.join("corpus.json");
    let spec_text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: CorpusSpec = serde_json::from_str(&spec_text)?;
    spec.validate()?;
    let src_vocab = Vocab::build(&spec.alphabet)?;
    let tgt_vocab = Vocab::build(&spec.alphabet)?;
    let manifest_path = dir.join("manifest.jsonl");
    let reader = BufReader::new(File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    let mut corpus = Corpus {
        spec,
        src_vocab,
        tgt_vocab,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)?;
        if translate_oracle(&rec.src, &corpus.spec.alphabet)? != rec.tgt {
            return Err(Error::Format(format!(
                "{} sample {}: target is not the translation of the source",
                rec.split.name(),
                rec.index
            )));
        }
        let image = read_image(&dir.join(&rec.image))?;
        if image.width != super::GLYPH_WIDTH * rec.src.chars().count() {
            return Err(Error::Format(format!(
                "{}: width {} does not match source length",
                rec.image, image.width
            )));
        }
        let sample = TripleSample {
            split: rec.split,
            index: rec.index,
            src_ids: corpus.src_vocab.encode_with_bounds(&rec.src)?,
            tgt_ids: corpus.tgt_vocab.encode_with_bounds(&rec.tgt)?,
            src: rec.src,
            tgt: rec.tgt,
            image,
        };
        match sample.split {
            Split::Train => corpus.train.push(sample),
            Split::Valid => corpus.valid.push(sample),
            Split::Test => corpus.test.push(sample),
        }
    }
    for split in Split::ALL {
        let v = match split {
            Split::Train => &mut corpus.train,
            Split::Valid => &mut corpus.valid,
            Split::Test => &mut corpus.test,
        };
        v.sort_by_key(|s| s.index);
        if v.iter().enumerate().any(|(i, s)| s.index != i) {
            return Err(Error::Format(format!("{} split indices are not contiguous", split.name())));
        }
    }
    if corpus.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

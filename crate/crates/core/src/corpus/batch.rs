use super::{TextImage, TripleSample, BOS, EOS};
use crate::error::{Error, Result};

/// Right-padded id sequences with a validity mask, row-major `[batch, len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedSeq {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl PaddedSeq {
    pub fn from_rows(rows: &[Vec<u32>], pad_id: u32) -> Self {
        let len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * len);
        let mut mask = Vec::with_capacity(rows.len() * len);
        for r in rows {
            ids.extend_from_slice(r);
            mask.extend(std::iter::repeat_n(true, r.len()));
            ids.extend(std::iter::repeat_n(pad_id, len - r.len()));
            mask.extend(std::iter::repeat_n(false, len - r.len()));
        }
        Self { ids, mask, batch: rows.len(), len }
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.mask.chunks(self.len.max(1)).map(|m| m.iter().filter(|&&v| v).count()).collect()
    }
}

/// Images padded on the right with zero columns, `[batch, height, width]`
/// with a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub pixels: Vec<f32>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Unpadded width of each image.
    pub widths: Vec<usize>,
}

impl ImageBatch {
    pub fn from_images(images: &[&TextImage]) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyBatch)?;
        let height = first.height;
        let width = images.iter().map(|i| i.width).max().unwrap_or(0);
        let mut pixels = vec![0.0; images.len() * height * width];
        for (b, img) in images.iter().enumerate() {
            if img.height != height || img.channels != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "image {b} is {}x{}x{}, expected height {height} and one channel",
                    img.height, img.width, img.channels
                )));
            }
            for row in 0..height {
                let dst = (b * height + row) * width;
                pixels[dst..dst + img.width].copy_from_slice(&img.pixels[row * img.width..(row + 1) * img.width]);
            }
        }
        Ok(Self { pixels, batch: images.len(), height, width, widths: images.iter().map(|i| i.width).collect() })
    }
}

/// Padded batch of triples.
///
/// Source sequences fed to the text encoder carry no BOS/EOS so that their
/// length matches the image feature length; decoder inputs are `BOS ...`
/// and decoder targets `... EOS`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: ImageBatch,
    pub src: PaddedSeq,
    pub src_in: PaddedSeq,
    pub src_out: PaddedSeq,
    pub tgt_in: PaddedSeq,
    pub tgt_out: PaddedSeq,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Splits `BOS x EOS` into decoder input `BOS x` and target `x EOS`.
pub(crate) fn shift(ids: &[u32]) -> (Vec<u32>, Vec<u32>) {
    debug_assert!(ids.first() == Some(&BOS) && ids.last() == Some(&EOS));
    (ids[..ids.len() - 1].to_vec(), ids[1..].to_vec())
}

pub fn batch(samples: &[&TripleSample], pad_id: u32) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let images = ImageBatch::from_images(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    let raw: Vec<Vec<u32>> = samples.iter().map(|s| s.src_ids[1..s.src_ids.len() - 1].to_vec()).collect();
    let (src_in, src_out): (Vec<_>, Vec<_>) = samples.iter().map(|s| shift(&s.src_ids)).unzip();
    let (tgt_in, tgt_out): (Vec<_>, Vec<_>) = samples.iter().map(|s| shift(&s.tgt_ids)).unzip();
    Ok(Batch {
        indices: samples.iter().map(|s| s.index).collect(),
        images,
        src: PaddedSeq::from_rows(&raw, pad_id),
        src_in: PaddedSeq::from_rows(&src_in, pad_id),
        src_out: PaddedSeq::from_rows(&src_out, pad_id),
        tgt_in: PaddedSeq::from_rows(&tgt_in, pad_id),
        tgt_out: PaddedSeq::from_rows(&tgt_out, pad_id),
    })
}

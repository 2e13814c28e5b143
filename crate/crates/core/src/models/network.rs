use super::layers::{attention_specs, layer_norm_specs, linear_specs, Ctx};
use super::params::{Init, ParamSpec, ParamStore};
use super::{FeatureSeq, ModelConfig, ModelKind, StepDistributions};
use crate::autograd::{AttnMask, Scalar, Tensor};
use crate::corpus::{mix64, ImageBatch, PaddedSeq, BOS, IMAGE_HEIGHT};
use crate::error::{Error, Result};

/// Width reduction of the image encoder: three stride-2 blocks.
pub const WIDTH_REDUCTION: usize = 8;

#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Image(&'a ImageBatch),
    Text(&'a PaddedSeq),
}

/// Output of the encoder side of a model.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Image features for image models, text embeddings for the MT model.
    pub local: FeatureSeq,
    /// Sequential-encoder output, attended to by the decoder.
    pub memory: FeatureSeq,
}

/// Encoder-decoder network of one of the three kinds.
///
/// The struct only describes the architecture; weights live in a
/// [`ParamStore`] passed alongside each forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub kind: ModelKind,
    pub config: ModelConfig,
}

impl Seq2Seq {
    pub fn new(kind: ModelKind, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kind, config })
    }

    pub fn out_vocab(&self) -> usize {
        match self.kind {
            ModelKind::Tir => self.config.src_vocab,
            ModelKind::Timt | ModelKind::Mt => self.config.tgt_vocab,
        }
    }

    fn conv_channels(&self) -> [usize; 3] {
        let d = self.config.d_model;
        [(d / 4).max(2), (d / 2).max(2), d]
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let d = c.d_model;
        let mut s = Vec::new();
        match self.kind {
            ModelKind::Timt | ModelKind::Tir => {
                let mut cin = 1;
                for (i, cout) in self.conv_channels().into_iter().enumerate() {
                    linear_specs(&mut s, &format!("image.conv{}", i + 1), 4 * cin, cout);
                    layer_norm_specs(&mut s, &format!("image.conv{}.ln", i + 1), cout);
                    cin = cout;
                }
            }
            ModelKind::Mt => s.push(ParamSpec::new("text.embed", vec![c.src_vocab, d], Init::Uniform(1.0))),
        }
        for l in 0..c.n_layers {
            let p = format!("enc.{l}");
            layer_norm_specs(&mut s, &format!("{p}.ln1"), d);
            attention_specs(&mut s, &format!("{p}.attn"), d);
            layer_norm_specs(&mut s, &format!("{p}.ln2"), d);
            linear_specs(&mut s, &format!("{p}.ff1"), d, c.d_ff);
            linear_specs(&mut s, &format!("{p}.ff2"), c.d_ff, d);
        }
        layer_norm_specs(&mut s, "enc.ln", d);
        s.push(ParamSpec::new("dec.embed", vec![self.out_vocab(), d], Init::Uniform(1.0)));
        for l in 0..c.n_layers {
            let p = format!("dec.{l}");
            layer_norm_specs(&mut s, &format!("{p}.ln1"), d);
            attention_specs(&mut s, &format!("{p}.self"), d);
            layer_norm_specs(&mut s, &format!("{p}.ln2"), d);
            attention_specs(&mut s, &format!("{p}.cross"), d);
            layer_norm_specs(&mut s, &format!("{p}.ln3"), d);
            linear_specs(&mut s, &format!("{p}.ff1"), d, c.d_ff);
            linear_specs(&mut s, &format!("{p}.ff2"), c.d_ff, d);
        }
        layer_norm_specs(&mut s, "dec.ln", d);
        linear_specs(&mut s, "dec.out", d, self.out_vocab());
        s
    }

    pub fn init_params<T: Scalar>(&self) -> ParamStore<T> {
        let salt = match self.kind {
            ModelKind::Timt => 0x7469_6d74,
            ModelKind::Tir => 0x7469_72,
            ModelKind::Mt => 0x6d74,
        };
        ParamStore::init(&self.param_specs(), mix64(self.config.seed ^ salt))
    }

    /// Exact number of scalar trainable parameters.
    pub fn count_params(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Strided patch convolutions: width and height halve three times, then
    /// the remaining height is averaged away, leaving one position per
    /// `WIDTH_REDUCTION` columns.
    pub fn image_encode<T: Scalar>(&self, cx: &mut Ctx<'_, T>, images: &ImageBatch) -> Result<FeatureSeq> {
        if !matches!(self.kind, ModelKind::Timt | ModelKind::Tir) {
            return Err(Error::InvalidArgument("text model has no image encoder".into()));
        }
        if images.height != IMAGE_HEIGHT {
            return Err(Error::ShapeMismatch(format!("image height {} != {IMAGE_HEIGHT}", images.height)));
        }
        if images.width == 0 || images.width % WIDTH_REDUCTION != 0 {
            return Err(Error::ShapeMismatch(format!(
                "image width {} is not a positive multiple of {WIDTH_REDUCTION}",
                images.width
            )));
        }
        if images.pixels.len() != images.batch * images.height * images.width {
            return Err(Error::ShapeMismatch("image buffer does not match [B,H,W] with one channel".into()));
        }
        let (b, w) = (images.batch, images.width);
        let pixels: Vec<T> = images.pixels.iter().map(|&p| T::from_f64_lossy(p as f64)).collect();
        let mut x = cx.g.constant(Tensor::new(vec![b, IMAGE_HEIGHT, w, 1], pixels));
        for i in 1..=3 {
            x = cx.g.space_to_depth(x);
            x = cx.linear(&format!("image.conv{i}"), x);
            x = cx.g.relu(x);
            x = cx.layer_norm(&format!("image.conv{i}.ln"), x);
        }
        let var = cx.g.mean_axis1(x);
        let len = w / WIDTH_REDUCTION;
        let mut mask = Vec::with_capacity(b * len);
        for &iw in &images.widths {
            let valid = iw.div_ceil(WIDTH_REDUCTION);
            mask.extend((0..len).map(|l| l < valid));
        }
        Ok(FeatureSeq { var, mask, batch: b, len, dim: self.config.d_model })
    }

    /// Embedding lookup, one row per token.
    pub fn text_encode<T: Scalar>(&self, cx: &mut Ctx<'_, T>, src: &PaddedSeq) -> Result<FeatureSeq> {
        if self.kind != ModelKind::Mt {
            return Err(Error::InvalidArgument("image model has no text encoder".into()));
        }
        if let Some(&id) = src.ids.iter().find(|&&id| id as usize >= self.config.src_vocab) {
            return Err(Error::IdOutOfRange { id, size: self.config.src_vocab });
        }
        let table = cx.param("text.embed");
        let ids = src.ids.iter().map(|&i| i as usize).collect();
        let var = cx.g.embedding(table, ids, vec![src.batch, src.len]);
        Ok(FeatureSeq { var, mask: src.mask.clone(), batch: src.batch, len: src.len, dim: self.config.d_model })
    }

    /// Pre-norm transformer encoder with sinusoidal positions at the input.
    pub fn sequential_encode<T: Scalar>(&self, cx: &mut Ctx<'_, T>, input: &FeatureSeq) -> Result<FeatureSeq> {
        let d = self.config.d_model;
        if input.dim != d || cx.g.shape(input.var) != [input.batch, input.len, d] {
            return Err(Error::ShapeMismatch(format!(
                "sequential encoder expects [B, L, {d}], got {:?}",
                cx.g.shape(input.var)
            )));
        }
        let mut x = input.var;
        if self.config.positional_encoding {
            x = cx.add_positions(x);
        }
        x = cx.dropout(x);
        let mask = AttnMask { key_valid: Some(input.mask.clone()), causal: false };
        for l in 0..self.config.n_layers {
            let h = cx.layer_norm(&format!("enc.{l}.ln1"), x);
            let h = cx.multi_head_attention(&format!("enc.{l}.attn"), h, h, self.config.n_heads, &mask);
            let h = cx.dropout(h);
            x = cx.g.add(x, h);
            let h = cx.layer_norm(&format!("enc.{l}.ln2"), x);
            let h = cx.feed_forward(&format!("enc.{l}"), h);
            let h = cx.dropout(h);
            x = cx.g.add(x, h);
        }
        let var = cx.layer_norm("enc.ln", x);
        Ok(FeatureSeq { var, ..input.clone() })
    }

    pub fn encode<T: Scalar>(&self, cx: &mut Ctx<'_, T>, input: ModelInput<'_>) -> Result<Encoded> {
        let local = match input {
            ModelInput::Image(images) => self.image_encode(cx, images)?,
            ModelInput::Text(src) => self.text_encode(cx, src)?,
        };
        let memory = self.sequential_encode(cx, &local)?;
        Ok(Encoded { local, memory })
    }

    /// Causal decoder over a `BOS`-initial prefix, cross-attending to
    /// `memory`; row `i` of the result conditions on prefix positions `<= i`.
    pub fn decode_teacher_forced<T: Scalar>(
        &self,
        cx: &mut Ctx<'_, T>,
        memory: &FeatureSeq,
        prefix: &PaddedSeq,
    ) -> Result<StepDistributions> {
        let vocab = self.out_vocab();
        if prefix.len == 0 || prefix.batch == 0 {
            return Err(Error::InvalidArgument("decoder prefix is empty".into()));
        }
        if prefix.batch != memory.batch {
            return Err(Error::ShapeMismatch(format!(
                "prefix batch {} != memory batch {}",
                prefix.batch, memory.batch
            )));
        }
        if let Some(&id) = prefix.ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::IdOutOfRange { id, size: vocab });
        }
        if (0..prefix.batch).any(|b| prefix.row(b)[0] != BOS) {
            return Err(Error::InvalidArgument("decoder prefix must start with BOS".into()));
        }
        let table = cx.param("dec.embed");
        let ids = prefix.ids.iter().map(|&i| i as usize).collect();
        let mut x = cx.g.embedding(table, ids, vec![prefix.batch, prefix.len]);
        if self.config.positional_encoding {
            x = cx.add_positions(x);
        }
        x = cx.dropout(x);
        let self_mask = AttnMask { key_valid: Some(prefix.mask.clone()), causal: true };
        let cross_mask = AttnMask { key_valid: Some(memory.mask.clone()), causal: false };
        let heads = self.config.n_heads;
        for l in 0..self.config.n_layers {
            let h = cx.layer_norm(&format!("dec.{l}.ln1"), x);
            let h = cx.multi_head_attention(&format!("dec.{l}.self"), h, h, heads, &self_mask);
            let h = cx.dropout(h);
            x = cx.g.add(x, h);
            let h = cx.layer_norm(&format!("dec.{l}.ln2"), x);
            let h = cx.multi_head_attention(&format!("dec.{l}.cross"), h, memory.var, heads, &cross_mask);
            let h = cx.dropout(h);
            x = cx.g.add(x, h);
            let h = cx.layer_norm(&format!("dec.{l}.ln3"), x);
            let h = cx.feed_forward(&format!("dec.{l}"), h);
            let h = cx.dropout(h);
            x = cx.g.add(x, h);
        }
        let x = cx.layer_norm("dec.ln", x);
        let logits = cx.linear("dec.out", x);
        Ok(StepDistributions { logits, mask: prefix.mask.clone(), batch: prefix.batch, steps: prefix.len, vocab })
    }
}

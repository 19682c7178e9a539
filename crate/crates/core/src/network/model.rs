use crate::blocks::{ChannelNorm, Conv, Pass, PatchEmbed, PatchMerge, Scvss, Wmb};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::{ConvSpec, ResampleMode, Scalar, Tape, Tensor, Var};

use super::ModelConfig;

/// Down-sampling layer at the start of an encoder stage.
#[derive(Clone, Debug)]
enum Entry {
    Stem(Conv),
    Embed(PatchEmbed),
    Merge(PatchMerge),
}

#[derive(Clone, Debug)]
struct EncoderStage {
    entry: Entry,
    blocks: Vec<Scvss>,
    wmb: Option<Wmb>,
}

/// 3x3 conv, layer norm over channels, GELU.
#[derive(Clone, Debug)]
struct ConvNormAct {
    conv: Conv,
    norm: ChannelNorm,
}

impl ConvNormAct {
    fn new(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, eps: f64) -> Self {
        pb.nested(name, |pb| ConvNormAct { conv: Conv::same(pb, "conv", cin, cout, 3), norm: ChannelNorm::new(pb, "norm", cout, eps) })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        let y = self.norm.forward_nchw(tape, p, y)?;
        tape.gelu(y)
    }
}

/// Nearest x2, 3x3 conv to the skip width, concat with the 1x1-aligned skip,
/// two conv-norm-GELU layers.
#[derive(Clone, Debug)]
struct UpStage {
    up_conv: Conv,
    skip_conv: Conv,
    fuse1: ConvNormAct,
    fuse2: ConvNormAct,
    wmb: Option<Wmb>,
    aux_head: Option<Conv>,
}

/// Upsample to input size, two 3x3 conv + GELU, 1x1 conv to class logits.
#[derive(Clone, Debug)]
struct FinalHead {
    conv1: Conv,
    conv2: Conv,
    classify: Conv,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct SegVars {
    /// `[N, num_classes, H, W]` logits.
    pub main: Var,
    /// Logits at `H/2^k` for k = 1..=4, finest first. Empty without deep supervision.
    pub aux: Vec<Var>,
    /// Encoder stage outputs, stage 1 first.
    pub encoder: Vec<Var>,
}

/// Concrete outputs of an evaluation-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SegOutput<T: Scalar = f32> {
    pub main: Tensor<T>,
    pub aux: Vec<Tensor<T>>,
}

/// Layer structure of the encoder-decoder; holds parameter ids only.
#[derive(Clone, Debug)]
pub struct Architecture {
    encoder: Vec<EncoderStage>,
    bottleneck_wmb: Option<Wmb>,
    decoder: Vec<UpStage>,
    head: FinalHead,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig, pb: &mut ParamBuilder) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.stage_dims;
        let eps = cfg.norm_eps;
        let rates = cfg.drop_path_schedule();
        let mut rate_iter = rates.into_iter();
        let mut encoder = Vec::with_capacity(5);
        for s in 0..5 {
            let name = format!("encoder{}", s + 1);
            let stage = pb.nested(name, |pb| {
                let entry = match s {
                    0 => Entry::Stem(Conv::new(pb, "stem", cfg.in_channels, d[0], 7, ConvSpec::new(2, 3))),
                    1 => Entry::Embed(PatchEmbed::new(pb, "patch_embed", d[0], d[1], eps)),
                    _ => Entry::Merge(PatchMerge::new(pb, "patch_merge", d[s - 1], d[s], eps)),
                };
                let count = if s == 0 { 0 } else { cfg.scvss_counts[s - 1] };
                let blocks = (0..count)
                    .map(|b| {
                        let bc = cfg.block(s, rate_iter.next().unwrap_or(0.0));
                        Scvss::new(pb, &format!("scvss{b}"), &bc, cfg.snake_enabled)
                    })
                    .collect();
                let wmb = cfg.wmb_encoder_stages.contains(&(s + 1)).then(|| Wmb::new(pb, "wmb", &cfg.block(s, 0.0)));
                EncoderStage { entry, blocks, wmb }
            });
            encoder.push(stage);
        }
        let bottleneck_wmb =
            cfg.wmb_decoder_stages.contains(&5).then(|| pb.nested("decoder5", |pb| Wmb::new(pb, "wmb", &cfg.block(4, 0.0))));
        let mut decoder = Vec::with_capacity(4);
        for s in (0..4).rev() {
            let stage = pb.nested(format!("decoder{}", s + 1), |pb| UpStage {
                up_conv: Conv::same(pb, "up_conv", d[s + 1], d[s], 3),
                skip_conv: Conv::same(pb, "skip_conv", d[s], d[s], 1),
                fuse1: ConvNormAct::new(pb, "fuse1", 2 * d[s], d[s], eps),
                fuse2: ConvNormAct::new(pb, "fuse2", d[s], d[s], eps),
                wmb: cfg.wmb_decoder_stages.contains(&(s + 1)).then(|| Wmb::new(pb, "wmb", &cfg.block(s, 0.0))),
                aux_head: cfg.deep_supervision.then(|| Conv::same(pb, "aux_head", d[s], cfg.num_classes, 1)),
            });
            decoder.push(stage);
        }
        let head = pb.nested("head", |pb| FinalHead {
            conv1: Conv::same(pb, "conv1", d[0], d[0], 3),
            conv2: Conv::same(pb, "conv2", d[0], d[0], 3),
            classify: Conv::same(pb, "classify", d[0], cfg.num_classes, 1),
        });
        Ok(Architecture { encoder, bottleneck_wmb, decoder, head })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var, pass: &mut Pass, with_aux: bool) -> Result<SegVars> {
        let mut h = x;
        let mut skips = Vec::with_capacity(5);
        for (s, stage) in self.encoder.iter().enumerate() {
            tape.push_scope(format!("encoder{}", s + 1));
            h = match &stage.entry {
                Entry::Stem(conv) => conv.forward(tape, p, h)?,
                Entry::Embed(pe) => pe.forward(tape, p, h)?,
                Entry::Merge(pm) => pm.forward(tape, p, h)?,
            };
            for (b, block) in stage.blocks.iter().enumerate() {
                tape.push_scope(format!("scvss{b}"));
                h = block.forward(tape, p, h, pass)?;
                tape.pop_scope();
            }
            if let Some(wmb) = &stage.wmb {
                tape.push_scope("wmb");
                h = wmb.forward(tape, p, h)?;
                tape.pop_scope();
            }
            tape.pop_scope();
            skips.push(h);
        }
        if let Some(wmb) = &self.bottleneck_wmb {
            tape.push_scope("decoder5.wmb");
            h = wmb.forward(tape, p, h)?;
            tape.pop_scope();
        }

        let mut aux = Vec::new();
        for (k, stage) in self.decoder.iter().enumerate() {
            let s = 3 - k;
            tape.push_scope(format!("decoder{}", s + 1));
            let up = tape.resample2d(h, ResampleMode::Nearest)?;
            let up = stage.up_conv.forward(tape, p, up)?;
            let skip = stage.skip_conv.forward(tape, p, skips[s])?;
            let cat = tape.concat(&[up, skip], 1)?;
            h = stage.fuse1.forward(tape, p, cat)?;
            h = stage.fuse2.forward(tape, p, h)?;
            if let Some(wmb) = &stage.wmb {
                h = wmb.forward(tape, p, h)?;
            }
            if let (true, Some(head)) = (with_aux, &stage.aux_head) {
                aux.push(head.forward(tape, p, h)?);
            }
            tape.pop_scope();
        }
        aux.reverse();

        tape.push_scope("head");
        let y = tape.resample2d(h, ResampleMode::Nearest)?;
        let y = self.head.conv1.forward(tape, p, y)?;
        let y = tape.gelu(y)?;
        let y = self.head.conv2.forward(tape, p, y)?;
        let y = tape.gelu(y)?;
        let main = self.head.classify.forward(tape, p, y)?;
        tape.pop_scope();
        Ok(SegVars { main, aux, encoder: skips })
    }
}

/// Configured architecture plus its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Initialises every parameter from `seed`: truncated normal (std 0.02)
    /// for conv and linear weights, zero biases, unit/zero norm affines.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut pb = ParamBuilder::seeded(seed);
        let arch = Architecture::new(config, &mut pb)?;
        Ok(Model { config: config.clone(), arch, params: pb.finish()? })
    }

    /// Same structure with every parameter zero; filled in by a loader.
    pub fn skeleton(config: &ModelConfig) -> Result<Self> {
        let mut pb = ParamBuilder::zeroed();
        let arch = Architecture::new(config, &mut pb)?;
        Ok(Model { config: config.clone(), arch, params: pb.finish()? })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), arch: self.arch.clone(), params: self.params.cast() }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [h, w] = self.config.input_size;
        match shape {
            &[_, c, hh, ww] if c == self.config.in_channels && hh == h && ww == w => Ok(()),
            _ => Err(Error::shape(
                "model_forward",
                format!("expected [N, {}, {h}, {w}], got {shape:?}", self.config.in_channels),
            )),
        }
    }

    /// Records a forward pass. Auxiliary logits are produced when the model
    /// was built with deep supervision and `with_aux` is set.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, pass: &mut Pass, with_aux: bool) -> Result<(Bound, SegVars)> {
        self.check_input(tape.shape(x))?;
        let bound = self.params.bind(tape);
        let vars = self.arch.forward(tape, &bound, x, pass, with_aux)?;
        Ok((bound, vars))
    }

    /// Evaluation-mode logits for a batch `[N, in_channels, H, W]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<SegOutput<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (_, vars) = self.forward(&mut tape, xv, &mut Pass::eval(), true)?;
        Ok(SegOutput { main: tape.value(vars.main).clone(), aux: vars.aux.iter().map(|&v| tape.value(v).clone()).collect() })
    }

    /// Per-pixel argmax of the main logits, `[N, H, W]` class ids.
    pub fn segment(&self, x: &Tensor<T>) -> Result<Vec<Vec<u8>>> {
        let out = self.predict(x)?;
        Ok(argmax_classes(&out.main))
    }
}

/// Class with the largest logit per pixel (first on ties), one vector per sample.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<u8>> {
    let (n, k, h, w) = logits.dims4().expect("logits are [N, K, H, W]");
    let hw = h * w;
    (0..n)
        .map(|b| {
            (0..hw)
                .map(|i| {
                    let mut best = 0;
                    for c in 1..k {
                        if logits.data()[(b * k + c) * hw + i] > logits.data()[(b * k + best) * hw + i] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

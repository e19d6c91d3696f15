//! Dual-encoder segmentation network.
//!
//! An RGB encoder and a grayscale encoder (same architecture, fed the luma
//! plane replicated to three channels) each produce four feature stages.
//! The three deepest stages are fused by [`BswcaBlock`]s and decoded
//! coarse-to-fine with [`CdfBlock`]s; a 1×1 head emits one logit map at
//! quarter resolution, which is bilinearly resized to the input size.

mod bswca;
mod cdf;
mod params;
mod res2;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bswca::BswcaBlock;
pub use cdf::{cdf_receptive_field, CdfBlock, CDF_DILATIONS};
pub use params::{AttnLayer, Bound, ConvLayer, NormLayer, ParamId, ParamStore};
pub use res2::Res2Block;

use crate::contrast::{BinaryMask, RgbImage, LUMA_WEIGHTS};
use crate::error::{Error, Result};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{ConvSpec, Tape, Tensor, Var};
use params::Builder;

/// Structural variants used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    /// Grayscale encoder and fusion removed.
    RgbOnly,
    /// Fusion by elementwise addition instead of BS-WCA.
    AddFusion,
    /// Each CDF block replaced by a single 3×3 convolution.
    NoCdf,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::RgbOnly,
        AblationMode::AddFusion,
        AblationMode::NoCdf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::RgbOnly => "rgb_only",
            AblationMode::AddFusion => "add_fusion",
            AblationMode::NoCdf => "no_cdf",
        }
    }

    fn has_gray(self) -> bool {
        self != AblationMode::RgbOnly
    }

    fn has_attention(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoCdf)
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown ablation mode '{s}' (expected full, rgb_only, add_fusion or no_cdf)"
                ))
            })
    }
}

/// Model topology. Stored in checkpoints so they are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel width of each encoder stage.
    pub widths: Vec<usize>,
    /// Res2Net scale `s`.
    pub scale: usize,
    /// Attention window on sub-band maps.
    pub window: usize,
    pub heads: usize,
    pub decoder_width: usize,
    pub mode: AblationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            scale: 4,
            window: 4,
            heads: 4,
            decoder_width: 32,
            mode: AblationMode::Full,
        }
    }
}

/// Number of top encoder stages the decoder consumes.
const DECODED_STAGES: usize = 3;

impl ModelConfig {
    pub fn with_mode(mut self, mode: AblationMode) -> Self {
        self.mode = mode;
        self
    }

    /// Input height and width must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        1 << (self.widths.len() + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < DECODED_STAGES {
            return Err(Error::InvalidArgument(format!(
                "need at least {DECODED_STAGES} encoder stages, got {}",
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) || self.decoder_width == 0 {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }

    fn diff(&self, found: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        let mut field = |name: &str, a: String, b: String| {
            if a != b {
                out.push(format!("{name}: expected {a}, found {b}"));
            }
        };
        field("widths", format!("{:?}", self.widths), format!("{:?}", found.widths));
        field("scale", self.scale.to_string(), found.scale.to_string());
        field("window", self.window.to_string(), found.window.to_string());
        field("heads", self.heads.to_string(), found.heads.to_string());
        field("decoder_width", self.decoder_width.to_string(), found.decoder_width.to_string());
        field("mode", self.mode.to_string(), found.mode.to_string());
        out
    }
}

#[derive(Debug, Clone)]
struct Stage {
    down: ConvLayer,
    block: Res2Block,
}

#[derive(Debug, Clone)]
struct Encoder {
    stem: ConvLayer,
    stem_norm: NormLayer,
    stages: Vec<Stage>,
}

impl Encoder {
    fn build(b: &mut Builder, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let stem = b.conv(&format!("{name}.stem"), 3, cfg.widths[0], 3, ConvSpec::same(1));
        let stem_norm = b.norm(&format!("{name}.stem_norm"), cfg.widths[0]);
        let mut stages = Vec::with_capacity(cfg.widths.len());
        let mut prev = cfg.widths[0];
        for (i, &w) in cfg.widths.iter().enumerate() {
            let sn = format!("{name}.s{}", i + 1);
            stages.push(Stage {
                down: b.conv(&format!("{sn}.down"), prev, w, 2, ConvSpec::strided(2, 0)),
                block: Res2Block::build(b, &format!("{sn}.res2"), w, cfg.scale)?,
            });
            prev = w;
        }
        Ok(Self { stem, stem_norm, stages })
    }

    /// Output of every stage, finest first.
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let h = self.stem.forward(tape, p, x)?;
        let mut h = self.stem_norm.activate(tape, p, h)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let d = s.down.forward(tape, p, h)?;
            h = s.block.forward(tape, p, d)?;
            outs.push(h);
        }
        Ok(outs)
    }
}

#[derive(Debug, Clone)]
enum Refine {
    Cdf(CdfBlock),
    Conv(ConvLayer),
}

impl Refine {
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Refine::Cdf(b) => b.forward(tape, p, x),
            Refine::Conv(c) => c.forward(tape, p, x),
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStep {
    reduce: ConvLayer,
    norm: NormLayer,
    refine: Refine,
}

#[derive(Debug, Clone)]
struct Decoder {
    /// Deepest stage first.
    steps: Vec<DecoderStep>,
    head: ConvLayer,
}

impl Decoder {
    fn build(b: &mut Builder, cfg: &ModelConfig) -> Self {
        let d = cfg.decoder_width;
        let n = cfg.widths.len();
        let steps = (0..DECODED_STAGES)
            .map(|k| {
                let stage = n - k;
                let cin = cfg.widths[stage - 1] + if k == 0 { 0 } else { d };
                let name = format!("dec.s{stage}");
                let reduce = b.conv(&format!("{name}.reduce"), cin, d, 1, ConvSpec::pointwise());
                let norm = b.norm(&format!("{name}.norm"), d);
                let refine = if cfg.mode == AblationMode::NoCdf {
                    Refine::Conv(b.conv(&format!("{name}.conv"), d, d, 3, ConvSpec::same(1)))
                } else {
                    Refine::Cdf(CdfBlock::build(b, &format!("{name}.cdf"), d))
                };
                DecoderStep { reduce, norm, refine }
            })
            .collect();
        let head = b.conv("head", d, 1, 1, ConvSpec::pointwise());
        Self { steps, head }
    }

    /// `fused` holds the decoded stages, deepest first.
    fn forward(&self, tape: &mut Tape, p: &Bound, fused: &[Var]) -> Result<Var> {
        let mut h: Option<Var> = None;
        for (step, &f) in self.steps.iter().zip(fused) {
            let x = match h {
                None => f,
                Some(prev) => {
                    let up = tape.upsample_nearest_2x(prev)?;
                    tape.concat_channels(&[up, f])?
                }
            };
            let r = step.reduce.forward(tape, p, x)?;
            let r = step.norm.activate(tape, p, r)?;
            h = Some(step.refine.forward(tape, p, r)?);
        }
        self.head.forward(tape, p, h.expect("decoder has steps"))
    }
}

/// Parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub rgb_encoder: usize,
    pub gray_encoder: usize,
    pub fusion: usize,
    pub decoder: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    config: ModelConfig,
    seed: u64,
    params: ParamStore,
    rgb: Encoder,
    gray: Option<Encoder>,
    /// Fusion blocks for the decoded stages, deepest first.
    fusion: Vec<BswcaBlock>,
    decoder: Decoder,
}

impl SegModel {
    /// Freshly initialised model. Each parameter's initial value depends only
    /// on `seed` and its name, so variants share values for shared names.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut b = Builder { store: &mut params, seed };
        let rgb = Encoder::build(&mut b, "rgb", &config)?;
        let gray = if config.mode.has_gray() {
            Some(Encoder::build(&mut b, "gray", &config)?)
        } else {
            None
        };
        let n = config.widths.len();
        let mut fusion = Vec::new();
        if config.mode.has_attention() {
            for k in 0..DECODED_STAGES {
                let stage = n - k;
                fusion.push(BswcaBlock::build(
                    &mut b,
                    &format!("fuse.s{stage}"),
                    config.widths[stage - 1],
                    config.heads,
                    config.window,
                )?);
            }
        }
        let decoder = Decoder::build(&mut b, &config);
        Ok(Self {
            config,
            seed,
            params,
            rgb,
            gray,
            fusion,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> AblationMode {
        self.config.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        let mut out = ParamBreakdown {
            rgb_encoder: 0,
            gray_encoder: 0,
            fusion: 0,
            decoder: 0,
            total: 0,
        };
        for (name, t) in self.params.iter() {
            let slot = match name.split('.').next() {
                Some("rgb") => &mut out.rgb_encoder,
                Some("gray") => &mut out.gray_encoder,
                Some("fuse") => &mut out.fusion,
                _ => &mut out.decoder,
            };
            *slot += t.numel();
            out.total += t.numel();
        }
        out
    }

    /// Copy of this model restructured for `mode`. Parameters whose names
    /// exist in both variants are carried over; new ones are initialised
    /// from the original seed.
    pub fn ablate(&self, mode: AblationMode) -> Result<SegModel> {
        let mut m = SegModel::new(self.config.clone().with_mode(mode), self.seed)?;
        for (name, t) in self.params.iter() {
            if let Some(slot) = m.params.by_name_mut(name) {
                if slot.shape() == t.shape() {
                    *slot = t.clone();
                }
            }
        }
        Ok(m)
    }

    /// Checks an `N×3×H×W` batch against the model's size rules.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, h, w) = match shape {
            [_, c, h, w] => (*c, *h, *w),
            _ => return Err(Error::Shape(format!("expected N×3×H×W input, got {shape:?}"))),
        };
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        let d = self.config.size_divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "input {h}x{w} is not divisible by {d}"
            )));
        }
        Ok(())
    }

    /// Logits `N×1×H×W` for images `x` (`N×3×H×W`), with parameters bound
    /// on `tape` as `p`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        self.check_input(&shape)?;
        let (h, w) = (shape[2], shape[3]);
        let n = self.config.widths.len();

        let rgb = self.rgb.forward(tape, p, x)?;
        let gray = match &self.gray {
            Some(enc) => {
                let g = tape.constant(gray_replicated(tape.value(x))?);
                Some(enc.forward(tape, p, g)?)
            }
            None => None,
        };
        let mut fused = Vec::with_capacity(DECODED_STAGES);
        for k in 0..DECODED_STAGES {
            let i = n - 1 - k;
            let f = match (&gray, self.config.mode) {
                (None, _) => rgb[i],
                (Some(g), AblationMode::AddFusion) => tape.add(rgb[i], g[i])?,
                (Some(g), _) => self.fusion[k].forward(tape, p, rgb[i], g[i])?,
            };
            fused.push(f);
        }
        let logits = self.decoder.forward(tape, p, &fused)?;
        tape.upsample_bilinear(logits, h, w)
    }

    /// Logits for a batch without recording gradients.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(images.clone());
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }

    /// Polyp probabilities `sigmoid(logits)` for a batch.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut t = self.logits(images)?;
        for v in t.data_mut() {
            *v = crate::tensor::sigmoid_scalar(*v);
        }
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            topology: serde_json::to_string(&self.config).expect("config serialises"),
            tensors: self
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint. With `expected`, the stored
    /// topology must equal it; any mismatch is reported field by field and
    /// parameter by parameter.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        let found: ModelConfig = serde_json::from_str(&ckpt.topology)
            .map_err(|e| Error::Checkpoint(format!("unreadable topology: {e}")))?;
        let config = match expected {
            Some(exp) if *exp != found => {
                let mut lines = exp.diff(&found);
                if let Ok(reference) = SegModel::new(exp.clone(), 0) {
                    lines.extend(shape_diff(&reference.params, &ckpt.tensors));
                }
                return Err(Error::Topology(lines.join("\n")));
            }
            _ => found,
        };
        let mut model = SegModel::new(config, 0)?;
        let lines = shape_diff(&model.params, &ckpt.tensors);
        if !lines.is_empty() {
            return Err(Error::Topology(lines.join("\n")));
        }
        for (name, t) in &ckpt.tensors {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}

fn shape_diff(expected: &ParamStore, found: &[(String, Tensor)]) -> Vec<String> {
    let mut lines = Vec::new();
    for (name, t) in expected.iter() {
        match found.iter().find(|(n, _)| n == name) {
            None => lines.push(format!("{name}: expected {:?}, missing", t.shape())),
            Some((_, f)) if f.shape() != t.shape() => lines.push(format!(
                "{name}: expected {:?}, found {:?}",
                t.shape(),
                f.shape()
            )),
            _ => {}
        }
    }
    for (name, f) in found {
        if expected.by_name(name).is_none() {
            lines.push(format!("{name}: unexpected, found {:?}", f.shape()));
        }
    }
    lines
}

/// Luma of an `N×3×H×W` batch, copied into all three channels.
pub fn gray_replicated(images: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = images.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let hw = h * w;
    let src = images.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        let base = b * 3 * hw;
        for i in 0..hw {
            let y: f64 = (0..3).map(|ch| LUMA_WEIGHTS[ch] * src[base + ch * hw + i]).sum();
            for ch in 0..3 {
                out[base + ch * hw + i] = y;
            }
        }
    }
    Tensor::new(&[n, 3, h, w], out)
}

/// Stacks images into an `N×3×H×W` tensor.
pub fn batch_images(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (h, w) = first.plane(0).dims();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.plane(0).dims() != (h, w) {
            return Err(Error::Dimension(format!(
                "batch mixes {h}x{w} and {:?} images",
                img.plane(0).dims()
            )));
        }
        for plane in img.planes() {
            data.extend_from_slice(plane.as_slice());
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Stacks masks into an `N×1×H×W` tensor of 0/1 values.
pub fn batch_masks(masks: &[&BinaryMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty mask batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Dimension(format!(
                "batch mixes {h}x{w} and {}x{} masks",
                m.height(),
                m.width()
            )));
        }
        data.extend(m.as_slice().iter().map(|&v| v as f64));
    }
    Tensor::new(&[masks.len(), 1, h, w], data)
}

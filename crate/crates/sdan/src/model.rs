//! The SDAN super-resolution network: StarConv, the star distillation module,
//! multi-shape multi-scale large-kernel attention, residual blocks, and the
//! shallow / fusion / reconstruction stages, plus parameter and FLOP ledgers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autograd::{
    add, concat_op, conv2d_op, gelu_op, mul, narrow_op, no_grad, pixel_norm_op, pixel_shuffle_op,
    Var,
};
use crate::config::{AttentionVariant, ModelConfig};
use crate::conv::ConvSpec;
use crate::data::ImageRgb;
use crate::error::{Error, Result};
use crate::tensor::{Elem, Shape, Tensor};

/// Epsilon of the per-pixel channel normalization.
pub const PIXEL_NORM_EPS: f64 = 1e-6;

/// Ordered registry of named parameters. Names are unique and enumerate
/// exactly the tensors stored in a checkpoint.
pub struct ParamSet<T: Elem> {
    entries: Vec<(String, Var<T>)>,
}

impl<T: Elem> ParamSet<T> {
    pub fn new() -> ParamSet<T> {
        ParamSet { entries: Vec::new() }
    }

    fn register(&mut self, name: String, value: Tensor<T>) -> Var<T> {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name {name}"
        );
        let var = Var::param(value);
        self.entries.push((name, var.clone()));
        var
    }

    pub fn entries(&self) -> &[(String, Var<T>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn vars(&self) -> Vec<Var<T>> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.entries.iter().map(|(n, v)| (n.clone(), v.value_clone())).collect()
    }

    pub fn total_elements(&self) -> u64 {
        self.entries.iter().map(|(_, v)| v.shape().numel() as u64).sum()
    }

    pub fn zero_grads(&self) {
        for (_, v) in &self.entries {
            v.zero_grad();
        }
    }
}

impl<T: Elem> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet::new()
    }
}

fn uniform_init<T: Elem>(shape: Shape, fan_in: usize, rng: &mut ChaCha12Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut data = Vec::with_capacity(shape.numel());
    for _ in 0..shape.numel() {
        data.push(T::from_f64(rng.gen_range(-bound..bound)));
    }
    Tensor::new(shape, data).expect("init shape")
}

/// Convolution layer with registered weight and bias.
pub struct ConvLayer<T: Elem> {
    weight: Var<T>,
    bias: Option<Var<T>>,
    spec: ConvSpec,
}

impl<T: Elem> ConvLayer<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut ChaCha12Rng,
    ) -> Result<ConvLayer<T>> {
        spec.validate()?;
        let fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
        let weight = params.register(format!("{name}.weight"), uniform_init(spec.weight_shape(), fan_in, rng));
        let bias = if spec.has_bias {
            let shape = Shape::new(1, spec.out_channels, 1, 1);
            Some(params.register(format!("{name}.bias"), uniform_init(shape, fan_in, rng)))
        } else {
            None
        };
        Ok(ConvLayer { weight, bias, spec })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        conv2d_op(x, &self.weight, self.bias.as_ref(), self.spec)
    }
}

/// Depth-wise conv feeding two point-wise branches fused by element-wise
/// multiplication, with a residual connection.
pub struct StarConv<T: Elem> {
    dw: ConvLayer<T>,
    proj_a: ConvLayer<T>,
    proj_b: ConvLayer<T>,
    proj_out: ConvLayer<T>,
}

impl<T: Elem> StarConv<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        channels: usize,
        kz: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<StarConv<T>> {
        Ok(StarConv {
            dw: ConvLayer::new(params, &format!("{prefix}.dw"), ConvSpec::depthwise(channels, kz, 1), rng)?,
            proj_a: ConvLayer::new(params, &format!("{prefix}.a"), ConvSpec::pointwise(channels, channels), rng)?,
            proj_b: ConvLayer::new(params, &format!("{prefix}.b"), ConvSpec::pointwise(channels, channels), rng)?,
            proj_out: ConvLayer::new(params, &format!("{prefix}.out"), ConvSpec::pointwise(channels, channels), rng)?,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let u = self.dw.forward(x)?;
        let a = gelu_op(&self.proj_a.forward(&u)?);
        let b = self.proj_b.forward(&u)?;
        let y = self.proj_out.forward(&mul(&a, &b)?)?;
        add(&y, x)
    }
}

/// Star distillation: three StarConv refinement steps, four 1x1 distillation
/// taps, concatenated and fused back to full width.
pub struct Sdm<T: Elem> {
    distill: Vec<ConvLayer<T>>,
    refine: Vec<StarConv<T>>,
    fuse: ConvLayer<T>,
}

impl<T: Elem> Sdm<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        channels: usize,
        distill_channels: usize,
        kz: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Sdm<T>> {
        let mut distill = Vec::with_capacity(4);
        for i in 1..=4 {
            distill.push(ConvLayer::new(
                params,
                &format!("{prefix}.d{i}"),
                ConvSpec::pointwise(channels, distill_channels),
                rng,
            )?);
        }
        let mut refine = Vec::with_capacity(3);
        for i in 1..=3 {
            refine.push(StarConv::new(params, &format!("{prefix}.s{i}"), channels, kz, rng)?);
        }
        let fuse = ConvLayer::new(
            params,
            &format!("{prefix}.fuse"),
            ConvSpec::pointwise(4 * distill_channels, channels),
            rng,
        )?;
        Ok(Sdm { distill, refine, fuse })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let d1 = self.distill[0].forward(x)?;
        let s1 = self.refine[0].forward(x)?;
        let d2 = self.distill[1].forward(&s1)?;
        let s2 = self.refine[1].forward(&s1)?;
        let d3 = self.distill[2].forward(&s2)?;
        let s3 = self.refine[2].forward(&s2)?;
        let d4 = self.distill[3].forward(&s3)?;
        self.fuse.forward(&concat_op(&[d1, d2, d3, d4])?)
    }
}

/// Multi-shape multi-scale large-kernel attention: the input is split into
/// four channel groups refined by horizontal/vertical strip chains and plain/
/// dilated square kernels, fused by a 1x1 conv into attention weights that
/// reweight the input.
pub struct MmLka<T: Elem> {
    strip_h: ConvLayer<T>,
    strip_h_d: ConvLayer<T>,
    strip_v: ConvLayer<T>,
    strip_v_d: ConvLayer<T>,
    square: ConvLayer<T>,
    square_d: ConvLayer<T>,
    fuse: ConvLayer<T>,
    group_channels: usize,
}

impl<T: Elem> MmLka<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        channels: usize,
        strip_kernel: usize,
        square_kernel: usize,
        dilation: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<MmLka<T>> {
        if channels % 4 != 0 {
            return Err(Error::config(format!(
                "attention requires channels divisible by 4, got {channels}"
            )));
        }
        let gc = channels / 4;
        let k = strip_kernel;
        let s = square_kernel;
        Ok(MmLka {
            strip_h: ConvLayer::new(params, &format!("{prefix}.strip_h"), ConvSpec::depthwise_strip(gc, 1, k, 1), rng)?,
            strip_h_d: ConvLayer::new(params, &format!("{prefix}.strip_h_d"), ConvSpec::depthwise_strip(gc, 1, k, dilation), rng)?,
            strip_v: ConvLayer::new(params, &format!("{prefix}.strip_v"), ConvSpec::depthwise_strip(gc, k, 1, 1), rng)?,
            strip_v_d: ConvLayer::new(params, &format!("{prefix}.strip_v_d"), ConvSpec::depthwise_strip(gc, k, 1, dilation), rng)?,
            square: ConvLayer::new(params, &format!("{prefix}.square"), ConvSpec::depthwise(gc, s, 1), rng)?,
            square_d: ConvLayer::new(params, &format!("{prefix}.square_d"), ConvSpec::depthwise(gc, s, dilation), rng)?,
            fuse: ConvLayer::new(params, &format!("{prefix}.fuse"), ConvSpec::pointwise(channels, channels), rng)?,
            group_channels: gc,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let gc = self.group_channels;
        let p0 = narrow_op(x, 0, gc)?;
        let p1 = narrow_op(x, gc, gc)?;
        let p2 = narrow_op(x, 2 * gc, gc)?;
        let p3 = narrow_op(x, 3 * gc, gc)?;
        let g1 = self.strip_h_d.forward(&self.strip_h.forward(&p0)?)?;
        let g2 = self.strip_v_d.forward(&self.strip_v.forward(&p1)?)?;
        let g3 = self.square.forward(&p2)?;
        let g4 = self.square_d.forward(&p3)?;
        let attn = self.fuse.forward(&concat_op(&[g1, g2, g3, g4])?)?;
        mul(&attn, x)
    }
}

/// Large-kernel attention via the DW5 -> DW-D5(d=3) -> 1x1 chain.
pub struct Lka13<T: Elem> {
    dw: ConvLayer<T>,
    dwd: ConvLayer<T>,
    pw: ConvLayer<T>,
}

impl<T: Elem> Lka13<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        channels: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Lka13<T>> {
        Ok(Lka13 {
            dw: ConvLayer::new(params, &format!("{prefix}.dw"), ConvSpec::depthwise(channels, 5, 1), rng)?,
            dwd: ConvLayer::new(params, &format!("{prefix}.dwd"), ConvSpec::depthwise(channels, 5, 3), rng)?,
            pw: ConvLayer::new(params, &format!("{prefix}.pw"), ConvSpec::pointwise(channels, channels), rng)?,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let attn = self.pw.forward(&self.dwd.forward(&self.dw.forward(x)?)?)?;
        mul(&attn, x)
    }
}

enum DistillStage<T: Elem> {
    Sdm(Sdm<T>),
    /// Ablation fallback: a single 3x3 conv of equal width plus GELU.
    Plain(ConvLayer<T>),
}

enum AttentionStage<T: Elem> {
    MmLka(MmLka<T>),
    Lka13(Lka13<T>),
    Identity,
}

/// Residual block: distillation stage, attention stage, 1x1 projection,
/// per-pixel channel normalization, and a skip connection.
pub struct Rsdam<T: Elem> {
    distill: DistillStage<T>,
    attention: AttentionStage<T>,
    proj: ConvLayer<T>,
    gamma: Var<T>,
    beta: Var<T>,
}

impl<T: Elem> Rsdam<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha12Rng,
    ) -> Result<Rsdam<T>> {
        let c = cfg.channels;
        let distill = if cfg.enable_sdm {
            DistillStage::Sdm(Sdm::new(
                params,
                &format!("{prefix}.sdm"),
                c,
                cfg.distill_channels,
                cfg.star_kernel,
                rng,
            )?)
        } else {
            DistillStage::Plain(ConvLayer::new(
                params,
                &format!("{prefix}.conv"),
                ConvSpec::dense(c, c, 3),
                rng,
            )?)
        };
        let attention = match cfg.attention {
            AttentionVariant::MmLka => AttentionStage::MmLka(MmLka::new(
                params,
                &format!("{prefix}.attn"),
                c,
                cfg.strip_kernel,
                cfg.square_kernel,
                cfg.dilation,
                rng,
            )?),
            AttentionVariant::Lka13 => {
                AttentionStage::Lka13(Lka13::new(params, &format!("{prefix}.attn"), c, rng)?)
            }
            AttentionVariant::None => AttentionStage::Identity,
        };
        let proj = ConvLayer::new(params, &format!("{prefix}.proj"), ConvSpec::pointwise(c, c), rng)?;
        let gamma = params.register(format!("{prefix}.norm.gamma"), Tensor::full(Shape::new(1, c, 1, 1), T::from_f64(1.0)));
        let beta = params.register(format!("{prefix}.norm.beta"), Tensor::zeros(Shape::new(1, c, 1, 1)));
        Ok(Rsdam { distill, attention, proj, gamma, beta })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let f = match &self.distill {
            DistillStage::Sdm(sdm) => sdm.forward(x)?,
            DistillStage::Plain(conv) => gelu_op(&conv.forward(x)?),
        };
        let f = match &self.attention {
            AttentionStage::MmLka(a) => a.forward(&f)?,
            AttentionStage::Lka13(a) => a.forward(&f)?,
            AttentionStage::Identity => f,
        };
        let f = self.proj.forward(&f)?;
        let f = pixel_norm_op(&f, &self.gamma, &self.beta, PIXEL_NORM_EPS)?;
        add(&f, x)
    }
}

/// Point-wise 1x1 followed by a depth-wise 3x3 (blueprint order).
pub struct BsConv<T: Elem> {
    pw: ConvLayer<T>,
    dw: ConvLayer<T>,
}

impl<T: Elem> BsConv<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<BsConv<T>> {
        Ok(BsConv {
            pw: ConvLayer::new(params, &format!("{prefix}.pw"), ConvSpec::pointwise(in_channels, out_channels), rng)?,
            dw: ConvLayer::new(params, &format!("{prefix}.dw"), ConvSpec::depthwise(out_channels, 3, 1), rng)?,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        self.dw.forward(&self.pw.forward(x)?)
    }
}

/// The full network.
pub struct Sdan<T: Elem> {
    config: ModelConfig,
    shallow: BsConv<T>,
    blocks: Vec<Rsdam<T>>,
    fuse_pw: ConvLayer<T>,
    fuse_smooth: BsConv<T>,
    recon: ConvLayer<T>,
    params: ParamSet<T>,
}

impl<T: Elem> Sdan<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Sdan<T>> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = cfg.channels;
        let shallow = BsConv::new(&mut params, "shallow", 3 * cfg.replicate_n, c, &mut rng)?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for i in 0..cfg.num_blocks {
            blocks.push(Rsdam::new(&mut params, &format!("blocks.{i}"), cfg, &mut rng)?);
        }
        let fuse_pw = ConvLayer::new(
            &mut params,
            "fusion.pw",
            ConvSpec::pointwise(cfg.num_blocks * c, c),
            &mut rng,
        )?;
        let fuse_smooth = BsConv::new(&mut params, "fusion.smooth", c, c, &mut rng)?;
        let recon = ConvLayer::new(
            &mut params,
            "recon",
            ConvSpec::dense(c, 3 * cfg.scale * cfg.scale, 3),
            &mut rng,
        )?;
        Ok(Sdan { config: *cfg, shallow, blocks, fuse_pw, fuse_smooth, recon, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Graph forward pass: (N, 3, H, W) in [0,1] to (N, 3, sH, sW).
    pub fn forward(&self, img: &Var<T>) -> Result<Var<T>> {
        let shape = img.shape();
        if shape.c != 3 {
            return Err(Error::config(format!(
                "sdan forward expects 3 input channels, got {}",
                shape.c
            )));
        }
        let replicated = if self.config.replicate_n == 1 {
            img.clone()
        } else {
            concat_op(&vec![img.clone(); self.config.replicate_n])?
        };
        let f0 = self.shallow.forward(&replicated)?;
        let mut feats = Vec::with_capacity(self.blocks.len());
        let mut cur = f0.clone();
        for block in &self.blocks {
            cur = block.forward(&cur)?;
            feats.push(cur.clone());
        }
        let fused = self.fuse_smooth.forward(&gelu_op(&self.fuse_pw.forward(&concat_op(&feats)?)?))?;
        let body = add(&fused, &f0)?;
        pixel_shuffle_op(&self.recon.forward(&body)?, self.config.scale)
    }

    /// Detached inference; values are bit-identical to the graph forward.
    pub fn infer(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        no_grad(|| {
            let out = self.forward(&Var::constant(img.clone()))?;
            Ok(out.value_clone())
        })
    }

    /// Overwrite parameter values from (name, tensor) pairs. The name set
    /// must match the model's parameters exactly.
    pub fn set_named_tensors(&self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        if tensors.len() != self.params.entries().len() {
            return Err(Error::config(format!(
                "parameter count mismatch: model has {}, got {}",
                self.params.entries().len(),
                tensors.len()
            )));
        }
        for (name, tensor) in tensors {
            let var = self
                .params
                .get(name)
                .ok_or_else(|| Error::config(format!("unknown parameter '{name}'")))?;
            if var.shape() != tensor.shape() {
                return Err(Error::config(format!(
                    "parameter '{name}' has shape {}, expected {}",
                    tensor.shape(),
                    var.shape()
                )));
            }
            var.set_value(tensor.clone())?;
        }
        Ok(())
    }
}

/// Super-resolve an 8-bit image with a trained model: forward in [0,1],
/// clamp, quantize half-away-from-zero.
pub fn super_resolve(model: &Sdan<f32>, img: &ImageRgb) -> Result<ImageRgb> {
    let input = img.to_tensor();
    let out = model.infer(&input)?;
    Ok(ImageRgb::from_tensor(&out))
}

// ---------------------------------------------------------------------------
// Complexity ledgers
//
// Closed-form counts over the config, kept deliberately independent of the
// parameter registry so the two can cross-check each other.
// ---------------------------------------------------------------------------

/// Total learnable scalars of the architecture described by `cfg`.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let c = cfg.channels as u64;
    let dc = cfg.distill_channels as u64;
    let kz = cfg.star_kernel as u64;
    let k = cfg.strip_kernel as u64;
    let s = cfg.square_kernel as u64;
    let m = cfg.num_blocks as u64;
    let cin = 3 * cfg.replicate_n as u64;
    let r2 = (cfg.scale * cfg.scale) as u64;

    // weight + bias element counts
    let pw = |ci: u64, co: u64| ci * co + co;
    let dw = |ch: u64, kh: u64, kw: u64| ch * kh * kw + ch;

    let shallow = pw(cin, c) + dw(c, 3, 3);

    let star = dw(c, kz, kz) + 3 * pw(c, c);
    let distill_stage = if cfg.enable_sdm {
        4 * pw(c, dc) + 3 * star + pw(4 * dc, c)
    } else {
        c * c * 9 + c
    };
    let attention = match cfg.attention {
        AttentionVariant::MmLka => {
            let gc = c / 4;
            4 * dw(gc, 1, k) + 2 * dw(gc, s, s) + pw(c, c)
        }
        AttentionVariant::Lka13 => 2 * dw(c, 5, 5) + pw(c, c),
        AttentionVariant::None => 0,
    };
    let block = distill_stage + attention + pw(c, c) + 2 * c;

    let fusion = pw(m * c, c) + pw(c, c) + dw(c, 3, 3);
    let recon = c * (3 * r2) * 9 + 3 * r2;

    shallow + m * block + fusion + recon
}

/// Inference cost at the given output resolution, counted at the implied
/// input resolution (all body convolutions preserve spatial size).
///
/// Convention: one FLOP per multiply-accumulate, one per bias add and per
/// element-wise op, eight per element for the normalization; the sub-pixel
/// rearrangement is free.
pub fn count_flops(cfg: &ModelConfig, out_h: usize, out_w: usize) -> u64 {
    let h = out_h.div_ceil(cfg.scale) as u64;
    let w = out_w.div_ceil(cfg.scale) as u64;
    let hw = h * w;
    let c = cfg.channels as u64;
    let dc = cfg.distill_channels as u64;
    let kz = cfg.star_kernel as u64;
    let k = cfg.strip_kernel as u64;
    let s = cfg.square_kernel as u64;
    let m = cfg.num_blocks as u64;
    let cin = 3 * cfg.replicate_n as u64;
    let r2 = (cfg.scale * cfg.scale) as u64;

    // MACs plus bias adds, per spatial position
    let pw = |ci: u64, co: u64| (ci * co + co) * hw;
    let dw = |ch: u64, kh: u64, kw: u64| (ch * kh * kw + ch) * hw;
    let elem = c * hw;

    let shallow = pw(cin, c) + dw(c, 3, 3);

    // StarConv: dw, two projections, gelu, star product, output projection,
    // residual add.
    let star = dw(c, kz, kz) + 3 * pw(c, c) + 3 * elem;
    let distill_stage = if cfg.enable_sdm {
        4 * pw(c, dc) + 3 * star + pw(4 * dc, c)
    } else {
        (c * c * 9 + c) * hw + elem
    };
    let attention = match cfg.attention {
        AttentionVariant::MmLka => {
            let gc = c / 4;
            4 * dw(gc, 1, k) + 2 * dw(gc, s, s) + pw(c, c) + elem
        }
        AttentionVariant::Lka13 => 2 * dw(c, 5, 5) + pw(c, c) + elem,
        AttentionVariant::None => 0,
    };
    let block = distill_stage + attention + pw(c, c) + 8 * elem + elem;

    let fusion = pw(m * c, c) + elem + pw(c, c) + dw(c, 3, 3);
    let long_skip = elem;
    let recon = (c * (3 * r2) * 9 + 3 * r2) * hw;

    shallow + m * block + fusion + long_skip + recon
}

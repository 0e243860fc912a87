use c2b_core::{LowResVideo, Plane, VideoCube};
use c2b_nn::param::he_normal;
use c2b_nn::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, ModelVariant};
use crate::error::{ModelError, Result};

const KERNEL: usize = 3;
const COSINE_EPS: f64 = 1e-8;
/// Subtracted from every input intensity before the encoder.
pub const INPUT_OFFSET: f64 = 0.5;

/// A 3×3, stride 1, pad 1 convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLayer {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&[cout, cin, KERNEL, KERNEL], cin * KERNEL * KERNEL, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        ConvLayer { weight, bias }
    }

    fn apply<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        Ok(tape.conv2d(x, w, b, 1, KERNEL / 2)?)
    }

    fn apply_relu<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let y = self.apply(tape, store, x)?;
        Ok(tape.relu(y))
    }
}

#[derive(Debug, Clone)]
struct UNet {
    down: [[ConvLayer; 2]; 3],
    bottleneck: [ConvLayer; 2],
    up: [[ConvLayer; 2]; 3],
    last: ConvLayer,
}

/// Low-resolution network inputs as `batch × T × h × w` tensors.
#[derive(Debug, Clone)]
pub struct ModelInputs<F> {
    pub coded: Option<Tensor<F>>,
    pub blurred: Option<Tensor<F>>,
}

/// Attention nodes on a tape: the cosine map in `[−1, 1]` and its `[0, 1]`
/// rescaling.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub raw: Var,
    pub normalized: Var,
}

/// Result of [`Model::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub prediction: Var,
    pub attention: Option<AttentionVars>,
}

/// Attention for one example at low resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl AttentionMap {
    pub fn normalized_plane(&self) -> Result<Plane> {
        Ok(Plane::clamped(self.height, self.width, self.normalized.clone())?)
    }

    /// Mean of the normalized map over the positions where `mask` is true.
    pub fn masked_mean(&self, mask: &[bool]) -> Option<f64> {
        let (sum, count) = self
            .normalized
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

/// Stacks equally sized videos into a `batch × T × h × w` tensor.
pub fn videos_to_tensor<F: Scalar>(videos: &[&VideoCube]) -> Result<Tensor<F>> {
    let first = videos
        .first()
        .ok_or_else(|| ModelError::Shape("no videos to stack".into()))?;
    let (t, h, w) = (first.len(), first.height(), first.width());
    let mut data = Vec::with_capacity(videos.len() * t * h * w);
    for v in videos {
        if (v.len(), v.height(), v.width()) != (t, h, w) {
            return Err(ModelError::Shape(format!(
                "video {}x{}x{} does not match {t}x{h}x{w}",
                v.len(),
                v.height(),
                v.width()
            )));
        }
        for frame in v.frames() {
            data.extend(frame.as_slice().iter().map(|&x| F::from_f64_lossy(x)));
        }
    }
    Ok(Tensor::new(vec![videos.len(), t, h, w], data)?)
}

/// Splits a `batch × T × H × W` tensor into videos, clamping into `[0, 1]`.
pub fn tensor_to_videos<F: Scalar>(x: &Tensor<F>) -> Result<Vec<VideoCube>> {
    let (b, t, h, w) = x.dims4("tensor_to_videos")?;
    let plane = h * w;
    (0..b)
        .map(|bi| {
            let frames = (0..t)
                .map(|ti| {
                    let off = (bi * t + ti) * plane;
                    let vals = x.data()[off..off + plane].iter().map(|v| v.as_f64()).collect();
                    Plane::clamped(h, w, vals)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(VideoCube::new(frames)?)
        })
        .collect()
}

/// The reconstruction network and its parameters.
#[derive(Debug, Clone)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    encoder: [ConvLayer; 3],
    unet: UNet,
}

impl<F: Scalar> Model<F> {
    /// Builds a model with He-initialized weights and zero biases drawn from
    /// a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut p = ParamStore::new();
        let [e0, e1, e2] = config.encoder_widths;
        let encoder = [
            ConvLayer::new(&mut p, "encoder.0", config.t, e0, rng),
            ConvLayer::new(&mut p, "encoder.1", e0, e1, rng),
            ConvLayer::new(&mut p, "encoder.2", e1, e2, rng),
        ];

        let widths = config.unet_widths;
        let mut cin = config.unet_input_channels();
        let down = std::array::from_fn(|i| {
            let a = ConvLayer::new(&mut p, &format!("unet.down{i}.0"), cin, widths[i], rng);
            let b = ConvLayer::new(&mut p, &format!("unet.down{i}.1"), widths[i], widths[i], rng);
            cin = widths[i];
            [a, b]
        });
        let bottleneck = [
            ConvLayer::new(&mut p, "unet.bottleneck.0", cin, config.bottleneck, rng),
            ConvLayer::new(&mut p, "unet.bottleneck.1", config.bottleneck, config.bottleneck, rng),
        ];
        let mut below = config.bottleneck;
        let mut up_layers = Vec::with_capacity(3);
        for i in (0..3).rev() {
            let a = ConvLayer::new(&mut p, &format!("unet.up{i}.0"), below + widths[i], widths[i], rng);
            let b = ConvLayer::new(&mut p, &format!("unet.up{i}.1"), widths[i], widths[i], rng);
            up_layers.push([a, b]);
            below = widths[i];
        }
        // indexed by resolution level, like `down`
        up_layers.reverse();
        let up: [[ConvLayer; 2]; 3] = up_layers.try_into().expect("three levels");
        let last = ConvLayer::new(&mut p, "unet.last", widths[0], config.output_channels(), rng);

        Ok(Model {
            config,
            params: p,
            encoder,
            unet: UNet {
                down,
                bottleneck,
                up,
                last,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Replaces a parameter's value by name; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| ModelError::Config(format!("model has no parameter '{name}'")))?;
        Ok(self.params.set_value(id, value)?)
    }

    pub fn encoder_layers(&self) -> &[ConvLayer; 3] {
        &self.encoder
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder,
            unet: self.unet.clone(),
        }
    }

    /// Shared shallow encoder: three 3×3 convolutions, ReLU after the first two.
    pub fn encode_features(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        let channels = tape.value(x).shape().get(1).copied();
        if channels != Some(self.config.t) {
            return Err(ModelError::Shape(format!(
                "encoder expects {} input channels, got {:?}",
                self.config.t,
                tape.value(x).shape()
            )));
        }
        let h = self.encoder[0].apply_relu(tape, &self.params, x)?;
        let h = self.encoder[1].apply_relu(tape, &self.params, h)?;
        self.encoder[2].apply(tape, &self.params, h)
    }

    /// Cosine similarity of the two feature maps along channels, and its
    /// affine rescaling `(raw + 1) / 2`.
    pub fn compute_attention(tape: &mut Tape<F>, phi_c: Var, phi_f: Var) -> Result<AttentionVars> {
        let raw = tape.cosine_channels(phi_c, phi_f, COSINE_EPS)?;
        let normalized = tape.affine(raw, 0.5, 0.5);
        Ok(AttentionVars { raw, normalized })
    }

    /// `concat(A ⊙ Φ_f, (1 − A) ⊙ Φ_c)`.
    pub fn fuse(tape: &mut Tape<F>, phi_c: Var, phi_f: Var, attention: Var) -> Result<Var> {
        let stat = tape.broadcast_mul(attention, phi_f)?;
        let inv = tape.affine(attention, -1.0, 1.0);
        let dynamic = tape.broadcast_mul(inv, phi_c)?;
        Ok(tape.concat_channels(stat, dynamic)?)
    }

    /// U-Net and sub-pixel layer; returns `batch × T × nh × nw`, unclamped.
    pub fn decode(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        let p = &self.params;
        let u = &self.unet;
        let mut skips = Vec::with_capacity(3);
        let mut h = x;
        for block in &u.down {
            h = block[0].apply_relu(tape, p, h)?;
            h = block[1].apply_relu(tape, p, h)?;
            skips.push(h);
            h = tape.maxpool2(h)?;
        }
        h = u.bottleneck[0].apply_relu(tape, p, h)?;
        h = u.bottleneck[1].apply_relu(tape, p, h)?;
        for (block, skip) in u.up.iter().zip(skips).rev() {
            h = tape.upsample2(h)?;
            h = tape.concat_channels(h, skip)?;
            h = block[0].apply_relu(tape, p, h)?;
            h = block[1].apply_relu(tape, p, h)?;
        }
        let out = u.last.apply(tape, p, h)?;
        Ok(tape.subpixel_upsample(out, self.config.n)?)
    }

    /// Records an input video, shifted so mid-gray maps to zero.
    fn input(tape: &mut Tape<F>, x: Tensor<F>) -> Var {
        let v = tape.constant(x);
        tape.affine(v, 1.0, -INPUT_OFFSET)
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let (_, t, h, w) = x.dims4("model input")?;
        if t != self.config.t {
            return Err(ModelError::Shape(format!("expected {} frames, got {t}", self.config.t)));
        }
        self.config.check_input_dims(h, w)
    }

    /// Records the full forward pass on `tape`. Inputs become constants.
    pub fn forward(&self, tape: &mut Tape<F>, inputs: &ModelInputs<F>) -> Result<Forward> {
        let missing = |what: &str| ModelError::Variant {
            variant: self.variant().to_string(),
            what: format!("a missing {what} input"),
        };
        match self.variant() {
            ModelVariant::Pair => {
                let coded = inputs.coded.as_ref().ok_or_else(|| missing("coded"))?;
                let blurred = inputs.blurred.as_ref().ok_or_else(|| missing("blurred"))?;
                self.check_input(coded)?;
                if coded.shape() != blurred.shape() {
                    return Err(ModelError::Shape(format!(
                        "coded {:?} and blurred {:?} inputs differ",
                        coded.shape(),
                        blurred.shape()
                    )));
                }
                let xc = Self::input(tape, coded.clone());
                let xf = Self::input(tape, blurred.clone());
                let phi_c = self.encode_features(tape, xc)?;
                let phi_f = self.encode_features(tape, xf)?;
                let attention = Self::compute_attention(tape, phi_c, phi_f)?;
                let fused = Self::fuse(tape, phi_c, phi_f, attention.normalized)?;
                let prediction = self.decode(tape, fused)?;
                Ok(Forward {
                    prediction,
                    attention: Some(attention),
                })
            }
            ModelVariant::CodedOnly | ModelVariant::BlurredOnly => {
                let input = match self.variant() {
                    ModelVariant::CodedOnly => inputs.coded.as_ref().ok_or_else(|| missing("coded"))?,
                    _ => inputs.blurred.as_ref().ok_or_else(|| missing("blurred"))?,
                };
                self.check_input(input)?;
                let x = Self::input(tape, input.clone());
                let phi = self.encode_features(tape, x)?;
                let prediction = self.decode(tape, phi)?;
                Ok(Forward {
                    prediction,
                    attention: None,
                })
            }
        }
    }

    /// Reconstructs a full-resolution video from the pair of low-resolution
    /// videos. Output values are clamped into `[0, 1]`.
    pub fn forward_pair(&self, coded: &LowResVideo, blurred: &LowResVideo) -> Result<VideoCube> {
        if !self.variant().is_pair() {
            return Err(ModelError::Variant {
                variant: self.variant().to_string(),
                what: "two inputs".into(),
            });
        }
        self.run(Some(coded), Some(blurred))
    }

    /// Reconstructs from a single low-resolution video (coded-only or
    /// blurred-only models).
    pub fn forward_single(&self, input: &LowResVideo) -> Result<VideoCube> {
        match self.variant() {
            ModelVariant::Pair => Err(ModelError::Variant {
                variant: "pair".into(),
                what: "a single input".into(),
            }),
            ModelVariant::CodedOnly => self.run(Some(input), None),
            ModelVariant::BlurredOnly => self.run(None, Some(input)),
        }
    }

    /// Dispatches on the variant; unused inputs are ignored.
    pub fn reconstruct(&self, coded: Option<&LowResVideo>, blurred: Option<&LowResVideo>) -> Result<VideoCube> {
        let missing = |what: &str| ModelError::Variant {
            variant: self.variant().to_string(),
            what: format!("a missing {what} input"),
        };
        match self.variant() {
            ModelVariant::Pair => self.forward_pair(
                coded.ok_or_else(|| missing("coded"))?,
                blurred.ok_or_else(|| missing("blurred"))?,
            ),
            ModelVariant::CodedOnly => self.forward_single(coded.ok_or_else(|| missing("coded"))?),
            ModelVariant::BlurredOnly => self.forward_single(blurred.ok_or_else(|| missing("blurred"))?),
        }
    }

    fn run(&self, coded: Option<&LowResVideo>, blurred: Option<&LowResVideo>) -> Result<VideoCube> {
        let inputs = ModelInputs {
            coded: coded.map(|v| videos_to_tensor(&[v])).transpose()?,
            blurred: blurred.map(|v| videos_to_tensor(&[v])).transpose()?,
        };
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &inputs)?;
        let pred = tape.value(out.prediction);
        if !pred.all_finite() {
            return Err(ModelError::NonFinite("prediction".into()));
        }
        Ok(tensor_to_videos(pred)?.remove(0))
    }

    /// Attention map of a pair model for one example.
    pub fn attention(&self, coded: &LowResVideo, blurred: &LowResVideo) -> Result<AttentionMap> {
        if !self.variant().is_pair() {
            return Err(ModelError::Variant {
                variant: self.variant().to_string(),
                what: "attention maps".into(),
            });
        }
        let xc = videos_to_tensor::<F>(&[coded])?;
        let xf = videos_to_tensor::<F>(&[blurred])?;
        if xc.shape() != xf.shape() {
            return Err(ModelError::Shape(format!("coded {:?} and blurred {:?} differ", xc.shape(), xf.shape())));
        }
        let mut tape = Tape::new();
        let xc = Self::input(&mut tape, xc);
        let xf = Self::input(&mut tape, xf);
        let phi_c = self.encode_features(&mut tape, xc)?;
        let phi_f = self.encode_features(&mut tape, xf)?;
        let a = Self::compute_attention(&mut tape, phi_c, phi_f)?;
        let raw = tape.value(a.raw);
        let (_, _, height, width) = raw.dims4("attention")?;
        Ok(AttentionMap {
            height,
            width,
            raw: raw.to_f64_vec(),
            normalized: tape.value(a.normalized).to_f64_vec(),
        })
    }
}

//! Desk-scale generator and discriminator networks.
//!
//! Segmentation mode: fully convolutional stride-1 stacks (3x3 kernels),
//! ReLU in the generator, LeakyReLU(0.2) in the discriminator, channelwise
//! softmax / per-pixel sigmoid heads. An optional encoder-decoder variant
//! (stride-2 entry conv + nearest upsample) exists behind a config flag.
//!
//! Classification mode: dense stacks over flat feature vectors; the
//! discriminator reads the sample entropy concatenated with the logits.
//!
//! The inter-domain and intra-domain generators share one architecture by
//! construction: both are built from the same [`GeneratorConfig`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ParameterSet;
use crate::rng;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetMode {
    Segmentation,
    Classification,
}

/// Whether parameters enter the tape as trainable leaves or constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Train,
    Freeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Image channels (segmentation) or feature dimension (classification).
    pub input_channels: usize,
    pub class_count: usize,
    /// Hidden widths per conv block / dense layer.
    pub widths: Vec<usize>,
    pub mode: NetMode,
    /// Stride-2 entry conv plus nearest upsample mid-stack (segmentation only).
    #[serde(default)]
    pub encoder_decoder: bool,
}

impl GeneratorConfig {
    pub fn segmentation(class_count: usize) -> Self {
        GeneratorConfig {
            input_channels: 3,
            class_count,
            widths: vec![16, 32, 32],
            mode: NetMode::Segmentation,
            encoder_decoder: false,
        }
    }

    /// Two-hidden-layer dense classifier.
    pub fn classification(input_dim: usize, class_count: usize) -> Self {
        GeneratorConfig {
            input_channels: input_dim,
            class_count,
            widths: vec![16, 32],
            mode: NetMode::Classification,
            encoder_decoder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config(format!(
                "class_count must be >= 2, got {}",
                self.class_count
            )));
        }
        if self.widths.is_empty() {
            return Err(Error::Config("generator widths must be non-empty".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.encoder_decoder {
            if self.mode != NetMode::Segmentation {
                return Err(Error::Config(
                    "encoder_decoder applies to segmentation mode only".into(),
                ));
            }
            if self.widths.len() < 2 {
                return Err(Error::Config(
                    "encoder_decoder needs at least two conv blocks".into(),
                ));
            }
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_channels;
        for &w in &self.widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.class_count));
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
    pub mode: NetMode,
    /// Class count of the generator it reads (classification input is the
    /// entropy scalar plus the C logits).
    pub class_count: usize,
}

impl DiscriminatorConfig {
    pub fn new(mode: NetMode, class_count: usize) -> Self {
        DiscriminatorConfig {
            widths: vec![16, 32],
            mode,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("discriminator widths must be non-empty".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        match self.mode {
            NetMode::Segmentation => 1,
            NetMode::Classification => self.class_count + 1,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim();
        for &w in &self.widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, 1));
        dims
    }
}

/// Kaiming-uniform weight, bound `sqrt(6 / fan_in)`.
fn kaiming_conv(rng: &mut rand_chacha::ChaCha8Rng, co: usize, ci: usize) -> Tensor {
    let bound = (6.0 / (ci * 9) as f32).sqrt();
    let data = (0..co * ci * 9).map(|_| rng::uniform(rng, -bound, bound)).collect();
    Tensor::new(vec![co, ci, 3, 3], data).expect("finite init")
}

fn kaiming_dense(rng: &mut rand_chacha::ChaCha8Rng, out: usize, inp: usize) -> Tensor {
    let bound = (6.0 / inp as f32).sqrt();
    let data = (0..out * inp).map(|_| rng::uniform(rng, -bound, bound)).collect();
    Tensor::new(vec![out, inp], data).expect("finite init")
}

fn layer_name(i: usize, total: usize) -> String {
    if i + 1 == total {
        "head".to_string()
    } else {
        format!("layer{i}")
    }
}

fn init_net(dims: &[(usize, usize)], mode: NetMode, seed: u64, label: &str) -> ParameterSet {
    let mut r = rng::stream(seed, label);
    let mut params = ParameterSet::new();
    for (i, &(ci, co)) in dims.iter().enumerate() {
        let name = layer_name(i, dims.len());
        let weight = match mode {
            NetMode::Segmentation => kaiming_conv(&mut r, co, ci),
            NetMode::Classification => kaiming_dense(&mut r, co, ci),
        };
        params
            .insert(&format!("{name}.weight"), weight)
            .expect("layer names are unique");
        params
            .insert(&format!("{name}.bias"), Tensor::zeros(vec![co]))
            .expect("layer names are unique");
    }
    params
}

/// Deterministic Kaiming-uniform init (zero biases) from a seed.
pub fn init_generator(cfg: &GeneratorConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    Ok(init_net(&cfg.layer_dims(), cfg.mode, seed, "generator-init"))
}

pub fn init_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    Ok(init_net(&cfg.layer_dims(), cfg.mode, seed, "discriminator-init"))
}

fn leaf(tape: &mut Tape, params: &ParameterSet, name: &str, mode: ParamMode) -> Result<Var> {
    match mode {
        ParamMode::Train => tape.param(params, name),
        ParamMode::Freeze => tape.constant(params.value(name)?.clone()),
    }
}

/// Soft prediction plus the pre-softmax logits (the classification
/// discriminator reads the logits).
pub struct GeneratorOutput {
    pub probs: Var,
    pub logits: Var,
}

pub fn forward_generator(
    tape: &mut Tape,
    params: &ParameterSet,
    cfg: &GeneratorConfig,
    x: Var,
    mode: ParamMode,
) -> Result<GeneratorOutput> {
    cfg.validate()?;
    let dims = cfg.layer_dims();
    match cfg.mode {
        NetMode::Segmentation => {
            let shape = tape.value(x).shape().to_vec();
            let [c, h, w] = shape[..] else {
                return Err(Error::Dimension(format!(
                    "generator expects [C,H,W], got {shape:?}"
                )));
            };
            if c != cfg.input_channels {
                return Err(Error::Dimension(format!(
                    "generator expects {} input channels, got {c}",
                    cfg.input_channels
                )));
            }
            if cfg.encoder_decoder && (h % 2 != 0 || w % 2 != 0) {
                return Err(Error::Dimension(format!(
                    "encoder_decoder needs even spatial dims, got {h}x{w}"
                )));
            }
            let upsample_after = cfg.widths.len() / 2;
            let mut cur = x;
            for (i, _) in dims.iter().enumerate() {
                let name = layer_name(i, dims.len());
                let wvar = leaf(tape, params, &format!("{name}.weight"), mode)?;
                let bvar = leaf(tape, params, &format!("{name}.bias"), mode)?;
                let stride = if cfg.encoder_decoder && i == 0 { 2 } else { 1 };
                cur = tape.conv2d(cur, wvar, bvar, stride)?;
                if i + 1 < dims.len() {
                    cur = tape.relu(cur)?;
                    if cfg.encoder_decoder && i == upsample_after {
                        cur = tape.upsample_nearest_2x(cur)?;
                    }
                }
            }
            let probs = tape.softmax_channels(cur)?;
            Ok(GeneratorOutput { probs, logits: cur })
        }
        NetMode::Classification => {
            let numel = tape.value(x).numel();
            if numel != cfg.input_channels {
                return Err(Error::Dimension(format!(
                    "classifier expects {} features, got {numel}",
                    cfg.input_channels
                )));
            }
            let mut cur = tape.reshape(x, vec![cfg.input_channels])?;
            for (i, _) in dims.iter().enumerate() {
                let name = layer_name(i, dims.len());
                let wvar = leaf(tape, params, &format!("{name}.weight"), mode)?;
                let bvar = leaf(tape, params, &format!("{name}.bias"), mode)?;
                let prod = tape.matmul(wvar, cur)?;
                cur = tape.add(prod, bvar)?;
                if i + 1 < dims.len() {
                    cur = tape.relu(cur)?;
                }
            }
            let logits3 = tape.reshape(cur, vec![cfg.class_count, 1, 1])?;
            let probs = tape.softmax_channels(logits3)?;
            Ok(GeneratorOutput {
                probs,
                logits: logits3,
            })
        }
    }
}

/// Discriminator forward. Segmentation mode reads the `[1,H,W]` entropy map
/// and emits per-pixel probabilities of the same size; classification mode
/// reads the entropy scalar concatenated with the logits and emits one
/// probability, shaped `[1,1,1]`.
pub fn forward_discriminator(
    tape: &mut Tape,
    params: &ParameterSet,
    cfg: &DiscriminatorConfig,
    entropy: Var,
    logits: Var,
    mode: ParamMode,
) -> Result<Var> {
    cfg.validate()?;
    let dims = cfg.layer_dims();
    match cfg.mode {
        NetMode::Segmentation => {
            let shape = tape.value(entropy).shape().to_vec();
            if shape.len() != 3 || shape[0] != 1 {
                return Err(Error::Dimension(format!(
                    "discriminator expects a [1,H,W] entropy map, got {shape:?}"
                )));
            }
            let mut cur = entropy;
            for (i, _) in dims.iter().enumerate() {
                let name = layer_name(i, dims.len());
                let wvar = leaf(tape, params, &format!("{name}.weight"), mode)?;
                let bvar = leaf(tape, params, &format!("{name}.bias"), mode)?;
                cur = tape.conv2d(cur, wvar, bvar, 1)?;
                if i + 1 < dims.len() {
                    cur = tape.leaky_relu(cur, LEAKY_SLOPE)?;
                }
            }
            tape.sigmoid(cur)
        }
        NetMode::Classification => {
            if tape.value(entropy).numel() != 1 {
                return Err(Error::Dimension(format!(
                    "classification discriminator expects a scalar entropy, got {:?}",
                    tape.value(entropy).shape()
                )));
            }
            if tape.value(logits).numel() != cfg.class_count {
                return Err(Error::Dimension(format!(
                    "classification discriminator expects {} logits, got {:?}",
                    cfg.class_count,
                    tape.value(logits).shape()
                )));
            }
            let ent = tape.reshape(entropy, vec![1])?;
            let lg = tape.reshape(logits, vec![cfg.class_count])?;
            let mut cur = tape.concat(&[ent, lg])?;
            for (i, _) in dims.iter().enumerate() {
                let name = layer_name(i, dims.len());
                let wvar = leaf(tape, params, &format!("{name}.weight"), mode)?;
                let bvar = leaf(tape, params, &format!("{name}.bias"), mode)?;
                let prod = tape.matmul(wvar, cur)?;
                cur = tape.add(prod, bvar)?;
                if i + 1 < dims.len() {
                    cur = tape.leaky_relu(cur, LEAKY_SLOPE)?;
                }
            }
            let out = tape.sigmoid(cur)?;
            tape.reshape(out, vec![1, 1, 1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::ProbMap;

    fn seg_cfg() -> GeneratorConfig {
        GeneratorConfig::segmentation(5)
    }

    #[test]
    fn same_seed_same_weights() {
        let a = init_generator(&seg_cfg(), 7).unwrap();
        let b = init_generator(&seg_cfg(), 7).unwrap();
        assert!(a.values_equal(&b));
        let c = init_generator(&seg_cfg(), 8).unwrap();
        assert!(!a.values_equal(&c));
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        // sum over layers of 9*ci*co + co for 3 -> 16 -> 32 -> 32 -> 5
        let params = init_generator(&seg_cfg(), 1).unwrap();
        let dims = [(3, 16), (16, 32), (32, 32), (32, 5)];
        let expected: usize = dims.iter().map(|(ci, co)| 9 * ci * co + co).sum();
        assert_eq!(params.scalar_count(), expected);
    }

    #[test]
    fn generator_output_is_probmap_of_right_shape() {
        let params = init_generator(&seg_cfg(), 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![3, 32, 32], 0.3)).unwrap();
        let out = forward_generator(&mut tape, &params, &seg_cfg(), x, ParamMode::Freeze).unwrap();
        let t = tape.value(out.probs).clone();
        assert_eq!(t.shape(), &[5, 32, 32]);
        assert!(ProbMap::new(t).is_ok());
    }

    #[test]
    fn zeroed_head_gives_uniform_probs() {
        let mut params = init_generator(&seg_cfg(), 3).unwrap();
        params.set_value("head.weight", Tensor::zeros(vec![5, 32, 3, 3])).unwrap();
        params.set_value("head.bias", Tensor::zeros(vec![5])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![3, 8, 8], 0.5)).unwrap();
        let out = forward_generator(&mut tape, &params, &seg_cfg(), x, ParamMode::Freeze).unwrap();
        for v in tape.value(out.probs).data() {
            assert!((v - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_channel_count_is_dimension_error() {
        let params = init_generator(&seg_cfg(), 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![4, 8, 8])).unwrap();
        assert!(matches!(
            forward_generator(&mut tape, &params, &seg_cfg(), x, ParamMode::Freeze),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let dcfg = DiscriminatorConfig::new(NetMode::Segmentation, 5);
        let params = init_discriminator(&dcfg, 9).unwrap();
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::full(vec![1, 8, 8], 0.7)).unwrap();
        let l = tape.constant(Tensor::zeros(vec![5, 8, 8])).unwrap();
        let out = forward_discriminator(&mut tape, &params, &dcfg, e, l, ParamMode::Freeze).unwrap();
        let t = tape.value(out);
        assert_eq!(t.shape(), &[1, 8, 8]);
        for v in t.data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn zeroed_discriminator_head_says_half() {
        let dcfg = DiscriminatorConfig::new(NetMode::Segmentation, 5);
        let mut params = init_discriminator(&dcfg, 9).unwrap();
        params.set_value("head.weight", Tensor::zeros(vec![1, 32, 3, 3])).unwrap();
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::full(vec![1, 4, 4], 0.3)).unwrap();
        let l = tape.constant(Tensor::zeros(vec![5, 4, 4])).unwrap();
        let out = forward_discriminator(&mut tape, &params, &dcfg, e, l, ParamMode::Freeze).unwrap();
        for v in tape.value(out).data() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = init_generator(&seg_cfg(), 21).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::full(vec![3, 8, 8], 0.4)).unwrap();
            let out =
                forward_generator(&mut tape, &params, &seg_cfg(), x, ParamMode::Freeze).unwrap();
            tape.value(out.probs).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn inter_and_intra_generators_share_architecture() {
        let cfg = seg_cfg();
        let g_inter = init_generator(&cfg, 1).unwrap();
        let g_intra = init_generator(&cfg, 2).unwrap();
        let shapes = |p: &ParameterSet| {
            p.names()
                .map(|n| (n.to_string(), p.value(n).unwrap().shape().to_vec()))
                .collect::<Vec<_>>()
        };
        assert_eq!(shapes(&g_inter), shapes(&g_intra));
    }

    #[test]
    fn classification_forward_shapes() {
        let gcfg = GeneratorConfig::classification(2, 2);
        let params = init_generator(&gcfg, 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 1, 1], vec![0.5, -1.0]).unwrap()).unwrap();
        let out = forward_generator(&mut tape, &params, &gcfg, x, ParamMode::Freeze).unwrap();
        assert_eq!(tape.value(out.probs).shape(), &[2, 1, 1]);

        let dcfg = DiscriminatorConfig::new(NetMode::Classification, 2);
        let dparams = init_discriminator(&dcfg, 5).unwrap();
        let ent = tape.constant(Tensor::full(vec![1, 1, 1], 0.69)).unwrap();
        let d = forward_discriminator(&mut tape, &dparams, &dcfg, ent, out.logits, ParamMode::Freeze)
            .unwrap();
        let t = tape.value(d);
        assert_eq!(t.shape(), &[1, 1, 1]);
        assert!(t.data()[0] > 0.0 && t.data()[0] < 1.0);
    }

    #[test]
    fn encoder_decoder_round_trips_resolution() {
        let cfg = GeneratorConfig {
            encoder_decoder: true,
            ..seg_cfg()
        };
        let params = init_generator(&cfg, 6).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![3, 16, 16], 0.2)).unwrap();
        let out = forward_generator(&mut tape, &params, &cfg, x, ParamMode::Freeze).unwrap();
        assert_eq!(tape.value(out.probs).shape(), &[5, 16, 16]);

        let mut tape = Tape::new();
        let odd = tape.constant(Tensor::full(vec![3, 15, 16], 0.2)).unwrap();
        assert!(forward_generator(&mut tape, &params, &cfg, odd, ParamMode::Freeze).is_err());
    }
}

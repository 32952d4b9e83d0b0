//! Encoders producing unit-norm embeddings (teacher and student), plus the
//! linear classification head used by probes and baselines.

use serde::{Deserialize, Serialize};

use crate::corruptions::ImageBatch;
use crate::error::{Error, Result};
use crate::numerics::{
    add_bias_row, add_channel_bias, avg_pool2d, conv2d, global_avg_pool, l2_normalize_rows,
    matmul, relu, reshape, Element, RngStream, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SmallConv,
    Mlp,
}

/// Per-channel image normalization applied after corruption, before the
/// encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    /// (x - 0.5) / 0.5 on every channel.
    FixedHalf,
    /// Dataset-statistics normalization.
    PerChannel { mean: Vec<f64>, std: Vec<f64> },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::FixedHalf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    #[serde(default = "default_true")]
    pub normalize_output: bool,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_true() -> bool {
    true
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "embed_dim {} must be at least 2",
                self.embed_dim
            )));
        }
        if self.widths.is_empty() {
            return Err(Error::Config("widths must be nonempty".to_string()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("zero layer width".to_string()));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "degenerate input shape {:?}",
                self.input_shape
            )));
        }
        match self.architecture {
            Architecture::SmallConv => {
                if self.widths.len() != 3 {
                    return Err(Error::Config(format!(
                        "small_conv takes exactly 3 widths, got {}",
                        self.widths.len()
                    )));
                }
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!(
                        "small_conv needs even spatial dims for pooling, got {h}×{w}"
                    )));
                }
            }
            Architecture::Mlp => {}
        }
        if let Normalization::PerChannel { mean, std } = &self.normalization {
            if mean.len() != c || std.len() != c {
                return Err(Error::Config(format!(
                    "normalization stats cover {} channels, input has {c}",
                    mean.len()
                )));
            }
            if std.iter().any(|&s| s <= 0.0) {
                return Err(Error::Config("nonpositive normalization std".to_string()));
            }
        }
        Ok(())
    }

    /// Layer spec as (name, fan_in, weight shape, bias len) tuples, in
    /// forward order.
    fn layers(&self) -> Vec<(String, usize, Vec<usize>, usize)> {
        let (c, h, w) = self.input_shape;
        match self.architecture {
            Architecture::SmallConv => {
                let (w1, w2, w3) = (self.widths[0], self.widths[1], self.widths[2]);
                vec![
                    ("conv1".into(), c * 9, vec![w1, c, 3, 3], w1),
                    ("conv2".into(), w1 * 9, vec![w2, w1, 3, 3], w2),
                    ("conv3".into(), w2 * 9, vec![w3, w2, 3, 3], w3),
                    ("fc".into(), w3, vec![w3, self.embed_dim], self.embed_dim),
                ]
            }
            Architecture::Mlp => {
                let mut dims = vec![c * h * w];
                dims.extend_from_slice(&self.widths);
                dims.push(self.embed_dim);
                (0..dims.len() - 1)
                    .map(|i| {
                        (
                            format!("fc{}", i + 1),
                            dims[i],
                            vec![dims[i], dims[i + 1]],
                            dims[i + 1],
                        )
                    })
                    .collect()
            }
        }
    }

    /// Closed-form parameter count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, _, ws, b)| ws.iter().product::<usize>() + b)
            .sum()
    }
}

/// Parameterized encoder. Embeddings are rows on the unit sphere when
/// `normalize_output` is set.
#[derive(Debug)]
pub struct EncoderModel<T: Element> {
    pub config: EncoderConfig,
    params: Vec<(String, Tensor<T>)>,
    frozen: bool,
}

/// Serializable, thread-transferable snapshot of a model's parameters.
#[derive(Debug, Clone)]
pub struct PlainParams {
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub enum InitMode<'a> {
    /// Fan-in-scaled normal weights, zero biases.
    FanInNormal(&'a mut RngStream),
    /// All parameters exactly zero (test mode; exercises the norm floor).
    Zero,
}

pub fn build_encoder<T: Element>(
    config: &EncoderConfig,
    rng: &mut RngStream,
) -> Result<EncoderModel<T>> {
    build_encoder_with_init(config, InitMode::FanInNormal(rng))
}

pub fn build_encoder_with_init<T: Element>(
    config: &EncoderConfig,
    init: InitMode<'_>,
) -> Result<EncoderModel<T>> {
    config.validate()?;
    let mut params = Vec::new();
    let mut rng = match init {
        InitMode::FanInNormal(r) => Some(r),
        InitMode::Zero => None,
    };
    for (name, fan_in, wshape, blen) in config.layers() {
        let wlen: usize = wshape.iter().product();
        let weights = match rng.as_deref_mut() {
            Some(r) => {
                let mut stream = r.derive(&format!("init/{name}.weight"));
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..wlen).map(|_| T::of(std * stream.standard_normal())).collect()
            }
            None => vec![T::zero(); wlen],
        };
        params.push((
            format!("{name}.weight"),
            Tensor::leaf(&wshape, weights, true)?,
        ));
        params.push((
            format!("{name}.bias"),
            Tensor::leaf(&[blen], vec![T::zero(); blen], true)?,
        ));
    }
    Ok(EncoderModel {
        config: config.clone(),
        params,
        frozen: false,
    })
}

impl<T: Element> EncoderModel<T> {
    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stops gradient tracking through every parameter.
    pub fn freeze(&mut self) {
        self.frozen = true;
        for (_, t) in &self.params {
            t.set_requires_grad(false);
        }
    }

    /// Independent trainable copy (e.g. student initialized from teacher).
    pub fn unfrozen_clone(&self) -> Result<EncoderModel<T>> {
        let params = self
            .params
            .iter()
            .map(|(n, t)| Ok((n.clone(), Tensor::leaf(t.shape(), t.data_vec(), true)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderModel {
            config: self.config.clone(),
            params,
            frozen: false,
        })
    }

    pub fn to_plain(&self) -> PlainParams {
        PlainParams {
            entries: self
                .params
                .iter()
                .map(|(n, t)| {
                    (
                        n.clone(),
                        t.shape().to_vec(),
                        t.data().iter().map(|&v| v.to64() as f32).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn from_plain(config: &EncoderConfig, plain: &PlainParams) -> Result<EncoderModel<T>> {
        let mut model = build_encoder_with_init::<T>(config, InitMode::Zero)?;
        if plain.entries.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} entries, model needs {}",
                plain.entries.len(),
                model.params.len()
            )));
        }
        for ((name, shape, values), (want_name, tensor)) in
            plain.entries.iter().zip(model.params.iter_mut())
        {
            if name != want_name || shape != tensor.shape() {
                return Err(Error::Config(format!(
                    "checkpoint entry {name} {shape:?} does not match {want_name} {:?}",
                    tensor.shape()
                )));
            }
            let vals: Vec<T> = values.iter().map(|&v| T::of(v as f64)).collect();
            tensor.set_data(&vals)?;
        }
        Ok(model)
    }

    /// Forward pass to embeddings (B×d). Requires a normalized batch.
    pub fn embed(&self, batch: &ImageBatch<T>) -> Result<Tensor<T>> {
        if !batch.normalized {
            return Err(Error::Contract(
                "embed requires a normalized batch (corrupt, then normalize)".to_string(),
            ));
        }
        let (_, c, h, w) = batch.dims();
        if (c, h, w) != self.config.input_shape {
            return Err(Error::Dimension(format!(
                "batch {:?} does not match encoder input {:?}",
                (c, h, w),
                self.config.input_shape
            )));
        }
        let x = &batch.values;
        let pre = match self.config.architecture {
            Architecture::SmallConv => {
                let h1 = relu(&add_channel_bias(
                    &conv2d(x, self.param("conv1.weight")?, 1)?,
                    self.param("conv1.bias")?,
                )?)?;
                let h2 = relu(&add_channel_bias(
                    &conv2d(&h1, self.param("conv2.weight")?, 1)?,
                    self.param("conv2.bias")?,
                )?)?;
                let pooled = avg_pool2d(&h2)?;
                let h3 = relu(&add_channel_bias(
                    &conv2d(&pooled, self.param("conv3.weight")?, 1)?,
                    self.param("conv3.bias")?,
                )?)?;
                let feats = global_avg_pool(&h3)?;
                add_bias_row(
                    &matmul(&feats, self.param("fc.weight")?)?,
                    self.param("fc.bias")?,
                )?
            }
            Architecture::Mlp => {
                let b = batch.dims().0;
                let mut cur = reshape(x, &[b, c * h * w])?;
                let n_layers = self.config.widths.len() + 1;
                for i in 1..=n_layers {
                    cur = add_bias_row(
                        &matmul(&cur, self.param(&format!("fc{i}.weight"))?)?,
                        self.param(&format!("fc{i}.bias"))?,
                    )?;
                    if i < n_layers {
                        cur = relu(&cur)?;
                    }
                }
                cur
            }
        };
        if self.config.normalize_output {
            l2_normalize_rows(&pre)
        } else {
            Ok(pre)
        }
    }
}

/// Applies the configured per-channel normalization; flips the batch flag.
pub fn normalize_batch<T: Element>(
    config: &EncoderConfig,
    batch: &ImageBatch<T>,
) -> Result<ImageBatch<T>> {
    if batch.normalized {
        return Err(Error::Contract("batch already normalized".to_string()));
    }
    let (b, c, h, w) = batch.dims();
    let (mean, std): (Vec<f64>, Vec<f64>) = match &config.normalization {
        Normalization::FixedHalf => (vec![0.5; c], vec![0.5; c]),
        Normalization::PerChannel { mean, std } => (mean.clone(), std.clone()),
    };
    if mean.len() != c {
        return Err(Error::Config(format!(
            "normalization stats cover {} channels, batch has {c}",
            mean.len()
        )));
    }
    let hw = h * w;
    let mut data = batch.values.data_vec();
    for bi in 0..b {
        for ci in 0..c {
            let m = T::of(mean[ci]);
            let s = T::of(1.0 / std[ci]);
            for v in &mut data[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                *v = (*v - m) * s;
            }
        }
    }
    Ok(ImageBatch {
        values: Tensor::from_vec(batch.values.shape(), data)?,
        normalized: true,
        corrupted: batch.corrupted,
    })
}

/// Converts a supervised-trained encoder into a frozen teacher: the head is
/// left behind, output normalization stays on.
pub fn teacher_from_supervised<T: Element>(model: EncoderModel<T>) -> EncoderModel<T> {
    let mut teacher = model;
    teacher.config.normalize_output = true;
    teacher.freeze();
    teacher
}

/// Affine classification head on top of embeddings.
#[derive(Debug)]
pub struct LinearHead<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> LinearHead<T> {
    pub fn new(embed_dim: usize, classes: usize, rng: &mut RngStream) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Task(format!("head needs at least 2 classes, got {classes}")));
        }
        let std = 1.0 / (embed_dim as f64).sqrt();
        let mut stream = rng.derive("init/head.weight");
        let w: Vec<T> = (0..embed_dim * classes)
            .map(|_| T::of(std * stream.standard_normal()))
            .collect();
        Ok(LinearHead {
            weight: Tensor::leaf(&[embed_dim, classes], w, true)?,
            bias: Tensor::leaf(&[classes], vec![T::zero(); classes], true)?,
        })
    }

    pub fn zeroed(embed_dim: usize, classes: usize) -> Result<Self> {
        Ok(LinearHead {
            weight: Tensor::leaf(&[embed_dim, classes], vec![T::zero(); embed_dim * classes], true)?,
            bias: Tensor::leaf(&[classes], vec![T::zero(); classes], true)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn to_plain(&self) -> PlainParams {
        PlainParams {
            entries: vec![
                (
                    "head.weight".to_string(),
                    self.weight.shape().to_vec(),
                    self.weight.data().iter().map(|&v| v.to64() as f32).collect(),
                ),
                (
                    "head.bias".to_string(),
                    self.bias.shape().to_vec(),
                    self.bias.data().iter().map(|&v| v.to64() as f32).collect(),
                ),
            ],
        }
    }

    pub fn from_plain(plain: &PlainParams) -> Result<Self> {
        if plain.entries.len() != 2 || plain.entries[0].0 != "head.weight" {
            return Err(Error::Config("not a head checkpoint".to_string()));
        }
        let (_, wshape, wvals) = &plain.entries[0];
        let (_, bshape, bvals) = &plain.entries[1];
        Ok(LinearHead {
            weight: Tensor::leaf(
                wshape,
                wvals.iter().map(|&v| T::of(v as f64)).collect(),
                true,
            )?,
            bias: Tensor::leaf(
                bshape,
                bvals.iter().map(|&v| T::of(v as f64)).collect(),
                true,
            )?,
        })
    }
}

/// embeddings(B×d) · W(d×C) + b.
pub fn head_logits<T: Element>(head: &LinearHead<T>, embeddings: &Tensor<T>) -> Result<Tensor<T>> {
    add_bias_row(&matmul(embeddings, &head.weight)?, &head.bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_config() -> EncoderConfig {
        EncoderConfig {
            architecture: Architecture::SmallConv,
            input_shape: (3, 8, 8),
            embed_dim: 8,
            widths: vec![4, 5, 6],
            normalize_output: true,
            normalization: Normalization::FixedHalf,
        }
    }

    fn norm_batch(shape: &[usize], fill: f64) -> ImageBatch<f64> {
        let raw = ImageBatch::new(Tensor::full(shape, fill).unwrap()).unwrap();
        normalize_batch(&conv_config(), &raw).unwrap()
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let cfg = conv_config();
        let mut r1 = RngStream::new(10, "build");
        let mut r2 = RngStream::new(10, "build");
        let a: EncoderModel<f64> = build_encoder(&cfg, &mut r1).unwrap();
        let b: EncoderModel<f64> = build_encoder(&cfg, &mut r2).unwrap();
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data_vec(), tb.data_vec());
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = conv_config();
        // conv1: 4*3*9+4, conv2: 5*4*9+5, conv3: 6*5*9+6, fc: 6*8+8
        let want = (4 * 3 * 9 + 4) + (5 * 4 * 9 + 5) + (6 * 5 * 9 + 6) + (6 * 8 + 8);
        assert_eq!(cfg.param_count(), want);
        let mut rng = RngStream::new(1, "count");
        let model: EncoderModel<f64> = build_encoder(&cfg, &mut rng).unwrap();
        let total: usize = model.params().iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(total, want);
    }

    #[test]
    fn zero_init_hits_the_norm_floor() {
        let model: EncoderModel<f64> =
            build_encoder_with_init(&conv_config(), InitMode::Zero).unwrap();
        let batch = norm_batch(&[2, 3, 8, 8], 0.75);
        assert!(matches!(
            model.embed(&batch),
            Err(Error::DegenerateEmbedding(_))
        ));
        // with a nonzero final bias, every embedding is the normalized bias
        // direction
        let mut bias = vec![0.0; 8];
        bias[2] = 3.0;
        bias[5] = -4.0;
        model.param("fc.bias").unwrap().set_data(&bias).unwrap();
        let emb = model.embed(&batch).unwrap();
        let data = emb.data_vec();
        for row in 0..2 {
            assert!((data[row * 8 + 2] - 0.6).abs() < 1e-12);
            assert!((data[row * 8 + 5] + 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let mut rng = RngStream::new(77, "emb");
        let model: EncoderModel<f64> = build_encoder(&conv_config(), &mut rng).unwrap();
        let mut data_rng = RngStream::new(78, "data");
        let raw: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| data_rng.uniform()).collect();
        let mut raw2 = raw.clone();
        raw2.extend_from_slice(&raw); // duplicate rows → identical embeddings
        let batch = normalize_batch(
            &conv_config(),
            &ImageBatch::new(Tensor::from_vec(&[4, 3, 8, 8], raw2).unwrap()).unwrap(),
        )
        .unwrap();
        let emb = model.embed(&batch).unwrap();
        let d = emb.shape()[1];
        let vals = emb.data_vec();
        for row in 0..4 {
            let norm: f64 = vals[row * d..(row + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        for j in 0..2 * d {
            assert_eq!(vals[j], vals[2 * d + j]);
        }
    }

    #[test]
    fn embed_requires_normalized_batch() {
        let mut rng = RngStream::new(79, "contract");
        let model: EncoderModel<f64> = build_encoder(&conv_config(), &mut rng).unwrap();
        let raw = ImageBatch::new(Tensor::full(&[1, 3, 8, 8], 0.5).unwrap()).unwrap();
        assert!(matches!(model.embed(&raw), Err(Error::Contract(_))));
    }

    #[test]
    fn teacher_is_frozen_and_embeddings_unchanged() {
        let mut rng = RngStream::new(80, "teach");
        let model: EncoderModel<f64> = build_encoder(&conv_config(), &mut rng).unwrap();
        let batch = norm_batch(&[2, 3, 8, 8], 0.3);
        let before = model.embed(&batch).unwrap().data_vec();
        let teacher = teacher_from_supervised(model);
        assert!(teacher.is_frozen());
        let after = teacher.embed(&batch).unwrap().data_vec();
        assert_eq!(before, after);
        // frozen forward builds no tape
        assert!(!teacher.embed(&batch).unwrap().tracked());
    }

    #[test]
    fn head_logits_cases() {
        let head: LinearHead<f64> = LinearHead::zeroed(4, 3).unwrap();
        let emb = Tensor::from_vec(&[2, 4], vec![0.1, 0.2, 0.3, 0.4, -0.1, 0.0, 0.5, 1.0]).unwrap();
        let z = head_logits(&head, &emb).unwrap();
        assert!(z.data_vec().iter().all(|&v| v == 0.0));

        // one-hot columns select embedding coordinates
        head.weight
            .set_data(&[
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0,
            ])
            .unwrap();
        let z = head_logits(&head, &emb).unwrap().data_vec();
        assert_eq!(&z[0..3], &[0.1, 0.2, 0.3]);
        assert_eq!(&z[3..6], &[-0.1, 0.0, 0.5]);

        let bad = Tensor::<f64>::zeros(&[2, 5]).unwrap();
        assert!(matches!(head_logits(&head, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn student_clone_matches_teacher_initially() {
        let mut rng = RngStream::new(81, "clone");
        let mut teacher: EncoderModel<f64> = build_encoder(&conv_config(), &mut rng).unwrap();
        teacher.freeze();
        let student = teacher.unfrozen_clone().unwrap();
        let batch = norm_batch(&[3, 3, 8, 8], 0.6);
        assert_eq!(
            teacher.embed(&batch).unwrap().data_vec(),
            student.embed(&batch).unwrap().data_vec()
        );
        assert!(!student.is_frozen());
        assert!(student.embed(&batch).unwrap().tracked());
    }

    #[test]
    fn plain_round_trip_preserves_values() {
        let mut rng = RngStream::new(82, "plain");
        let model: EncoderModel<f32> = build_encoder(&conv_config(), &mut rng).unwrap();
        let plain = model.to_plain();
        let back: EncoderModel<f32> = EncoderModel::from_plain(&conv_config(), &plain).unwrap();
        for ((_, a), (_, b)) in model.params().iter().zip(back.params()) {
            assert_eq!(a.data_vec(), b.data_vec());
        }
    }
}

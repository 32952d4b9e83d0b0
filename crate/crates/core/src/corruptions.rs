//! Forward operators: random pixel masking, additive Gaussian noise, and
//! Gaussian blur, with fixed or range-sampled severity.
//!
//! Operators act on un-normalized pixel batches; normalization always comes
//! after corruption. Severity ranges are sampled independently per image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Element, RngStream, Tensor};

/// A corruption strength: pinned, or drawn uniformly per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Severity {
    Fixed(f64),
    Range { lo: f64, hi: f64 },
}

impl Severity {
    pub fn is_fixed(&self) -> bool {
        matches!(self, Severity::Fixed(_))
    }

    /// Draws a value (ranges consume one uniform draw; fixed values none).
    pub fn realize(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Severity::Fixed(v) => v,
            Severity::Range { lo, hi } => rng.uniform_in(lo, hi),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Severity::Fixed(v) => (v, v),
            Severity::Range { lo, hi } => (lo, hi),
        }
    }

    fn validate(&self, min: f64, max: f64, what: &str) -> Result<()> {
        let (lo, hi) = self.bounds();
        if lo > hi {
            return Err(Error::Domain(format!("{what}: range lo {lo} > hi {hi}")));
        }
        if lo < min || hi > max {
            return Err(Error::Domain(format!(
                "{what}: severity [{lo}, {hi}] outside legal domain [{min}, {max}]"
            )));
        }
        Ok(())
    }
}

// Serialized as a bare number (fixed) or {"range": [lo, hi]}.
impl Serialize for Severity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Severity::Fixed(v) => s.serialize_f64(v),
            Severity::Range { lo, hi } => {
                use serde::ser::SerializeStruct;
                let mut st = s.serialize_struct("Severity", 1)?;
                st.serialize_field("range", &[lo, hi])?;
                st.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Severity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Fixed(f64),
            Range { range: [f64; 2] },
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Fixed(v) => Severity::Fixed(v),
            Repr::Range { range } => Severity::Range {
                lo: range[0],
                hi: range[1],
            },
        })
    }
}

/// The corruption process A(·).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardOperator {
    Identity,
    /// Zeroes each pixel site (all channels together) with probability `p`.
    #[serde(rename = "mask")]
    RandomMask {
        p: Severity,
        /// Draw an exact round(p·H·W)-pixel subset instead of i.i.d.
        /// Bernoulli sites.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        exact_count: bool,
    },
    /// Adds i.i.d. N(0, sigma²) per pixel per channel; not clipped.
    #[serde(rename = "noise")]
    GaussianNoise { sigma: Severity },
    /// Separable Gaussian kernel with reflection padding; deterministic for
    /// a fixed sigma.
    #[serde(rename = "blur")]
    GaussianBlur { kernel_size: usize, sigma: Severity },
    Compose { ops: Vec<ForwardOperator> },
}

impl ForwardOperator {
    pub fn mask(p: Severity) -> Self {
        ForwardOperator::RandomMask {
            p,
            exact_count: false,
        }
    }

    pub fn noise(sigma: Severity) -> Self {
        ForwardOperator::GaussianNoise { sigma }
    }

    pub fn blur(kernel_size: usize, sigma: f64) -> Self {
        ForwardOperator::GaussianBlur {
            kernel_size,
            sigma: Severity::Fixed(sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ForwardOperator::Identity => Ok(()),
            ForwardOperator::RandomMask { p, .. } => p.validate(0.0, 1.0, "mask fraction"),
            ForwardOperator::GaussianNoise { sigma } => {
                sigma.validate(0.0, f64::INFINITY, "noise std")
            }
            ForwardOperator::GaussianBlur { kernel_size, sigma } => {
                if kernel_size % 2 == 0 || *kernel_size == 0 {
                    return Err(Error::Domain(format!(
                        "blur kernel size {kernel_size} must be odd and positive"
                    )));
                }
                let (lo, _) = sigma.bounds();
                if lo <= 0.0 {
                    return Err(Error::Domain("blur std must be positive".to_string()));
                }
                Ok(())
            }
            ForwardOperator::Compose { ops } => {
                for op in ops {
                    op.validate()?;
                }
                Ok(())
            }
        }
    }

    /// True when repeated applications with fresh streams give identical
    /// outputs (the stderr reporting rule keys off this).
    pub fn is_deterministic(&self) -> bool {
        match self {
            ForwardOperator::Identity => true,
            ForwardOperator::RandomMask { .. } => false,
            ForwardOperator::GaussianNoise { .. } => false,
            ForwardOperator::GaussianBlur { sigma, .. } => sigma.is_fixed(),
            ForwardOperator::Compose { ops } => ops.iter().all(|o| o.is_deterministic()),
        }
    }

    /// (kind, severity) strings for report rows.
    pub fn describe(&self) -> (String, String) {
        fn sev(s: &Severity) -> String {
            match *s {
                Severity::Fixed(v) => format!("{v}"),
                Severity::Range { lo, hi } => format!("range({lo},{hi})"),
            }
        }
        match self {
            ForwardOperator::Identity => ("identity".into(), String::new()),
            ForwardOperator::RandomMask { p, .. } => ("mask".into(), format!("p={}", sev(p))),
            ForwardOperator::GaussianNoise { sigma } => {
                ("noise".into(), format!("sigma={}", sev(sigma)))
            }
            ForwardOperator::GaussianBlur { kernel_size, sigma } => (
                "blur".into(),
                format!("n={kernel_size},sigma={}", sev(sigma)),
            ),
            ForwardOperator::Compose { ops } => (
                "compose".into(),
                ops.iter()
                    .map(|o| {
                        let (k, s) = o.describe();
                        if s.is_empty() {
                            k
                        } else {
                            format!("{k}[{s}]")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("+"),
            ),
        }
    }
}

/// A B×C×H×W pixel batch. Corruption is legal only before normalization.
#[derive(Debug, Clone)]
pub struct ImageBatch<T: Element> {
    pub values: Tensor<T>,
    pub normalized: bool,
    /// Set once any corruption has been applied; lets training loops assert
    /// that the teacher never sees corrupted inputs.
    pub corrupted: bool,
}

impl<T: Element> ImageBatch<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "image batch must be B×C×H×W, got {:?}",
                values.shape()
            )));
        }
        Ok(ImageBatch {
            values,
            normalized: false,
            corrupted: false,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2], s[3])
    }

    fn check_corruptible(&self) -> Result<()> {
        if self.normalized {
            return Err(Error::Contract(
                "corruption must precede normalization (distort, then normalize)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Dispatches on the operator kind; `Compose` applies left to right with the
/// same stream.
pub fn apply<T: Element>(
    op: &ForwardOperator,
    batch: &ImageBatch<T>,
    rng: &mut RngStream,
) -> Result<ImageBatch<T>> {
    batch.check_corruptible()?;
    op.validate()?;
    match op {
        ForwardOperator::Identity => Ok(batch.clone()),
        ForwardOperator::RandomMask { p, exact_count } => mask_batch(batch, *p, *exact_count, rng),
        ForwardOperator::GaussianNoise { sigma } => noise_batch(batch, *sigma, rng),
        ForwardOperator::GaussianBlur { kernel_size, sigma } => match sigma {
            Severity::Fixed(v) => apply_blur(batch, *kernel_size, *v),
            Severity::Range { .. } => blur_batch_ranged(batch, *kernel_size, *sigma, rng),
        },
        ForwardOperator::Compose { ops } => {
            let mut cur = batch.clone();
            for op in ops {
                cur = apply(op, &cur, rng)?;
            }
            cur.corrupted = true;
            Ok(cur)
        }
    }
}

/// Zeroes each pixel site of each image (all channels together) with
/// probability `p`; draws are independent per pixel and per image.
pub fn apply_mask<T: Element>(
    batch: &ImageBatch<T>,
    p: f64,
    rng: &mut RngStream,
) -> Result<ImageBatch<T>> {
    mask_batch(batch, Severity::Fixed(p), false, rng)
}

fn mask_batch<T: Element>(
    batch: &ImageBatch<T>,
    p: Severity,
    exact_count: bool,
    rng: &mut RngStream,
) -> Result<ImageBatch<T>> {
    p.validate(0.0, 1.0, "mask fraction")?;
    batch.check_corruptible()?;
    let (b, c, h, w) = batch.dims();
    let hw = h * w;
    let mut data = batch.values.data_vec();
    for bi in 0..b {
        let pi = p.realize(rng);
        if exact_count {
            let k = (pi * hw as f64).round() as usize;
            let chosen = rng.index_subset(hw, k.min(hw))?;
            for site in chosen {
                for ci in 0..c {
                    data[(bi * c + ci) * hw + site] = T::zero();
                }
            }
        } else {
            for site in 0..hw {
                if rng.bernoulli(pi) {
                    for ci in 0..c {
                        data[(bi * c + ci) * hw + site] = T::zero();
                    }
                }
            }
        }
    }
    Ok(ImageBatch {
        values: Tensor::from_vec(batch.values.shape(), data)?,
        normalized: false,
        corrupted: true,
    })
}

/// Adds i.i.d. N(0, sigma²) to every pixel of every channel; no clipping.
pub fn apply_noise<T: Element>(
    batch: &ImageBatch<T>,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<ImageBatch<T>> {
    noise_batch(batch, Severity::Fixed(sigma), rng)
}

fn noise_batch<T: Element>(
    batch: &ImageBatch<T>,
    sigma: Severity,
    rng: &mut RngStream,
) -> Result<ImageBatch<T>> {
    sigma.validate(0.0, f64::INFINITY, "noise std")?;
    batch.check_corruptible()?;
    let (b, c, h, w) = batch.dims();
    let chw = c * h * w;
    let mut data = batch.values.data_vec();
    for bi in 0..b {
        let s = sigma.realize(rng);
        for v in &mut data[bi * chw..(bi + 1) * chw] {
            *v = *v + T::of(s * rng.standard_normal());
        }
    }
    Ok(ImageBatch {
        values: Tensor::from_vec(batch.values.shape(), data)?,
        normalized: false,
        corrupted: true,
    })
}

/// Normalized Gaussian taps at integer offsets -(n-1)/2 ..= (n-1)/2. The
/// residual after normalization is folded into the center tap so the taps
/// sum to 1 at machine precision.
pub fn gaussian_kernel(n: usize, sigma: f64) -> Result<Vec<f64>> {
    if n % 2 == 0 || n == 0 {
        return Err(Error::Domain(format!("blur kernel size {n} must be odd")));
    }
    if sigma <= 0.0 {
        return Err(Error::Domain("blur std must be positive".to_string()));
    }
    let r = (n / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    for _ in 0..2 {
        let s: f64 = k.iter().sum();
        k[r as usize] -= s - 1.0;
    }
    Ok(k)
}

fn mirror(i: isize, len: usize) -> usize {
    // reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
    let len = len as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * len - 2 - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflection padding. Deterministic: no rng.
pub fn apply_blur<T: Element>(
    batch: &ImageBatch<T>,
    n: usize,
    sigma: f64,
) -> Result<ImageBatch<T>> {
    batch.check_corruptible()?;
    let kernel = gaussian_kernel(n, sigma)?;
    let (b, c, h, w) = batch.dims();
    let r = n / 2;
    if r >= h || r >= w {
        return Err(Error::Domain(format!(
            "blur radius {r} too large for {h}×{w} images"
        )));
    }
    let k: Vec<T> = kernel.iter().map(|&v| T::of(v)).collect();
    let src = batch.values.data_vec();
    let mut tmp = vec![T::zero(); h * w];
    let mut out = vec![T::zero(); src.len()];
    for plane_idx in 0..b * c {
        let plane = &src[plane_idx * h * w..(plane_idx + 1) * h * w];
        // horizontal pass
        for y in 0..h {
            for x in 0..w {
                let mut s = T::zero();
                for (ki, &kv) in k.iter().enumerate() {
                    let xi = mirror(x as isize + ki as isize - r as isize, w);
                    s = s + kv * plane[y * w + xi];
                }
                tmp[y * w + x] = s;
            }
        }
        // vertical pass
        let dst = &mut out[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = T::zero();
                for (ki, &kv) in k.iter().enumerate() {
                    let yi = mirror(y as isize + ki as isize - r as isize, h);
                    s = s + kv * tmp[yi * w + x];
                }
                dst[y * w + x] = s;
            }
        }
    }
    Ok(ImageBatch {
        values: Tensor::from_vec(batch.values.shape(), out)?,
        normalized: false,
        corrupted: true,
    })
}

fn blur_batch_ranged<T: Element>(
    batch: &ImageBatch<T>,
    n: usize,
    sigma: Severity,
    rng: &mut RngStream,
) -> Result<ImageBatch<T>> {
    let (b, c, h, w) = batch.dims();
    let chw = c * h * w;
    let src = batch.values.data_vec();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        let s = sigma.realize(rng);
        let one = ImageBatch::new(Tensor::from_vec(
            &[1, c, h, w],
            src[bi * chw..(bi + 1) * chw].to_vec(),
        )?)?;
        out.extend_from_slice(&apply_blur(&one, n, s)?.values.data_vec());
    }
    Ok(ImageBatch {
        values: Tensor::from_vec(batch.values.shape(), out)?,
        normalized: false,
        corrupted: true,
    })
}

/// Resolves every ranged severity to a fixed draw (uniform in [lo, hi]).
pub fn sample_operator_instance(
    op: &ForwardOperator,
    rng: &mut RngStream,
) -> Result<ForwardOperator> {
    op.validate()?;
    Ok(match op {
        ForwardOperator::Identity => ForwardOperator::Identity,
        ForwardOperator::RandomMask { p, exact_count } => ForwardOperator::RandomMask {
            p: Severity::Fixed(p.realize(rng)),
            exact_count: *exact_count,
        },
        ForwardOperator::GaussianNoise { sigma } => ForwardOperator::GaussianNoise {
            sigma: Severity::Fixed(sigma.realize(rng)),
        },
        ForwardOperator::GaussianBlur { kernel_size, sigma } => ForwardOperator::GaussianBlur {
            kernel_size: *kernel_size,
            sigma: Severity::Fixed(sigma.realize(rng)),
        },
        ForwardOperator::Compose { ops } => ForwardOperator::Compose {
            ops: ops
                .iter()
                .map(|o| sample_operator_instance(o, rng))
                .collect::<Result<Vec<_>>>()?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(shape: &[usize], fill: f64) -> ImageBatch<f64> {
        ImageBatch::new(Tensor::full(shape, fill).unwrap()).unwrap()
    }

    #[test]
    fn mask_p_zero_is_identity() {
        let b = batch(&[2, 3, 4, 4], 0.5);
        let mut rng = RngStream::new(1, "m0");
        let out = apply_mask(&b, 0.0, &mut rng).unwrap();
        assert_eq!(out.values.data_vec(), b.values.data_vec());
        assert!(out.corrupted);
    }

    #[test]
    fn mask_p_one_zeroes_everything() {
        let b = batch(&[2, 3, 4, 4], 0.5);
        let mut rng = RngStream::new(1, "m1");
        let out = apply_mask(&b, 1.0, &mut rng).unwrap();
        assert!(out.values.data_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_rejects_bad_fraction() {
        let b = batch(&[1, 1, 2, 2], 0.5);
        let mut rng = RngStream::new(1, "mbad");
        assert!(matches!(apply_mask(&b, 1.5, &mut rng), Err(Error::Domain(_))));
        assert!(matches!(apply_mask(&b, -0.1, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn mask_zeroes_channels_together() {
        let b = batch(&[2, 3, 8, 8], 1.0);
        let mut rng = RngStream::new(7, "mch");
        let out = apply_mask(&b, 0.5, &mut rng).unwrap();
        let (_, c, h, w) = out.dims();
        let data = out.values.data_vec();
        for bi in 0..2 {
            for site in 0..h * w {
                let vals: Vec<f64> =
                    (0..c).map(|ci| data[(bi * c + ci) * h * w + site]).collect();
                assert!(
                    vals.iter().all(|&v| v == 0.0) || vals.iter().all(|&v| v == 1.0),
                    "channels disagree at image {bi} site {site}: {vals:?}"
                );
            }
        }
    }

    #[test]
    fn exact_count_mask_hits_requested_fraction() {
        let b = batch(&[1, 1, 32, 32], 1.0);
        let mut rng = RngStream::new(9, "mexact");
        let out = mask_batch(&b, Severity::Fixed(0.25), true, &mut rng).unwrap();
        let zeros = out.values.data_vec().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 256);
    }

    #[test]
    fn noise_sigma_zero_is_identity() {
        let b = batch(&[1, 2, 4, 4], 0.3);
        let mut rng = RngStream::new(2, "n0");
        let out = apply_noise(&b, 0.0, &mut rng).unwrap();
        assert_eq!(out.values.data_vec(), b.values.data_vec());
        assert!(matches!(
            apply_noise(&b, -0.5, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn blur_preserves_constant_images() {
        let b = batch(&[1, 2, 16, 16], 0.37);
        let out = apply_blur(&b, 5, 1.5).unwrap();
        for v in out.values.data_vec() {
            assert!((v - 0.37).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn blur_kernel_sums_to_one() {
        for (n, s) in [(21usize, 5.0f64), (37, 9.0), (3, 0.5), (9, 2.0)] {
            let k = gaussian_kernel(n, s).unwrap();
            let sum: f64 = k.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "n={n} sigma={s} sum={sum}");
        }
        assert!(matches!(gaussian_kernel(4, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn blur_delta_recovers_kernel_outer_product() {
        // a centered delta response is the outer product of the 1-d kernel
        // with itself
        let (h, w) = (17usize, 17usize);
        let mut data = vec![0.0f64; h * w];
        data[(h / 2) * w + w / 2] = 1.0;
        let b = ImageBatch::new(Tensor::from_vec(&[1, 1, h, w], data).unwrap()).unwrap();
        let (n, sigma) = (5usize, 1.2f64);
        let out = apply_blur(&b, n, sigma).unwrap().values.data_vec();
        let k = gaussian_kernel(n, sigma).unwrap();
        let r = n / 2;
        for dy in 0..n {
            for dx in 0..n {
                let y = h / 2 + dy - r;
                let x = w / 2 + dx - r;
                let want = k[dy] * k[dx];
                assert!((out[y * w + x] - want).abs() < 1e-12);
            }
        }
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn corrupting_normalized_batch_is_contract_error() {
        let mut b = batch(&[1, 1, 4, 4], 0.5);
        b.normalized = true;
        let mut rng = RngStream::new(3, "norm");
        assert!(matches!(
            apply(&ForwardOperator::mask(Severity::Fixed(0.5)), &b, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identity_and_identity_compose_are_noops() {
        let b = batch(&[2, 1, 4, 4], 0.9);
        let mut rng = RngStream::new(4, "id");
        let out = apply(&ForwardOperator::Identity, &b, &mut rng).unwrap();
        assert_eq!(out.values.data_vec(), b.values.data_vec());
        let comp = ForwardOperator::Compose {
            ops: vec![ForwardOperator::Identity, ForwardOperator::Identity],
        };
        let out = apply(&comp, &b, &mut rng).unwrap();
        assert_eq!(out.values.data_vec(), b.values.data_vec());
    }

    #[test]
    fn compose_equals_sequential_application() {
        let b = batch(&[3, 2, 8, 8], 0.6);
        let comp = ForwardOperator::Compose {
            ops: vec![
                ForwardOperator::mask(Severity::Fixed(0.5)),
                ForwardOperator::noise(Severity::Fixed(0.1)),
            ],
        };
        let mut rng1 = RngStream::new(11, "comp");
        let got = apply(&comp, &b, &mut rng1).unwrap();

        // oracle: apply the two operators one after the other with the same
        // stream start state
        let mut rng2 = RngStream::new(11, "comp");
        let step1 = apply(&ForwardOperator::mask(Severity::Fixed(0.5)), &b, &mut rng2).unwrap();
        let step2 =
            apply(&ForwardOperator::noise(Severity::Fixed(0.1)), &step1, &mut rng2).unwrap();
        assert_eq!(got.values.data_vec(), step2.values.data_vec());
    }

    #[test]
    fn degenerate_range_realizes_to_its_endpoint() {
        let op = ForwardOperator::mask(Severity::Range { lo: 0.5, hi: 0.5 });
        let mut rng = RngStream::new(5, "deg");
        match sample_operator_instance(&op, &mut rng).unwrap() {
            ForwardOperator::RandomMask {
                p: Severity::Fixed(v),
                ..
            } => assert_eq!(v, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn determinism_flags() {
        assert!(ForwardOperator::Identity.is_deterministic());
        assert!(ForwardOperator::blur(21, 5.0).is_deterministic());
        assert!(!ForwardOperator::mask(Severity::Fixed(0.9)).is_deterministic());
        assert!(!ForwardOperator::noise(Severity::Fixed(0.5)).is_deterministic());
        let mixed = ForwardOperator::Compose {
            ops: vec![ForwardOperator::Identity, ForwardOperator::blur(3, 1.0)],
        };
        assert!(mixed.is_deterministic());
    }

    #[test]
    fn operator_json_round_trip() {
        let ops = vec![
            ForwardOperator::Identity,
            ForwardOperator::mask(Severity::Range { lo: 0.5, hi: 0.95 }),
            ForwardOperator::noise(Severity::Fixed(0.5)),
            ForwardOperator::blur(21, 5.0),
            ForwardOperator::Compose {
                ops: vec![
                    ForwardOperator::mask(Severity::Fixed(0.5)),
                    ForwardOperator::noise(Severity::Fixed(0.1)),
                ],
            },
        ];
        for op in ops {
            let json = serde_json::to_string(&op).unwrap();
            let back: ForwardOperator = serde_json::from_str(&json).unwrap();
            assert_eq!(op, back, "{json}");
        }
        let parsed: ForwardOperator =
            serde_json::from_str(r#"{"kind":"mask","p":{"range":[0.5,0.95]}}"#).unwrap();
        assert_eq!(
            parsed,
            ForwardOperator::mask(Severity::Range { lo: 0.5, hi: 0.95 })
        );
    }
}

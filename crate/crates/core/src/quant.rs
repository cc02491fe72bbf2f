//! Signed fixed-point representation and quantized inference.
//!
//! A [`FixedPointFormat`] `Qb.f` stores values as `b`-bit two's-complement
//! codes with `f` fractional bits. Quantization rounds half to even and
//! saturates instead of wrapping; saturations are counted rather than
//! reported as errors. During quantized inference, weights and every
//! inter-layer activation are snapped to the format, while the products
//! and sums inside a single output element stay in full `f64` precision
//! and are requantized exactly once at the write, mirroring a wide MAC
//! datapath. The number of quantizations is therefore independent of loop
//! and tile order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Tensor;
use crate::network::{infer_with, NetworkSpec, WeightStore};

/// Total bitwidth and fractional split of a signed fixed-point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    /// Total bits including sign, in `[2, 32]`.
    pub total_bits: u32,
    /// Fractional bits, in `[0, total_bits)`.
    pub frac_bits: u32,
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(Error::Parse(format!(
                "invalid fixed-point format Q{total_bits}.{frac_bits}"
            )));
        }
        Ok(FixedPointFormat { total_bits, frac_bits })
    }

    /// Default integer/fraction split for a bitwidth: four integer bits
    /// (including sign) are kept for pre-activation headroom, the rest go
    /// to the fraction.
    pub fn with_default_split(total_bits: u32) -> Result<Self> {
        FixedPointFormat::new(total_bits, total_bits.saturating_sub(4))
    }

    /// Parses the `"Qb.f"` notation, e.g. `"Q12.8"`.
    pub fn parse(text: &str) -> Result<Self> {
        let body = text
            .strip_prefix('Q')
            .ok_or_else(|| Error::Parse(format!("format {text:?} must start with 'Q'")))?;
        let (b, f) = body
            .split_once('.')
            .ok_or_else(|| Error::Parse(format!("format {text:?} must look like Qb.f")))?;
        let total = b.parse::<u32>().map_err(|e| Error::Parse(format!("bad bit count in {text:?}: {e}")))?;
        let frac = f.parse::<u32>().map_err(|e| Error::Parse(format!("bad fraction in {text:?}: {e}")))?;
        FixedPointFormat::new(total, frac)
    }

    /// Smallest representable code, `-2^(b-1)`.
    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Largest representable code, `2^(b-1) - 1`.
    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Value of one code step, `2^-f`.
    pub fn step(&self) -> f64 {
        (self.frac_bits as f64 * -1.0).exp2()
    }

    /// Representable value range `[min, max]`.
    pub fn value_range(&self) -> (f64, f64) {
        (self.min_code() as f64 * self.step(), self.max_code() as f64 * self.step())
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q{}.{}", self.total_bits, self.frac_bits)
    }
}

/// Tensor of integer codes in a fixed-point format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTensor {
    pub dims: Vec<usize>,
    pub codes: Vec<i64>,
    pub format: FixedPointFormat,
}

impl QuantTensor {
    /// Quantizes a real tensor, returning the codes and the number of
    /// saturated elements.
    pub fn from_tensor(tensor: &Tensor, format: FixedPointFormat) -> (Self, u64) {
        let mut saturated = 0u64;
        let codes = tensor
            .data
            .iter()
            .map(|&x| quantize_counting(x, format, &mut saturated))
            .collect();
        (
            QuantTensor { dims: tensor.dims.clone(), codes, format },
            saturated,
        )
    }

    pub fn dequantize(&self) -> Tensor {
        let step = self.format.step();
        Tensor {
            dims: self.dims.clone(),
            data: self.codes.iter().map(|&c| c as f64 * step).collect(),
        }
    }
}

/// Quantizes one value: scale by `2^f`, round half to even, saturate.
pub fn quantize(x: f64, fmt: FixedPointFormat) -> i64 {
    let mut ignored = 0;
    quantize_counting(x, fmt, &mut ignored)
}

fn quantize_counting(x: f64, fmt: FixedPointFormat, saturated: &mut u64) -> i64 {
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
    if scaled < fmt.min_code() as f64 {
        *saturated += 1;
        fmt.min_code()
    } else if scaled > fmt.max_code() as f64 {
        *saturated += 1;
        fmt.max_code()
    } else if scaled.is_nan() {
        *saturated += 1;
        0
    } else {
        scaled as i64
    }
}

/// Real value of a code: `code * 2^-f`.
pub fn dequantize(code: i64, fmt: FixedPointFormat) -> f64 {
    code as f64 * fmt.step()
}

/// Counters accumulated over one quantized inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QuantStats {
    /// Values clamped to the format's range.
    pub saturated: u64,
    /// Total quantize operations performed.
    pub total: u64,
}

/// Snaps every element to the nearest representable value.
fn snap(tensor: &Tensor, fmt: FixedPointFormat, stats: &mut QuantStats) -> Tensor {
    let step = fmt.step();
    stats.total += tensor.data.len() as u64;
    Tensor {
        dims: tensor.dims.clone(),
        data: tensor
            .data
            .iter()
            .map(|&x| quantize_counting(x, fmt, &mut stats.saturated) as f64 * step)
            .collect(),
    }
}

/// Quantized inference: like [`crate::network::infer`], with weights and
/// activations constrained to `fmt`.
pub fn quantized_infer(net: &NetworkSpec, weights: &WeightStore, z: &[f64], fmt: FixedPointFormat) -> Result<Tensor> {
    quantized_infer_with_stats(net, weights, z, fmt).map(|(out, _)| out)
}

/// Quantized inference, also reporting the saturation statistic.
pub fn quantized_infer_with_stats(
    net: &NetworkSpec,
    weights: &WeightStore,
    z: &[f64],
    fmt: FixedPointFormat,
) -> Result<(Tensor, QuantStats)> {
    let mut stats = QuantStats::default();
    let out = infer_with(net, weights, z, &mut |tensor| snap(tensor, fmt, &mut stats))?;
    Ok((out, stats))
}

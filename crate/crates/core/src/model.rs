//! Dimensional configuration, tensors and the shape arithmetic shared by
//! every other module.
//!
//! All types here are immutable values after construction and every
//! function is pure, so they can be shared freely across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensional parameters of one deconvolution (transposed convolution)
/// layer: a square `k x k` kernel applied with stride `s` and zero padding
/// `p`, mapping `i_c x i_h x i_w` feature maps to `o_c x o_h x o_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    /// Input channels.
    pub i_c: usize,
    /// Input height in pixels.
    pub i_h: usize,
    /// Input width in pixels.
    pub i_w: usize,
    /// Output channels.
    pub o_c: usize,
    /// Square kernel extent in pixels.
    pub k: usize,
    /// Stride (>= 1).
    pub s: usize,
    /// Zero padding trimmed from each output border.
    pub p: usize,
}

impl LayerConfig {
    /// Builds a validated layer configuration.
    pub fn new(i_c: usize, i_h: usize, i_w: usize, o_c: usize, k: usize, s: usize, p: usize) -> Result<Self> {
        let layer = LayerConfig { i_c, i_h, i_w, o_c, k, s, p };
        layer.validate()?;
        Ok(layer)
    }

    /// Checks every structural invariant. Layers whose output extent is not
    /// a multiple of the stride are rejected here: the gather-side loop
    /// recast assumes `o_h / s` and `o_w / s` are integers.
    pub fn validate(&self) -> Result<()> {
        if self.i_c < 1 || self.i_h < 1 || self.i_w < 1 || self.o_c < 1 || self.k < 1 || self.s < 1 {
            return Err(Error::InvalidLayer(format!(
                "all dimensions must be >= 1: {self:?}"
            )));
        }
        if self.p >= self.k {
            return Err(Error::InvalidLayer(format!(
                "padding {} must be smaller than kernel {}",
                self.p, self.k
            )));
        }
        let (o_h, o_w) = output_shape(self)?;
        if o_h % self.s != 0 || o_w % self.s != 0 {
            return Err(Error::InvalidLayer(format!(
                "output extent {o_h}x{o_w} is not a multiple of stride {}",
                self.s
            )));
        }
        Ok(())
    }

    /// Output shape of this layer, `(o_h, o_w)`.
    pub fn output(&self) -> Result<(usize, usize)> {
        output_shape(self)
    }
}

/// The four tiling factors defining one accelerator design point: output
/// tile height/width, output-channel block and input-channel block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileConfig {
    pub t_oh: usize,
    pub t_ow: usize,
    pub t_oc: usize,
    pub t_ic: usize,
}

impl TileConfig {
    pub fn new(t_oh: usize, t_ow: usize, t_oc: usize, t_ic: usize) -> Self {
        TileConfig { t_oh, t_ow, t_oc, t_ic }
    }

    /// The single-tile configuration spanning the whole layer.
    pub fn full(layer: &LayerConfig) -> Result<Self> {
        let (o_h, o_w) = layer.output()?;
        Ok(TileConfig::new(o_h, o_w, layer.o_c, layer.i_c))
    }

    /// Checks `0 < t <= bound` for each factor against the layer's output
    /// and input dimensions.
    pub fn validate_for(&self, layer: &LayerConfig) -> Result<()> {
        let (o_h, o_w) = layer.output()?;
        let checks = [
            ("t_oh", self.t_oh, o_h),
            ("t_ow", self.t_ow, o_w),
            ("t_oc", self.t_oc, layer.o_c),
            ("t_ic", self.t_ic, layer.i_c),
        ];
        for (name, value, bound) in checks {
            if value < 1 || value > bound {
                return Err(Error::InvalidTile(format!(
                    "{name} = {value} outside (0, {bound}]"
                )));
            }
        }
        Ok(())
    }
}

/// Dense row-major tensor of 64-bit reals. Three-dimensional feature maps
/// are laid out `[channels, height, width]`; kernels are
/// `[o_c, i_c, k, k]`; matrices are `[rows, cols]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "tensor construction",
                format!("{expected} elements for dims {dims:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor { dims, data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of `(c, h, w)` in a `[C, H, W]` tensor.
    #[inline]
    pub fn idx3(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.dims.len(), 3);
        (c * self.dims[1] + h) * self.dims[2] + w
    }

    /// Flat offset of `(a, b, c, d)` in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        debug_assert_eq!(self.dims.len(), 4);
        ((a * self.dims[1] + b) * self.dims[2] + c) * self.dims[3] + d
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx3(c, h, w)]
    }

    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.idx4(a, b, c, d)]
    }
}

/// Output extent along one axis: `s*(i - 1) + k - 2p`.
///
/// Errors with [`Error::NonPositiveOutput`] when the formula yields a value
/// below 1 (possible for small inputs with large padding).
pub fn output_extent(i: usize, s: usize, k: usize, p: usize) -> Result<usize> {
    let extent = s as i64 * (i as i64 - 1) + k as i64 - 2 * p as i64;
    if extent < 1 {
        return Err(Error::NonPositiveOutput {
            extent,
            input: i,
            stride: s,
            kernel: k,
            padding: p,
        });
    }
    Ok(extent as usize)
}

/// Output shape `(o_h, o_w)` of a deconvolution layer.
pub fn output_shape(layer: &LayerConfig) -> Result<(usize, usize)> {
    let o_h = output_extent(layer.i_h, layer.s, layer.k, layer.p)?;
    let o_w = output_extent(layer.i_w, layer.s, layer.k, layer.p)?;
    Ok((o_h, o_w))
}

/// Output extent of a tile deconvolved in isolation: `s*(t_ih - 1) + k`.
/// Interior tiles see no padding, so the `-2p` term of the full-layer
/// formula does not apply.
pub fn tile_output_extent(t_ih: usize, s: usize, k: usize) -> usize {
    debug_assert!(t_ih >= 1);
    s * (t_ih - 1) + k
}

/// How many surplus output pixels an input-space tiling produces along one
/// axis: `ceil(i_h / t_ih) * tile_output_extent(t_ih) - o_h`.
///
/// Independent tiles re-compute overlapping output regions, so the total
/// extent of all tile outputs exceeds the final output whenever the kernel
/// footprint spans tile boundaries. The excess equals `2p` for a single
/// tile and can be negative only for degenerate layers with `k < s`.
pub fn overlap_excess(layer: &LayerConfig, t_ih: usize) -> Result<i64> {
    if t_ih < 1 || t_ih > layer.i_h {
        return Err(Error::InvalidTile(format!(
            "t_ih = {t_ih} outside (0, {}]",
            layer.i_h
        )));
    }
    let (o_h, _) = layer.output()?;
    let tiles = layer.i_h.div_ceil(t_ih) as i64;
    Ok(tiles * tile_output_extent(t_ih, layer.s, layer.k) as i64 - o_h as i64)
}

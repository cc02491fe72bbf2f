//! Two equivalent deconvolution executions.
//!
//! [`deconv_reference`] scatters: each input pixel is multiplied by the
//! whole kernel and accumulated into a strided output window, then the
//! padded border is discarded. This is the processor-friendly formulation.
//!
//! [`deconv_reverse`] gathers: it walks output tiles and pulls in exactly
//! the input pixels that contribute, the way a tiled accelerator would.
//! Iterating the raw gather index `(o + p - k) / s` over all output
//! coordinates produces fractional values; instead, for each kernel index
//! the valid output coordinates are enumerated directly as `o = s*q + f`
//! where `f` is the per-kernel-index stride offset. Every gathered index is
//! integral by construction, so no fractional-index check is needed in the
//! inner loop, and output tiles never overlap, so no cross-tile summation
//! ever happens.
//!
//! Both paths are pure functions; distinct tiles write disjoint output
//! regions and may run in any order (or concurrently) with identical
//! results on integer-valued inputs.

use crate::error::{Error, Result};
use crate::model::{LayerConfig, TileConfig, Tensor};

/// Offset `f` in `[0, s)` such that output coordinates `o = s*q + f` are
/// exactly those satisfying `(o + p - k) mod s = 0` for kernel index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrideOffset {
    pub f: usize,
}

/// One accelerator visit: an output tile origin plus the input-channel
/// block processed during the visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TileVisit {
    pub o_c0: usize,
    pub o_h0: usize,
    pub o_w0: usize,
    pub i_c0: usize,
    /// True on the final input-channel block of an output tile, when the
    /// accumulated tile would be written back to external memory.
    pub last_ic_block: bool,
}

/// Ordered list of tile visits covering the whole output space exactly
/// once per input-channel block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiledSchedule {
    pub visits: Vec<TileVisit>,
}

/// Stride offset for kernel index `k`, padding `p` and stride `s`:
/// `f = (s - ((p - k) mod s)) mod s` with the Euclidean convention, so the
/// result lies in `[0, s)` even when `p - k` is negative.
pub fn stride_offset(k: usize, p: usize, s: usize) -> StrideOffset {
    debug_assert!(s >= 1);
    let s_i = s as i64;
    let f = (s_i - (p as i64 - k as i64).rem_euclid(s_i)).rem_euclid(s_i);
    StrideOffset { f: f as usize }
}

/// Gather index `(o + p - k) / s` for an output coordinate and kernel
/// index. The result may fall outside the input range; callers must bounds
/// check. Errors when the division is not exact, which cannot happen for
/// coordinates enumerated through [`stride_offset`].
pub fn input_index(o: usize, k: usize, p: usize, s: usize) -> Result<i64> {
    let num = o as i64 + p as i64 - k as i64;
    if num.rem_euclid(s as i64) != 0 {
        return Err(Error::NonIntegerIndex {
            output: o,
            padding: p,
            kernel_index: k,
            stride: s,
        });
    }
    Ok(num.div_euclid(s as i64))
}

fn check_exec_shapes(input: &Tensor, kernel: &Tensor, layer: &LayerConfig) -> Result<(usize, usize)> {
    layer.validate()?;
    if input.dims != [layer.i_c, layer.i_h, layer.i_w] {
        return Err(Error::shape(
            "deconvolution input",
            format!("[{}, {}, {}]", layer.i_c, layer.i_h, layer.i_w),
            format!("{:?}", input.dims),
        ));
    }
    if kernel.dims != [layer.o_c, layer.i_c, layer.k, layer.k] {
        return Err(Error::shape(
            "deconvolution kernel",
            format!("[{}, {}, {}, {}]", layer.o_c, layer.i_c, layer.k, layer.k),
            format!("{:?}", kernel.dims),
        ));
    }
    layer.output()
}

/// Scatter-style deconvolution. Loop order is input channel, input row,
/// input column, output channel, kernel row, kernel column; contributions
/// landing in the trimmed `p`-pixel border are discarded.
pub fn deconv_reference(input: &Tensor, kernel: &Tensor, layer: &LayerConfig) -> Result<Tensor> {
    let (o_h, o_w) = check_exec_shapes(input, kernel, layer)?;
    let mut out = Tensor::zeros(vec![layer.o_c, o_h, o_w]);
    for i_c in 0..layer.i_c {
        for i_h in 0..layer.i_h {
            for i_w in 0..layer.i_w {
                let x = input.at3(i_c, i_h, i_w);
                for o_c in 0..layer.o_c {
                    for k_h in 0..layer.k {
                        let oh = (layer.s * i_h + k_h) as i64 - layer.p as i64;
                        if oh < 0 || oh >= o_h as i64 {
                            continue;
                        }
                        for k_w in 0..layer.k {
                            let ow = (layer.s * i_w + k_w) as i64 - layer.p as i64;
                            if ow < 0 || ow >= o_w as i64 {
                                continue;
                            }
                            let idx = out.idx3(o_c, oh as usize, ow as usize);
                            out.data[idx] += x * kernel.at4(o_c, i_c, k_h, k_w);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Visit order: output-channel blocks, output-row blocks, output-column
/// blocks, then input-channel blocks innermost, so each output tile stays
/// resident while its input-channel partials accumulate.
pub fn build_schedule(layer: &LayerConfig, tile: &TileConfig) -> Result<TiledSchedule> {
    layer.validate()?;
    tile.validate_for(layer)?;
    let (o_h, o_w) = layer.output()?;
    let mut visits = Vec::new();
    for o_c0 in (0..layer.o_c).step_by(tile.t_oc) {
        for o_h0 in (0..o_h).step_by(tile.t_oh) {
            for o_w0 in (0..o_w).step_by(tile.t_ow) {
                for i_c0 in (0..layer.i_c).step_by(tile.t_ic) {
                    visits.push(TileVisit {
                        o_c0,
                        o_h0,
                        o_w0,
                        i_c0,
                        last_ic_block: i_c0 + tile.t_ic >= layer.i_c,
                    });
                }
            }
        }
    }
    Ok(TiledSchedule { visits })
}

/// Range of loop counters `q` such that `o = s*q + f` stays inside
/// `[lo, hi)` and the gathered input index `q + base` stays inside
/// `[0, extent)`. Returns an inclusive `(start, end)` pair, empty when
/// `start > end`.
fn gather_range(lo: usize, hi: usize, f: usize, s: usize, base: i64, extent: usize) -> (i64, i64) {
    let s = s as i64;
    let start = (lo as i64 - f as i64).div_euclid(s)
        + i64::from((lo as i64 - f as i64).rem_euclid(s) != 0);
    let end = (hi as i64 - 1 - f as i64).div_euclid(s);
    (start.max(-base).max(0), end.min(extent as i64 - 1 - base))
}

/// Gather-style deconvolution over an explicit tiling. Produces exactly
/// the values of [`deconv_reference`] (bit-identical on integer-valued
/// inputs); gathers whose input index falls outside the input feature map
/// correspond to the trimmed border and are skipped.
pub fn deconv_reverse(input: &Tensor, kernel: &Tensor, layer: &LayerConfig, tile: &TileConfig) -> Result<Tensor> {
    let (o_h, o_w) = check_exec_shapes(input, kernel, layer)?;
    let schedule = build_schedule(layer, tile)?;
    let mut out = Tensor::zeros(vec![layer.o_c, o_h, o_w]);
    let s = layer.s;
    let p = layer.p;
    for visit in &schedule.visits {
        let oc_end = (visit.o_c0 + tile.t_oc).min(layer.o_c);
        let ic_end = (visit.i_c0 + tile.t_ic).min(layer.i_c);
        let row_end = (visit.o_h0 + tile.t_oh).min(o_h);
        let col_end = (visit.o_w0 + tile.t_ow).min(o_w);
        for k_h in 0..layer.k {
            let f_h = stride_offset(k_h, p, s).f;
            // (f + p - k) is divisible by s by construction of the offset.
            let base_h = (f_h as i64 + p as i64 - k_h as i64) / s as i64;
            let (qh_lo, qh_hi) = gather_range(visit.o_h0, row_end, f_h, s, base_h, layer.i_h);
            for k_w in 0..layer.k {
                let f_w = stride_offset(k_w, p, s).f;
                let base_w = (f_w as i64 + p as i64 - k_w as i64) / s as i64;
                let (qw_lo, qw_hi) = gather_range(visit.o_w0, col_end, f_w, s, base_w, layer.i_w);
                for q_h in qh_lo..=qh_hi {
                    let oh = s * q_h as usize + f_h;
                    let ih = (q_h + base_h) as usize;
                    debug_assert_eq!(input_index(oh, k_h, p, s).unwrap(), q_h + base_h);
                    for q_w in qw_lo..=qw_hi {
                        let ow = s * q_w as usize + f_w;
                        let iw = (q_w + base_w) as usize;
                        for o_c in visit.o_c0..oc_end {
                            for i_c in visit.i_c0..ic_end {
                                let idx = out.idx3(o_c, oh, ow);
                                out.data[idx] += input.at3(i_c, ih, iw) * kernel.at4(o_c, i_c, k_h, k_w);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

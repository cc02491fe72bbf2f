//! Analytic design-space exploration over tiling factors.
//!
//! For each candidate tile the model computes the computation to
//! communication ratio (operations per element moved to or from external
//! memory) and the computational roof (operations per cycle sustained by
//! the pipelined datapath); the attainable throughput is the smaller of
//! the roof and `ctc * bandwidth`. Feasibility flags record the DSP
//! budget, the on-chip memory budget and the tile bounds; infeasible
//! points are kept with their violation flags rather than dropped.
//!
//! Trip counts come in two flavors. `PaperExact` evaluates the division
//! form exactly as printed, which requires the output-channel and
//! output-row factors to divide their dimensions and the tile to span full
//! output rows. `Generalized` replaces the divisions with ceilings and is
//! valid for every tiling; the two agree wherever both are defined. The
//! loop-level simulator in [`crate::tracesim`] arbitrates both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerConfig, TileConfig};

fn default_pd() -> u64 {
    10
}

fn default_ii() -> u64 {
    2
}

/// Hardware budget and pipeline parameters of the target device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    /// Multiply-accumulate slices available.
    pub dsp_count: u64,
    /// On-chip memory capacity in bits.
    pub bram_bits: u64,
    /// External memory bandwidth in elements per cycle.
    pub bandwidth: f64,
    /// Pipeline depth of the innermost loop.
    #[serde(default = "default_pd")]
    pub pd: u64,
    /// Initiation interval of the innermost loop (carried dependency).
    #[serde(default = "default_ii")]
    pub ii: u64,
    /// Bits per element; also gates the single-multiplier assumption.
    pub bitwidth: u32,
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dsp_count < 1 || self.bram_bits < 1 || self.bandwidth <= 0.0 || self.pd < 1 || self.ii < 1 || self.bitwidth < 1 {
            return Err(Error::Parse(format!("platform fields must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Trip-count formula variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripMode {
    /// Division form; requires `t_oc | o_c`, `t_oh | o_h` and `t_ow = o_w`.
    PaperExact,
    /// Ceiling form, defined for every tiling.
    Generalized,
}

/// On-chip buffer capacities in elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BufferSizes {
    pub b_in: u64,
    pub b_w: u64,
    pub b_out: u64,
}

impl BufferSizes {
    pub fn total(&self) -> u64 {
        self.b_in + self.b_w + self.b_out
    }
}

/// External-memory visit counts per buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TripCounts {
    pub a_out: u64,
    pub a_in: u64,
    pub a_w: u64,
}

/// Reason the DSP constraint failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DspStatus {
    Ok,
    /// `t_oc * t_ic` exceeds the DSP budget.
    BudgetExceeded,
    /// Element width above 18 bits breaks the one-multiplier-per-MAC
    /// assumption, so the budget check is not meaningful.
    MultiplierWidthExceeded,
}

/// Constraint outcomes for one design point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Feasibility {
    pub dsp_ok: bool,
    pub bram_ok: bool,
    pub bounds_ok: bool,
    pub dsp_status: DspStatus,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.dsp_ok && self.bram_ok && self.bounds_ok
    }
}

/// One fully evaluated tiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignPoint {
    pub tile: TileConfig,
    pub buffers: BufferSizes,
    pub trips: TripCounts,
    /// Operations per element transferred.
    pub ctc: f64,
    /// Operations per cycle sustained by the datapath.
    pub cr: f64,
    /// `min(cr, ctc * bandwidth)`.
    pub attainable: f64,
    pub feasibility: Feasibility,
}

/// Total multiply and accumulate operation count of a layer.
pub fn total_ops(layer: &LayerConfig) -> u64 {
    2 * (layer.i_c * layer.o_c * layer.i_h * layer.i_w * layer.k * layer.k) as u64
}

/// Buffer capacities for a tile: the input block covering the output tile,
/// the weight block and the output tile itself.
pub fn buffer_sizes(layer: &LayerConfig, tile: &TileConfig) -> BufferSizes {
    let span = |t: usize| ((t + layer.k) as u64).div_ceil(layer.s as u64);
    BufferSizes {
        b_in: tile.t_ic as u64 * span(tile.t_oh) * span(tile.t_ow),
        b_w: (tile.t_oc * tile.t_ic * layer.k * layer.k) as u64,
        b_out: (tile.t_oc * tile.t_oh * tile.t_ow) as u64,
    }
}

/// Visit counts per buffer. Output tiles are visited once each; input and
/// weight blocks are reloaded for every input-channel block of every
/// output tile.
pub fn trip_counts(layer: &LayerConfig, tile: &TileConfig, mode: TripMode) -> Result<TripCounts> {
    let (o_h, o_w) = layer.output()?;
    let a_out = match mode {
        TripMode::PaperExact => {
            if layer.o_c % tile.t_oc != 0 || o_h % tile.t_oh != 0 {
                return Err(Error::IndivisibleTiling(format!(
                    "exact mode needs t_oc | o_c and t_oh | o_h, got tile {tile:?} for o_c={}, o_h={o_h}",
                    layer.o_c
                )));
            }
            if tile.t_ow != o_w {
                return Err(Error::IndivisibleTiling(format!(
                    "exact mode needs t_ow = o_w = {o_w}, got {}",
                    tile.t_ow
                )));
            }
            ((layer.o_c / tile.t_oc) * (o_h / tile.t_oh)) as u64
        }
        TripMode::Generalized => {
            (layer.o_c.div_ceil(tile.t_oc) * o_h.div_ceil(tile.t_oh) * o_w.div_ceil(tile.t_ow)) as u64
        }
    };
    let ic_blocks = layer.i_c.div_ceil(tile.t_ic) as u64;
    Ok(TripCounts { a_out, a_in: ic_blocks * a_out, a_w: ic_blocks * a_out })
}

/// Computation to communication ratio: total operations over total
/// external elements moved. Element-counted, so it is independent of the
/// bitwidth.
pub fn ctc(layer: &LayerConfig, tile: &TileConfig, mode: TripMode) -> Result<f64> {
    let buffers = buffer_sizes(layer, tile);
    let trips = trip_counts(layer, tile, mode)?;
    let transfers = trips.a_in * buffers.b_in + trips.a_w * buffers.b_w + trips.a_out * buffers.b_out;
    Ok(total_ops(layer) as f64 / transfers as f64)
}

/// Execution cycles of the tiled loop nest: each visit runs the kernel
/// loops over one tile with the row loop pipelined at interval `ii`.
/// Always uses ceiling visit counts, which coincide with the exact form on
/// its domain.
pub fn execution_cycles(layer: &LayerConfig, tile: &TileConfig, platform: &PlatformConfig) -> Result<u64> {
    let trips = trip_counts(layer, tile, TripMode::Generalized)?;
    let per_visit = (layer.k * layer.k * tile.t_oh) as u64
        * (platform.pd + platform.ii * (tile.t_ow as u64 - 1));
    Ok(trips.a_in * per_visit)
}

/// Computational roof: operations per cycle of the compute pipeline alone.
pub fn comp_roof(layer: &LayerConfig, tile: &TileConfig, platform: &PlatformConfig) -> Result<f64> {
    Ok(total_ops(layer) as f64 / execution_cycles(layer, tile, platform)? as f64)
}

/// Checks the DSP budget (including the 18-bit multiplier rule), the
/// on-chip memory budget and the tile bounds.
pub fn check_constraints(layer: &LayerConfig, tile: &TileConfig, platform: &PlatformConfig) -> Feasibility {
    let dsp_status = if platform.bitwidth > 18 {
        DspStatus::MultiplierWidthExceeded
    } else if (tile.t_oc * tile.t_ic) as u64 > platform.dsp_count {
        DspStatus::BudgetExceeded
    } else {
        DspStatus::Ok
    };
    let buffers = buffer_sizes(layer, tile);
    Feasibility {
        dsp_ok: dsp_status == DspStatus::Ok,
        bram_ok: buffers.total() * platform.bitwidth as u64 <= platform.bram_bits,
        bounds_ok: tile.validate_for(layer).is_ok(),
        dsp_status,
    }
}

/// Evaluates one tiling into a design point.
pub fn design_point(
    layer: &LayerConfig,
    tile: &TileConfig,
    platform: &PlatformConfig,
    mode: TripMode,
) -> Result<DesignPoint> {
    let buffers = buffer_sizes(layer, tile);
    let trips = trip_counts(layer, tile, mode)?;
    let ctc = {
        let transfers = trips.a_in * buffers.b_in + trips.a_w * buffers.b_w + trips.a_out * buffers.b_out;
        total_ops(layer) as f64 / transfers as f64
    };
    let cr = comp_roof(layer, tile, platform)?;
    Ok(DesignPoint {
        tile: *tile,
        buffers,
        trips,
        ctc,
        cr,
        attainable: cr.min(ctc * platform.bandwidth),
        feasibility: check_constraints(layer, tile, platform),
    })
}

/// Enumerates every tiling of the layer in lexicographic
/// `(t_oh, t_ow, t_oc, t_ic)` order. In exact mode only this mode's
/// admissible tilings (divisible factors, full output rows) are
/// enumerated, since the division form is undefined elsewhere.
pub fn enumerate_designs(
    layer: &LayerConfig,
    platform: &PlatformConfig,
    mode: TripMode,
) -> Result<Vec<DesignPoint>> {
    layer.validate()?;
    platform.validate()?;
    let (o_h, o_w) = layer.output()?;
    let keep = |bound: usize, t: usize| match mode {
        TripMode::Generalized => true,
        TripMode::PaperExact => bound % t == 0,
    };
    let mut points = Vec::new();
    for t_oh in 1..=o_h {
        if !keep(o_h, t_oh) {
            continue;
        }
        let t_ow_range = match mode {
            TripMode::Generalized => 1..=o_w,
            TripMode::PaperExact => o_w..=o_w,
        };
        for t_ow in t_ow_range {
            for t_oc in 1..=layer.o_c {
                if !keep(layer.o_c, t_oc) {
                    continue;
                }
                for t_ic in 1..=layer.i_c {
                    let tile = TileConfig::new(t_oh, t_ow, t_oc, t_ic);
                    points.push(design_point(layer, &tile, platform, mode)?);
                }
            }
        }
    }
    Ok(points)
}

/// Orders two points: higher attainable throughput wins, then higher ctc
/// (lower bandwidth pressure), then smaller total buffer footprint, then
/// the lexicographically smaller tile. Total, so selection is invariant
/// under permutation of the candidate list.
fn preferable(a: &DesignPoint, b: &DesignPoint) -> std::cmp::Ordering {
    a.attainable
        .total_cmp(&b.attainable)
        .then(a.ctc.total_cmp(&b.ctc))
        .then(b.buffers.total().cmp(&a.buffers.total()))
        .then(b.tile.cmp(&a.tile))
}

/// Best feasible point under the roofline ordering.
pub fn select_best(points: &[DesignPoint]) -> Result<DesignPoint> {
    points
        .iter()
        .filter(|p| p.feasibility.all())
        .max_by(|a, b| preferable(a, b))
        .copied()
        .ok_or(Error::NoFeasibleDesign)
}

//! Loop-level trace simulator: the independent check on the analytic
//! roofline formulas.
//!
//! [`simulate`] walks the tiled visit schedule one visit at a time and
//! counts what the accelerator would actually move and spend: an input
//! block and a weight block load per visit, an output block store on the
//! final input-channel block of each output tile, and the pipelined kernel
//! loop cost per visit. Buffer extents are recomputed here from the loop
//! bounds rather than imported from the analytic module, so the two
//! routes stay independent. Blocks have fixed (nominal) size even at the
//! feature-map edge, matching hardware loop bounds; with divisible tilings
//! every output element is stored exactly once.
//!
//! Element counts depend only on shapes, never on tensor values.

use serde::Serialize;

use crate::deconv::build_schedule;
use crate::error::{Error, Result};
use crate::model::{LayerConfig, TileConfig};
use crate::roofline::{self, PlatformConfig, TripMode};

/// Visit logs longer than this are dropped from the report.
const VISIT_LOG_CAP: usize = 512;

/// Per-visit buffer traffic, recorded for small schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VisitLogEntry {
    pub o_c0: usize,
    pub o_h0: usize,
    pub o_w0: usize,
    pub i_c0: usize,
    pub loads_in: u64,
    pub loads_w: u64,
    pub stores_out: u64,
}

/// Measured element transfers and modeled cycles of one tiled execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceReport {
    pub loads_in: u64,
    pub loads_w: u64,
    pub stores_out: u64,
    pub tile_visits: u64,
    pub cycles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visit_log: Option<Vec<VisitLogEntry>>,
}

impl TraceReport {
    pub fn total_transfers(&self) -> u64 {
        self.loads_in + self.loads_w + self.stores_out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace report serialization cannot fail")
    }
}

/// Walks the visit schedule and accumulates transfers and cycles.
pub fn simulate(layer: &LayerConfig, tile: &TileConfig, platform: &PlatformConfig) -> Result<TraceReport> {
    platform.validate()?;
    let schedule = build_schedule(layer, tile)?;

    // Block extents from the loop bounds: the input block spans the
    // receptive field of one output tile, sampled at the stride.
    let in_rows = ((tile.t_oh + layer.k) as u64).div_ceil(layer.s as u64);
    let in_cols = ((tile.t_ow + layer.k) as u64).div_ceil(layer.s as u64);
    let in_block = tile.t_ic as u64 * in_rows * in_cols;
    let w_block = (tile.t_oc * tile.t_ic * layer.k * layer.k) as u64;
    let out_block = (tile.t_oc * tile.t_oh * tile.t_ow) as u64;
    let visit_cycles =
        (layer.k * layer.k * tile.t_oh) as u64 * (platform.pd + platform.ii * (tile.t_ow as u64 - 1));

    let mut report = TraceReport {
        loads_in: 0,
        loads_w: 0,
        stores_out: 0,
        tile_visits: 0,
        cycles: 0,
        visit_log: (schedule.visits.len() <= VISIT_LOG_CAP).then(Vec::new),
    };
    for visit in &schedule.visits {
        let stored = if visit.last_ic_block { out_block } else { 0 };
        report.loads_in += in_block;
        report.loads_w += w_block;
        report.stores_out += stored;
        report.cycles += visit_cycles;
        report.tile_visits += 1;
        if let Some(log) = report.visit_log.as_mut() {
            log.push(VisitLogEntry {
                o_c0: visit.o_c0,
                o_h0: visit.o_h0,
                o_w0: visit.o_w0,
                i_c0: visit.i_c0,
                loads_in: in_block,
                loads_w: w_block,
                stores_out: stored,
            });
        }
    }
    Ok(report)
}

/// Largest relative deviation between analytic and simulated figures over
/// randomly drawn tiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidationReport {
    pub mode: TripMode,
    pub samples: usize,
    pub max_rel_dev_ctc: f64,
    pub max_rel_dev_cr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_tile: Option<TileConfig>,
}

impl CrossValidationReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_rel_dev_ctc.max(self.max_rel_dev_cr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn rel_dev(analytic: f64, simulated: f64) -> f64 {
    let scale = analytic.abs().max(simulated.abs()).max(f64::MIN_POSITIVE);
    (analytic - simulated).abs() / scale
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Draws `samples` random tiles (restricted to the exact mode's admissible
/// domain when applicable), simulates each, and compares the measured
/// computation-to-communication ratio and roof against the analytic
/// formulas.
pub fn cross_validate(
    layer: &LayerConfig,
    platform: &PlatformConfig,
    mode: TripMode,
    samples: usize,
    seed: u64,
) -> Result<CrossValidationReport> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    if samples < 1 {
        return Err(Error::TooFewSamples { needed: 1, got: samples });
    }
    layer.validate()?;
    let (o_h, o_w) = layer.output()?;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let row_choices = divisors(o_h);
    let chan_choices = divisors(layer.o_c);

    let ops = roofline::total_ops(layer) as f64;
    let mut report = CrossValidationReport {
        mode,
        samples,
        max_rel_dev_ctc: 0.0,
        max_rel_dev_cr: 0.0,
        worst_tile: None,
    };
    for _ in 0..samples {
        let tile = match mode {
            TripMode::Generalized => TileConfig::new(
                rng.gen_range(1..=o_h),
                rng.gen_range(1..=o_w),
                rng.gen_range(1..=layer.o_c),
                rng.gen_range(1..=layer.i_c),
            ),
            TripMode::PaperExact => TileConfig::new(
                *row_choices.choose(&mut rng).expect("o_h >= 1"),
                o_w,
                *chan_choices.choose(&mut rng).expect("o_c >= 1"),
                rng.gen_range(1..=layer.i_c),
            ),
        };
        let trace = simulate(layer, &tile, platform)?;
        let analytic_ctc = roofline::ctc(layer, &tile, mode)?;
        let analytic_cr = roofline::comp_roof(layer, &tile, platform)?;
        let dev_ctc = rel_dev(analytic_ctc, ops / trace.total_transfers() as f64);
        let dev_cr = rel_dev(analytic_cr, ops / trace.cycles as f64);
        if dev_ctc.max(dev_cr) > report.max_deviation() {
            report.worst_tile = Some(tile);
        }
        report.max_rel_dev_ctc = report.max_rel_dev_ctc.max(dev_ctc);
        report.max_rel_dev_cr = report.max_rel_dev_cr.max(dev_cr);
    }
    Ok(report)
}

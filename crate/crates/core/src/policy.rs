//! Threshold control policy: realized price plus value function to a
//! per-step charge or discharge signal.

use serde::{Deserialize, Serialize};

use crate::battery::BatteryCurves;
use crate::valuation::{local_view, snap_to_edge, Edge, target_edge, Region, SocGrid, ValuationConfig, ValueFunction};

/// One vehicle's signal for one step, grid-side kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub p_kwh: f64,
    pub b_kwh: f64,
    /// Price node the realized price was matched to.
    pub node: usize,
    pub region: Region,
    /// Set when an inverse lookup hit a layer that increases somewhere.
    pub non_monotone: bool,
}

impl ControlDecision {
    pub fn idle(node: usize) -> Self {
        ControlDecision {
            p_kwh: 0.0,
            b_kwh: 0.0,
            node,
            region: Region::Idle,
            non_monotone: false,
        }
    }
}

/// Result of inverting a value layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inverse {
    pub soc: f64,
    /// `false` if the layer increases anywhere between grid points.
    pub monotone: bool,
}

/// SoC where the layer falls through `y`: the first grid segment (scanning
/// up from `soc_min`) with `v[m] ≥ y > v[m + 1]`, linearly interpolated.
/// `v[0] < y` gives `soc_min`; no crossing gives `soc_max`. A crossing in the
/// segment holding `edge` lands on `edge`.
pub fn inverse_marginal_value(layer: &[f64], grid: &SocGrid, y: f64, edge: Option<Edge>) -> Inverse {
    let monotone = layer.windows(2).all(|w| w[1] <= w[0]);
    if layer[0] < y {
        return Inverse {
            soc: grid.soc_min(),
            monotone,
        };
    }
    let soc = layer
        .windows(2)
        .position(|w| w[0] >= y && y > w[1])
        .map(|m| {
            let (y0, y1) = (layer[m], layer[m + 1]);
            let x = grid.soc(m) + (y0 - y) / (y0 - y1) * grid.spacing();
            snap_to_edge(grid.soc(m), grid.soc(m + 1), x, edge)
        })
        .unwrap_or(grid.soc_max());
    Inverse { soc, monotone }
}

/// Control signal at session step `t` for realized price `price` and SoC `e`,
/// using the controller curves. The result respects the controller's ratings
/// and SoC headroom, and never charges and discharges at once.
pub fn decide(
    vf: &ValueFunction,
    t: usize,
    price: f64,
    e: f64,
    ctrl: &BatteryCurves,
    cfg: &ValuationConfig,
) -> ControlDecision {
    let grid = vf.grid();
    let node = vf.node_index(t, price);
    let v = vf.layer(t, node);
    let e = e.clamp(ctrl.soc_min(), ctrl.soc_max());
    let edge = target_edge(grid, vf.target());
    let lv = local_view(v, grid, e, ctrl, cfg, edge);
    let region = lv.thresholds.region(price);
    let mut non_monotone = false;
    let (p, b) = match region {
        Region::FullCharge => (0.0, lv.charge_limit),
        Region::PartialCharge => {
            let inv = inverse_marginal_value(v, grid, price / lv.eta, edge);
            non_monotone = !inv.monotone;
            (0.0, ((inv.soc - e) / lv.eta).clamp(0.0, lv.charge_limit))
        }
        Region::Idle => (0.0, 0.0),
        Region::PartialDischarge => {
            let inv = inverse_marginal_value(v, grid, (price - lv.c) * lv.eta, edge);
            non_monotone = !inv.monotone;
            (((e - inv.soc) * lv.eta).clamp(0.0, lv.discharge_limit), 0.0)
        }
        Region::FullDischarge => (lv.discharge_limit, 0.0),
    };
    // Energy above the target is worth nothing after the last step, and
    // without discharge it can never leave the pack. The interpolated layers
    // smear that edge over one segment, so pin it exactly.
    let (mut p, mut b) = (p, b);
    let target = vf.target();
    let last = t + 1 == vf.t_end();
    if target > ctrl.soc_min() && price >= 0.0 {
        if last || !cfg.discharge {
            b = b.min(((target - e) / lv.eta).max(0.0));
        }
        if last && e > target {
            p = p.min((e - target) * lv.eta);
        } else if last {
            p = 0.0;
        }
    }
    let cap = ctrl.capacity_kwh();
    let (mut p_kwh, mut b_kwh) = (p * cap, b * cap);
    // Keep rounding on the feasible side of the SoC bounds.
    while b_kwh > 0.0 && ctrl.step_soc(e, 0.0, b_kwh) > ctrl.soc_max() {
        b_kwh = b_kwh.next_down().max(0.0);
    }
    while p_kwh > 0.0 && ctrl.step_soc(e, p_kwh, 0.0) < ctrl.soc_min() {
        p_kwh = p_kwh.next_down().max(0.0);
    }
    ControlDecision {
        p_kwh,
        b_kwh,
        node,
        region,
        non_monotone,
    }
}

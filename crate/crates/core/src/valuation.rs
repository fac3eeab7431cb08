//! Marginal value functions by backward induction over a Markov price lattice.
//!
//! Energies inside this module are SoC fractions: a rating of `B` kW over a
//! step of `Δt` hours is `B·Δt/capacity`, and curve slopes are taken with
//! respect to the SoC fraction. Prices and marginal values are $/MWh, so the
//! kWh/capacity scaling cancels out of every first-order condition.
//!
//! `ValueFunction::layer(t, i)` is the marginal value of SoC *after* the
//! action of session step `t`, given that step `t` realized price node `i`.
//! The layer of the last step `t_end − 1` is the terminal step function.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battery::BatteryCurves;
use crate::error::{Error, Result};
use crate::price::{nearest_node, PriceLattice, PriceMarkov};

pub const DEFAULT_SEGMENTS: usize = 1000;
pub const DEFAULT_PENALTY: f64 = 1000.0;

/// How the partial charge/discharge cases evaluate the rate-dependent
/// correction terms `b·∂η/∂e` and `p·∂c/∂e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PartialRateRule {
    /// Use the optimal partial action itself (exact first-order condition).
    #[default]
    Realized,
    /// Approximate the partial action by the full rating at the current SoC.
    Rating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValuationConfig {
    /// SoC segments `M`; the grid has `M + 1` points.
    pub segments: usize,
    /// Terminal marginal value below the target, $/MWh.
    pub penalty: f64,
    pub step_hours: f64,
    /// `false` for V1G: the discharge rating is treated as zero.
    pub discharge: bool,
    pub partial_rate: PartialRateRule,
    /// When off, negative node prices are clamped to zero before valuation.
    pub allow_negative_prices: bool,
}

impl Default for ValuationConfig {
    fn default() -> Self {
        ValuationConfig {
            segments: DEFAULT_SEGMENTS,
            penalty: DEFAULT_PENALTY,
            step_hours: 1.0,
            discharge: true,
            partial_rate: PartialRateRule::Realized,
            allow_negative_prices: true,
        }
    }
}

impl ValuationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Config("valuation needs at least one SoC segment".into()));
        }
        if !(self.step_hours > 0.0 && self.step_hours.is_finite()) {
            return Err(Error::Config(format!("invalid step length {} h", self.step_hours)));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::Config(format!("invalid penalty {}", self.penalty)));
        }
        Ok(())
    }
}

/// Equally spaced SoC points `e_m = soc_min + m·(soc_max − soc_min)/M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocGrid {
    soc_min: f64,
    soc_max: f64,
    segments: usize,
}

/// Position of an SoC on the grid: `v(e) = (1 − w)·v[idx] + w·v[idx + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Interp {
    idx: usize,
    w: f64,
}

impl Interp {
    #[inline]
    fn eval(self, v: &[f64]) -> f64 {
        (1.0 - self.w) * v[self.idx] + self.w * v[self.idx + 1]
    }

    /// Like `eval`, but a segment holding the edge is read as a step there.
    #[inline]
    fn eval_edge(self, v: &[f64], edge: Option<Edge>) -> f64 {
        match edge {
            Some(ed) if ed.idx == self.idx => {
                if self.w <= ed.w {
                    v[self.idx]
                } else {
                    v[self.idx + 1]
                }
            }
            _ => self.eval(v),
        }
    }
}

/// A known jump in the marginal value, at `soc` inside segment `idx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub soc: f64,
    idx: usize,
    w: f64,
}

impl SocGrid {
    pub fn new(soc_min: f64, soc_max: f64, segments: usize) -> Result<Self> {
        if segments == 0 || !(soc_min < soc_max) {
            return Err(Error::Config(format!(
                "invalid SoC grid [{soc_min}, {soc_max}] with {segments} segments"
            )));
        }
        Ok(SocGrid {
            soc_min,
            soc_max,
            segments,
        })
    }

    pub fn for_curves(curves: &BatteryCurves, segments: usize) -> Result<Self> {
        Self::new(curves.soc_min(), curves.soc_max(), segments)
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn points(&self) -> usize {
        self.segments + 1
    }

    pub fn soc_min(&self) -> f64 {
        self.soc_min
    }

    pub fn soc_max(&self) -> f64 {
        self.soc_max
    }

    /// Width of one segment in SoC.
    pub fn spacing(&self) -> f64 {
        (self.soc_max - self.soc_min) / self.segments as f64
    }

    pub fn soc(&self, m: usize) -> f64 {
        if m >= self.segments {
            return self.soc_max;
        }
        self.soc_min + (self.soc_max - self.soc_min) * m as f64 / self.segments as f64
    }

    fn locate(&self, e: f64) -> Interp {
        let x = ((e - self.soc_min) / self.spacing()).clamp(0.0, self.segments as f64);
        let idx = (x.floor() as usize).min(self.segments - 1);
        Interp {
            idx,
            w: x - idx as f64,
        }
    }

    /// Index of the grid point closest to `e`.
    pub fn nearest_point(&self, e: f64) -> usize {
        let x = ((e - self.soc_min) / self.spacing()).round();
        (x.max(0.0) as usize).min(self.segments)
    }

    /// Linear interpolation of a layer at `e`, clamped to the end points.
    pub fn interpolate(&self, layer: &[f64], e: f64) -> f64 {
        self.locate(e).eval(layer)
    }
}

/// Terminal marginal value: `penalty` at every grid SoC `≤ target`, zero
/// above. A target at or below `soc_min` means no requirement (all zeros).
pub fn terminal_value(grid: &SocGrid, target: f64, penalty: f64) -> Vec<f64> {
    if target <= grid.soc_min() {
        return vec![0.0; grid.points()];
    }
    (0..grid.points())
        .map(|m| if grid.soc(m) <= target + 1e-9 { penalty } else { 0.0 })
        .collect()
}

/// Curve data at one SoC, with the per-step ratings already clamped by the
/// SoC headroom. All energies are SoC fractions.
#[derive(Debug, Clone, Copy)]
struct PointCoeffs {
    e: f64,
    eta: f64,
    d_eta: f64,
    c: f64,
    d_c: f64,
    b: f64,
    d_b: f64,
    p: f64,
    d_p: f64,
    here: Interp,
    up: Interp,
    dn: Interp,
    e_up: f64,
    e_dn: f64,
}

impl PointCoeffs {
    fn new(grid: &SocGrid, curves: &BatteryCurves, cfg: &ValuationConfig, e: f64) -> Self {
        let v = curves.sample(e);
        let s = curves.slopes(e);
        let scale = cfg.step_hours / curves.capacity_kwh();
        let (eta, d_eta) = (v.eta, s.eta);

        let mut b = v.b_kw * scale;
        let mut d_b = s.b_kw * scale;
        let b_room = (curves.soc_max() - e).max(0.0) / eta;
        if b_room < b {
            b = b_room;
            d_b = -1.0 / eta - b * d_eta / eta;
        }

        let (mut p, mut d_p) = if cfg.discharge {
            (v.p_kw * scale, s.p_kw * scale)
        } else {
            (0.0, 0.0)
        };
        let p_room = (e - curves.soc_min()).max(0.0) * eta;
        if p_room < p {
            p = p_room;
            d_p = eta + (e - curves.soc_min()) * d_eta;
        }

        let e_up = (e + b * eta).min(grid.soc_max());
        let e_dn = (e - p / eta).max(grid.soc_min());
        PointCoeffs {
            e,
            eta,
            d_eta,
            c: v.c_per_mwh,
            d_c: s.c_per_mwh,
            b,
            d_b,
            p,
            d_p,
            here: grid.locate(e),
            up: grid.locate(e_up),
            dn: grid.locate(e_dn),
            e_up,
            e_dn,
        }
    }
}

/// Which of the five price regions a price falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    FullCharge,
    PartialCharge,
    Idle,
    PartialDischarge,
    FullDischarge,
}

/// The four price thresholds separating the regions at one SoC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub full_charge: f64,
    pub partial_charge: f64,
    pub idle: f64,
    pub partial_discharge: f64,
}

impl Thresholds {
    pub fn region(&self, price: f64) -> Region {
        if price <= self.full_charge {
            Region::FullCharge
        } else if price <= self.partial_charge {
            Region::PartialCharge
        } else if price <= self.idle {
            Region::Idle
        } else if price <= self.partial_discharge {
            Region::PartialDischarge
        } else {
            Region::FullDischarge
        }
    }
}

fn thresholds(pc: &PointCoeffs, v_here: f64, v_up: f64, v_dn: f64) -> Thresholds {
    Thresholds {
        full_charge: v_up * pc.eta,
        partial_charge: v_here * pc.eta,
        idle: (v_here / pc.eta + pc.c).max(0.0),
        partial_discharge: (v_dn / pc.eta + pc.c).max(0.0),
    }
}

/// SoC in `[lo, hi]` where the interpolated layer crosses `y` downward,
/// given `v(lo) ≥ y > v(hi)`. Bisects over the grid points in between.
fn bracketed_crossing(
    v: &[f64],
    grid: &SocGrid,
    lo: (f64, Interp),
    hi: (f64, Interp),
    y: f64,
    edge: Option<Edge>,
) -> f64 {
    let (lo_e, lo_at) = lo;
    let (hi_e, hi_at) = hi;
    let v_lo = lo_at.eval_edge(v, edge);
    let v_hi = hi_at.eval_edge(v, edge);
    if !(v_lo >= y) {
        return lo_e;
    }
    if v_hi >= y {
        return hi_e;
    }
    // Virtual sequence: lo, grid points strictly inside (lo, hi), hi.
    // Grid point k sits at virtual position k; lo and hi take the slots
    // just outside the interior range.
    let start = lo_at.idx;
    let interior_end = if hi_at.w > 0.0 { hi_at.idx } else { hi_at.idx.saturating_sub(1) };
    let end = interior_end.max(start) + 1;
    let value = |k: usize| {
        if k == start {
            (lo_e, v_lo)
        } else if k == end {
            (hi_e, v_hi)
        } else {
            (grid.soc(k), v[k])
        }
    };
    let (mut a, mut b) = (start, end);
    while b - a > 1 {
        let mid = a + (b - a) / 2;
        if value(mid).1 >= y {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (x0, y0) = value(a);
    let (x1, y1) = value(b);
    snap_to_edge(x0, x1, x0 + (y0 - y) / (y0 - y1) * (x1 - x0), edge).clamp(lo_e, hi_e)
}

/// The target is a jump in the marginal value that linear interpolation
/// smears over one segment. A crossing inside the segment holding the jump
/// belongs on the jump itself.
pub(crate) fn snap_to_edge(x0: f64, x1: f64, x: f64, edge: Option<Edge>) -> f64 {
    match edge {
        Some(ed) if x0 <= ed.soc && ed.soc < x1 => ed.soc,
        _ => x,
    }
}

/// Jump implied by a session target: the terminal layer drops from the
/// penalty to zero in the segment after the last grid point `≤ target`.
pub fn target_edge(grid: &SocGrid, target: f64) -> Option<Edge> {
    if !(target > grid.soc_min() && target < grid.soc_max()) {
        return None;
    }
    let h = grid.spacing();
    let idx = (((target + 1e-9 - grid.soc_min()) / h).floor() as usize).min(grid.segments() - 1);
    Some(Edge {
        soc: target,
        idx,
        w: ((target - grid.soc(idx)) / h).max(0.0),
    })
}

/// `q` for one SoC and price, given the next-step layer.
fn q_kernel(
    pc: &PointCoeffs,
    v: &[f64],
    grid: &SocGrid,
    price: f64,
    rule: PartialRateRule,
    edge: Option<Edge>,
) -> f64 {
    let v_here = pc.here.eval_edge(v, edge);
    let v_up = pc.up.eval_edge(v, edge);
    let v_dn = pc.dn.eval_edge(v, edge);
    let th = thresholds(pc, v_here, v_up, v_dn);
    let (eta, d_eta) = (pc.eta, pc.d_eta);
    match th.region(price) {
        Region::FullCharge => (1.0 + eta * pc.d_b + pc.b * d_eta) * v_up - price * pc.d_b,
        Region::PartialCharge => {
            let b = match rule {
                PartialRateRule::Rating => pc.b,
                PartialRateRule::Realized => {
                    let e_star = bracketed_crossing(v, grid, (pc.e, pc.here), (pc.e_up, pc.up), price / eta, edge);
                    ((e_star - pc.e) / eta).clamp(0.0, pc.b)
                }
            };
            price * (1.0 / eta + b / eta * d_eta)
        }
        Region::Idle => v_here,
        Region::PartialDischarge => {
            let p = match rule {
                PartialRateRule::Rating => pc.p,
                PartialRateRule::Realized => {
                    let y = (price - pc.c) * eta;
                    let e_star = bracketed_crossing(v, grid, (pc.e_dn, pc.dn), (pc.e, pc.here), y, edge);
                    ((pc.e - e_star) * eta).clamp(0.0, pc.p)
                }
            };
            (price - pc.c) * (eta + p / eta * d_eta) - p * pc.d_c
        }
        Region::FullDischarge => {
            let p = pc.p;
            (1.0 - pc.d_p / eta + p * d_eta / (eta * eta)) * v_dn + (price - pc.c) * pc.d_p - p * pc.d_c
        }
    }
}

/// Marginal value `q` at SoC `e` for node price `price`, given the value
/// layer `v_next` that applies after this step's action.
pub fn q_update(
    v_next: &[f64],
    grid: &SocGrid,
    e: f64,
    price: f64,
    curves: &BatteryCurves,
    cfg: &ValuationConfig,
) -> f64 {
    let pc = PointCoeffs::new(grid, curves, cfg, e);
    q_kernel(&pc, v_next, grid, price, cfg.partial_rate, None)
}

/// [`q_update`] inside a session with final requirement `target`: the layer
/// is read as a step at the target, as the backward pass does.
pub fn q_update_with_target(
    v_next: &[f64],
    grid: &SocGrid,
    e: f64,
    price: f64,
    curves: &BatteryCurves,
    cfg: &ValuationConfig,
    target: f64,
) -> f64 {
    let pc = PointCoeffs::new(grid, curves, cfg, e);
    q_kernel(&pc, v_next, grid, price, cfg.partial_rate, target_edge(grid, target))
}

/// Price thresholds at SoC `e` against the layer `v`, for the controller.
pub fn price_thresholds(
    v: &[f64],
    grid: &SocGrid,
    e: f64,
    curves: &BatteryCurves,
    cfg: &ValuationConfig,
) -> Thresholds {
    local_view(v, grid, e, curves, cfg, None).thresholds
}

/// What the controller needs at one SoC: thresholds plus the headroom-clamped
/// per-step limits (SoC fractions) and the curve values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LocalView {
    pub thresholds: Thresholds,
    pub charge_limit: f64,
    pub discharge_limit: f64,
    pub eta: f64,
    pub c: f64,
}

pub(crate) fn local_view(
    v: &[f64],
    grid: &SocGrid,
    e: f64,
    curves: &BatteryCurves,
    cfg: &ValuationConfig,
    edge: Option<Edge>,
) -> LocalView {
    let pc = PointCoeffs::new(grid, curves, cfg, e);
    let at = |i: Interp| i.eval_edge(v, edge);
    LocalView {
        thresholds: thresholds(&pc, at(pc.here), at(pc.up), at(pc.dn)),
        charge_limit: pc.b,
        discharge_limit: pc.p,
        eta: pc.eta,
        c: pc.c,
    }
}

/// Session bounds: steps `t_start..t_end` and the final SoC requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionWindow {
    pub t_start: usize,
    pub t_end: usize,
    pub target: f64,
}

impl SessionWindow {
    pub fn len(&self) -> usize {
        self.t_end.saturating_sub(self.t_start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Marginal values `ν[t][i][m]` for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    t_start: usize,
    t_end: usize,
    target: f64,
    grid: SocGrid,
    nodes: Vec<Vec<f64>>,
    layers: Vec<Vec<Vec<f64>>>,
}

impl ValueFunction {
    /// Assembles a value function from explicit layers, `layers[k][i]` for
    /// session step `t_start + k` and node `i`.
    pub fn from_layers(
        t_start: usize,
        target: f64,
        grid: SocGrid,
        nodes: Vec<Vec<f64>>,
        layers: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if layers.is_empty() || nodes.len() != layers.len() {
            return Err(Error::Input("need one node list per layer step".into()));
        }
        for (n, l) in nodes.iter().zip(&layers) {
            if n.len() != l.len() || l.iter().any(|v| v.len() != grid.points()) {
                return Err(Error::Input("layer shape does not match nodes and grid".into()));
            }
        }
        Ok(ValueFunction {
            t_start,
            t_end: t_start + layers.len(),
            target,
            grid,
            nodes,
            layers,
        })
    }

    pub fn t_start(&self) -> usize {
        self.t_start
    }

    pub fn t_end(&self) -> usize {
        self.t_end
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn grid(&self) -> &SocGrid {
        &self.grid
    }

    pub fn n_segments(&self) -> usize {
        self.grid.segments()
    }

    /// Largest node count over the session's steps.
    pub fn n_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of stored layers (one per session step, at least one).
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn offset(&self, t: usize) -> usize {
        assert!(
            t >= self.t_start && t - self.t_start < self.layers.len(),
            "step {t} outside session [{}, {})",
            self.t_start,
            self.t_end
        );
        t - self.t_start
    }

    /// Price nodes at session step `t`.
    pub fn nodes(&self, t: usize) -> &[f64] {
        &self.nodes[self.offset(t)]
    }

    /// Closest node to `price` at step `t` (ties to the cheaper node).
    pub fn node_index(&self, t: usize, price: f64) -> usize {
        nearest_node(self.nodes(t), price)
    }

    pub fn layer(&self, t: usize, node: usize) -> &[f64] {
        &self.layers[self.offset(t)][node]
    }

    /// Writes `t,node,m,soc,price,value` rows in `(t, node, m)` order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "t,node,m,soc,price,value").map_err(io)?;
        for (k, layer) in self.layers.iter().enumerate() {
            for (i, v) in layer.iter().enumerate() {
                let price = self.nodes[k].get(i).copied().unwrap_or(f64::NAN);
                for (m, x) in v.iter().enumerate() {
                    writeln!(w, "{},{},{},{},{},{}", self.t_start + k, i, m, self.grid.soc(m), price, x)
                        .map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

/// Reusable valuation kernel for one controller curve set: the per-grid-point
/// curve data is computed once and shared by every session.
#[derive(Debug, Clone)]
pub struct Valuator {
    cfg: ValuationConfig,
    grid: SocGrid,
    points: Vec<PointCoeffs>,
}

impl Valuator {
    pub fn new(curves: &BatteryCurves, cfg: &ValuationConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = SocGrid::for_curves(curves, cfg.segments)?;
        let points = (0..grid.points())
            .map(|m| PointCoeffs::new(&grid, curves, cfg, grid.soc(m)))
            .collect();
        Ok(Valuator {
            cfg: cfg.clone(),
            grid,
            points,
        })
    }

    pub fn grid(&self) -> &SocGrid {
        &self.grid
    }

    pub fn config(&self) -> &ValuationConfig {
        &self.cfg
    }

    fn clamp_price(&self, p: f64) -> f64 {
        if self.cfg.allow_negative_prices {
            p
        } else {
            p.max(0.0)
        }
    }

    /// Backward induction over a lattice whose step `k` is session step
    /// `window.t_start + k`.
    pub fn run(&self, lattice: &PriceLattice, window: SessionWindow) -> Result<ValueFunction> {
        if window.t_end < window.t_start {
            return Err(Error::Input(format!(
                "session ends at {} before it starts at {}",
                window.t_end, window.t_start
            )));
        }
        let len = window.len();
        if lattice.len() < len {
            return Err(Error::Input(format!(
                "price lattice has {} steps, session needs {len}",
                lattice.len()
            )));
        }
        let terminal = terminal_value(&self.grid, window.target, self.cfg.penalty);
        let edge = target_edge(&self.grid, window.target);
        if len == 0 {
            return Ok(ValueFunction {
                t_start: window.t_start,
                t_end: window.t_end,
                target: window.target,
                grid: self.grid,
                nodes: vec![vec![]],
                layers: vec![vec![terminal]],
            });
        }
        let nodes: Vec<Vec<f64>> = lattice.nodes[..len]
            .iter()
            .map(|n| n.iter().map(|&p| self.clamp_price(p)).collect())
            .collect();
        let mut layers: Vec<Vec<Vec<f64>>> = vec![Vec::new(); len];
        layers[len - 1] = vec![terminal; nodes[len - 1].len()];

        let n_pts = self.grid.points();
        let mut q = Vec::new();
        for k in (1..len).rev() {
            let next = &layers[k];
            q.clear();
            for (j, &price) in nodes[k].iter().enumerate() {
                let v = &next[j];
                q.extend(
                    self.points
                        .iter()
                        .map(|pc| q_kernel(pc, v, &self.grid, price, self.cfg.partial_rate, edge)),
                );
            }
            let rho = &lattice.transitions[k - 1];
            if rho.len() != nodes[k - 1].len() || rho.iter().any(|r| r.len() != nodes[k].len()) {
                return Err(Error::Input(format!("transition matrix at lattice step {} has the wrong shape", k - 1)));
            }
            let layer: Vec<Vec<f64>> = rho
                .iter()
                .map(|row| {
                    let mut acc = vec![0.0; n_pts];
                    for (j, &w) in row.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let qj = &q[j * n_pts..(j + 1) * n_pts];
                        acc.iter_mut().zip(qj).for_each(|(a, &x)| *a += w * x);
                    }
                    acc
                })
                .collect();
            layers[k - 1] = layer;
        }
        Ok(ValueFunction {
            t_start: window.t_start,
            t_end: window.t_end,
            target: window.target,
            grid: self.grid,
            nodes,
            layers,
        })
    }
}

/// Stochastic valuation of one session against a raw-price Markov model.
/// Session step `t` uses model step `(t + phase) % horizon`, where `phase`
/// is the step-of-day of series index 0.
pub fn backward_pass(
    markov: &PriceMarkov,
    curves: &BatteryCurves,
    window: SessionWindow,
    phase: usize,
    cfg: &ValuationConfig,
) -> Result<ValueFunction> {
    let lattice = markov.lattice((window.t_start + phase) % markov.horizon(), window.len(), None)?;
    Valuator::new(curves, cfg)?.run(&lattice, window)
}

/// Perfect-forecast valuation: one node per step at the realized price.
/// `prices[t]` is the price of absolute step `t`.
pub fn deterministic_pass(
    prices: &[f64],
    curves: &BatteryCurves,
    window: SessionWindow,
    cfg: &ValuationConfig,
) -> Result<ValueFunction> {
    if window.t_end > prices.len() {
        return Err(Error::Data(format!(
            "price series has {} steps, session runs to step {}",
            prices.len(),
            window.t_end
        )));
    }
    let lattice = PriceLattice::deterministic(&prices[window.t_start..window.t_end]);
    Valuator::new(curves, cfg)?.run(&lattice, window)
}

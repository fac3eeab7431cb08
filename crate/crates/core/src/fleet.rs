//! Charging station simulator: arrivals, per-vehicle valuation, LLF dispatch
//! under the station limit, environment truncation and bookkeeping.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::battery::{BatteryCurves, CurveResolutionPair};
use crate::energy_cost;
use crate::error::{Error, Result};
use crate::policy::decide;
use crate::price::{PriceMarkov, PriceLattice, PriceSeries, TrainMode};
use crate::valuation::{SessionWindow, ValuationConfig, Valuator, ValueFunction};

/// Sessions ending within this SoC distance of the target count as compliant.
pub const COMPLIANCE_BAND: f64 = 0.05;

/// Starting SoC assumed when the data has none.
pub const DEFAULT_START_SOC: f64 = 0.1;

/// One EV visit. Steps index the price series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSession {
    pub id: String,
    pub arrival: usize,
    pub departure: usize,
    pub start_soc: f64,
    pub target_soc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_requested_kwh: Option<f64>,
}

impl ChargingSession {
    pub fn new(id: impl Into<String>, arrival: usize, departure: usize, start_soc: f64, target_soc: f64) -> Result<Self> {
        let s = ChargingSession {
            id: id.into(),
            arrival,
            departure,
            start_soc,
            target_soc,
            energy_requested_kwh: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Target derived from an energy request: `S + E/capacity`, capped at `soc_max`.
    pub fn from_energy(
        id: impl Into<String>,
        arrival: usize,
        departure: usize,
        start_soc: f64,
        energy_kwh: f64,
        capacity_kwh: f64,
        soc_max: f64,
    ) -> Result<Self> {
        let target = (start_soc + energy_kwh / capacity_kwh).min(soc_max);
        let mut s = Self::new(id, arrival, departure, start_soc, target)?;
        s.energy_requested_kwh = Some(energy_kwh);
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.departure <= self.arrival {
            return Err(Error::Input(format!(
                "session {}: departure {} not after arrival {}",
                self.id, self.departure, self.arrival
            )));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.start_soc) || !unit.contains(&self.target_soc) {
            return Err(Error::Input(format!("session {}: SoC outside [0, 1]", self.id)));
        }
        if self.target_soc <= self.start_soc {
            return Err(Error::Input(format!(
                "session {}: target {} not above start {}",
                self.id, self.target_soc, self.start_soc
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> usize {
        self.departure - self.arrival
    }

    pub fn window(&self) -> SessionWindow {
        SessionWindow {
            t_start: self.arrival,
            t_end: self.departure,
            target: self.target_soc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityConfig {
    pub n_chargers: usize,
    pub charger_kw: f64,
    pub limit_kw: f64,
    pub step_hours: f64,
}

impl FacilityConfig {
    /// 21 chargers of 17.2 kW behind a 150 kW limit, hourly steps.
    pub fn paper_preset() -> Self {
        FacilityConfig {
            n_chargers: 21,
            charger_kw: 17.2,
            limit_kw: 150.0,
            step_hours: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.limit_kw > 0.0) || !(self.charger_kw > 0.0) || !(self.step_hours > 0.0) || self.n_chargers == 0 {
            return Err(Error::Config(format!("invalid facility {self:?}")));
        }
        Ok(())
    }

    /// Installed charger power over the station limit.
    pub fn oversubscription(&self) -> f64 {
        self.n_chargers as f64 * self.charger_kw / self.limit_kw
    }

    /// Station energy budget per step and direction, kWh.
    pub fn step_budget_kwh(&self) -> f64 {
        self.limit_kw * self.step_hours
    }
}

impl Default for FacilityConfig {
    fn default() -> Self {
        Self::paper_preset()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Perfect forecast, V2G.
    #[serde(rename = "PF", alias = "PF-V2G")]
    Pf,
    #[serde(rename = "PF-V1G")]
    PfV1g,
    /// Uncontrolled: charge at full rating on arrival until the target.
    #[serde(rename = "UC")]
    Uc,
    #[serde(rename = "NL-V2G")]
    NlV2g,
    #[serde(rename = "NL-V1G")]
    NlV1g,
    #[serde(rename = "L-V2G")]
    LV2g,
    #[serde(rename = "L-V1G")]
    LV1g,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Pf,
        Scenario::PfV1g,
        Scenario::Uc,
        Scenario::NlV2g,
        Scenario::NlV1g,
        Scenario::LV2g,
        Scenario::LV1g,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Pf => "PF",
            Scenario::PfV1g => "PF-V1G",
            Scenario::Uc => "UC",
            Scenario::NlV2g => "NL-V2G",
            Scenario::NlV1g => "NL-V1G",
            Scenario::LV2g => "L-V2G",
            Scenario::LV1g => "L-V1G",
        }
    }

    pub fn perfect_forecast(self) -> bool {
        matches!(self, Scenario::Pf | Scenario::PfV1g)
    }

    pub fn discharge(self) -> bool {
        matches!(self, Scenario::Pf | Scenario::NlV2g | Scenario::LV2g)
    }

    pub fn linear_model(self) -> bool {
        matches!(self, Scenario::LV2g | Scenario::LV1g)
    }

    pub fn needs_markov(self) -> bool {
        !self.perfect_forecast() && self != Scenario::Uc
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        if up == "PF-V2G" {
            return Ok(Scenario::Pf);
        }
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == up)
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Constant-parameter controller model used by the L scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub rating_kw: f64,
    pub eta: f64,
    pub c_per_mwh: f64,
}

impl Default for LinearModel {
    fn default() -> Self {
        LinearModel {
            rating_kw: 17.2,
            eta: 0.95,
            c_per_mwh: 15.0,
        }
    }
}

impl LinearModel {
    pub fn curves(&self, like: &BatteryCurves) -> Result<BatteryCurves> {
        BatteryCurves::constant(
            like.capacity_kwh(),
            like.soc_min(),
            like.soc_max(),
            self.rating_kw,
            self.rating_kw,
            self.eta,
            self.c_per_mwh,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Segments, penalty and partial-rate rule; the step length and the
    /// discharge flag are taken from the facility and the scenario.
    pub valuation: ValuationConfig,
    pub linear: LinearModel,
    /// Zero the EV that straddles the station limit instead of granting the
    /// remaining budget.
    pub strict_llf: bool,
    /// Keep per-decision audit rows.
    pub audit: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            valuation: ValuationConfig::default(),
            linear: LinearModel::default(),
            strict_llf: false,
            audit: true,
        }
    }
}

/// One EV decision at one step. `soc` is the SoC at the start of the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub t: usize,
    pub ev_id: String,
    pub lambda: f64,
    /// Matched price node; empty for UC.
    pub node: Option<usize>,
    pub p_kwh: f64,
    pub b_kwh: f64,
    pub p_trunc: f64,
    pub b_trunc: f64,
    pub soc: f64,
}

/// Station totals for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub price: f64,
    pub connected: usize,
    pub charged_kwh: f64,
    pub discharged_kwh: f64,
    pub grid_cost: f64,
    pub penalty_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub id: String,
    pub arrival: usize,
    pub departure: usize,
    pub start_soc: f64,
    pub target_soc: f64,
    pub final_soc: f64,
    pub grid_cost: f64,
    pub penalty_cost: f64,
    pub charged_kwh: f64,
    pub discharged_kwh: f64,
    pub feasible: bool,
    pub rejected: bool,
    /// SoC after each step of the session.
    pub soc: Vec<f64>,
    /// Applied `(p, b)` per step, grid-side kWh.
    pub actions: Vec<(f64, f64)>,
}

impl SessionOutcome {
    pub fn compliant(&self) -> bool {
        !self.rejected
            && (self.final_soc >= self.target_soc
                || (self.final_soc - self.target_soc).abs() <= COMPLIANCE_BAND + 1e-12)
    }

    /// Grid cost plus discharge penalty.
    pub fn total_cost(&self) -> f64 {
        self.grid_cost + self.penalty_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: Scenario,
    pub steps: Vec<StepRecord>,
    pub sessions: Vec<SessionOutcome>,
    pub audit: Vec<AuditRow>,
    pub grid_cost: f64,
    pub penalty_cost: f64,
    pub charged_kwh: f64,
    pub discharged_kwh: f64,
    pub rejected: usize,
    /// Decisions that inverted a value layer that was not monotone.
    pub non_monotone_lookups: usize,
    pub runtime_s: f64,
}

impl SimResult {
    pub fn total_cost(&self) -> f64 {
        self.grid_cost + self.penalty_cost
    }

    pub fn write_audit_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "ev_id", "lambda", "node", "p_kwh", "b_kwh", "p_trunc", "b_trunc", "soc"])?;
        for r in &self.audit {
            w.write_record([
                r.t.to_string(),
                r.ev_id.clone(),
                r.lambda.to_string(),
                r.node.map(|n| n.to_string()).unwrap_or_default(),
                r.p_kwh.to_string(),
                r.b_kwh.to_string(),
                r.p_trunc.to_string(),
                r.b_trunc.to_string(),
                r.soc.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Whether charging at the full environment rating (ignoring the station
/// limit) from `S` for the whole session ends within the compliance band.
pub fn session_feasible(s: &ChargingSession, env: &BatteryCurves, cfg: &FacilityConfig) -> bool {
    let mut e = s.start_soc;
    for _ in 0..s.duration() {
        if e >= s.target_soc {
            break;
        }
        let b = env.max_charge_kwh(e, cfg.step_hours).min(cfg.charger_kw * cfg.step_hours);
        e = env.step_soc(e, 0.0, b).min(env.soc_max());
    }
    e >= s.target_soc - COMPLIANCE_BAND - 1e-12
}

fn elapsed_ratio(s: &ChargingSession, t: usize) -> f64 {
    (t - s.arrival) as f64 / s.duration() as f64
}

fn llf_cmp(a: &ChargingSession, b: &ChargingSession, t: usize) -> Ordering {
    elapsed_ratio(b, t)
        .total_cmp(&elapsed_ratio(a, t))
        .then(a.arrival.cmp(&b.arrival))
        .then_with(|| a.id.cmp(&b.id))
}

/// Connected sessions by descending elapsed fraction of their stay, then
/// earlier arrival, then lower id.
pub fn llf_order<'a>(connected: &[&'a ChargingSession], t: usize) -> Vec<&'a ChargingSession> {
    let mut v = connected.to_vec();
    v.sort_by(|a, b| llf_cmp(a, b, t));
    v
}

/// Share of feasible, served sessions that ended compliant; `None` when
/// there are no feasible sessions.
pub fn compliance(result: &SimResult) -> Option<f64> {
    let feasible: Vec<_> = result.sessions.iter().filter(|s| s.feasible && !s.rejected).collect();
    if feasible.is_empty() {
        return None;
    }
    let ok = feasible.iter().filter(|s| s.compliant()).count();
    Some(ok as f64 / feasible.len() as f64)
}

/// Splits `budget` over `requests` by water-filling: equal shares, with
/// whatever small requests leave unused passed on to the rest.
pub fn water_fill(requests: &[f64], budget: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| requests[a].total_cmp(&requests[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; requests.len()];
    let mut left = budget.max(0.0);
    for (k, &i) in order.iter().enumerate() {
        let share = left / (order.len() - k) as f64;
        let g = requests[i].max(0.0).min(share);
        out[i] = g;
        left -= g;
    }
    out
}

struct Active {
    idx: usize,
    soc: f64,
    vf: Option<ValueFunction>,
}

struct Ledger {
    grid_cost: f64,
    penalty_cost: f64,
    charged: f64,
    discharged: f64,
    soc: Vec<f64>,
    actions: Vec<(f64, f64)>,
}

/// Runs one scenario over `prices`. Stochastic scenarios need `markov`; the
/// series' step-of-day decides which model step applies. PF scenarios value
/// and control on the environment curves, NL on the controller curves, L on
/// the constant model.
#[allow(clippy::needless_range_loop)]
pub fn simulate(
    cfg: &FacilityConfig,
    prices: &PriceSeries,
    markov: Option<&PriceMarkov>,
    curves: &CurveResolutionPair,
    sessions: &[ChargingSession],
    scenario: Scenario,
    opts: &SimOptions,
) -> Result<SimResult> {
    let started = Instant::now();
    cfg.validate()?;
    let n_steps = prices.len();
    if (prices.step_hours() - cfg.step_hours).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "price step {} h differs from facility step {} h",
            prices.step_hours(),
            cfg.step_hours
        )));
    }
    let markov = if scenario.needs_markov() {
        let m = markov.ok_or_else(|| Error::Config(format!("scenario {scenario} needs a price model")))?;
        if m.step_minutes() != prices.step_minutes() {
            return Err(Error::Config(format!(
                "price model step {} min differs from series step {} min",
                m.step_minutes(),
                prices.step_minutes()
            )));
        }
        if m.mode() == TrainMode::DapBias && prices.dap().is_none() {
            return Err(Error::Data("dap-bias model needs a day-ahead price column".into()));
        }
        Some(m)
    } else {
        None
    };

    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.sort_by(|&a, &b| {
        sessions[a]
            .arrival
            .cmp(&sessions[b].arrival)
            .then_with(|| sessions[a].id.cmp(&sessions[b].id))
    });
    for s in sessions {
        s.validate()?;
        if s.departure > n_steps {
            return Err(Error::Data(format!(
                "session {} departs at step {} but prices end at step {n_steps}",
                s.id, s.departure
            )));
        }
    }

    let ctrl = controller_curves(scenario, curves, opts)?;
    let vcfg = scenario_valuation(cfg, scenario, opts);
    let valuator = if scenario == Scenario::Uc {
        None
    } else {
        Some(Valuator::new(&ctrl, &vcfg)?)
    };
    let env = &curves.env;
    let rtp = prices.rtp();
    let budget = cfg.step_budget_kwh();
    let charger_kwh = cfg.charger_kw * cfg.step_hours;

    let lattice_for = |s: &ChargingSession| session_lattice(prices, markov, s);

    let mut outcomes: Vec<Option<SessionOutcome>> = vec![None; sessions.len()];
    let mut ledgers: Vec<Option<Ledger>> = (0..sessions.len()).map(|_| None).collect();
    let mut active: Vec<Active> = Vec::new();
    let mut steps = Vec::with_capacity(n_steps);
    let mut audit = Vec::new();
    let mut rejected = 0usize;
    let mut non_monotone = 0usize;
    let mut next_arrival = 0usize;

    for t in 0..n_steps {
        // Departures free their chargers before this step's arrivals.
        let mut k = 0;
        while k < active.len() {
            let idx = active[k].idx;
            if sessions[idx].departure == t {
                let a = active.swap_remove(k);
                outcomes[idx] = Some(finish(&sessions[idx], ledgers[idx].take().unwrap(), a.soc, env, cfg));
            } else {
                k += 1;
            }
        }

        let mut arrivals = Vec::new();
        while next_arrival < order.len() && sessions[order[next_arrival]].arrival == t {
            let idx = order[next_arrival];
            next_arrival += 1;
            if active.len() + arrivals.len() >= cfg.n_chargers {
                rejected += 1;
                let s = &sessions[idx];
                outcomes[idx] = Some(SessionOutcome {
                    id: s.id.clone(),
                    arrival: s.arrival,
                    departure: s.departure,
                    start_soc: s.start_soc,
                    target_soc: s.target_soc,
                    final_soc: s.start_soc,
                    grid_cost: 0.0,
                    penalty_cost: 0.0,
                    charged_kwh: 0.0,
                    discharged_kwh: 0.0,
                    feasible: session_feasible(s, env, cfg),
                    rejected: true,
                    soc: vec![],
                    actions: vec![],
                });
                log::debug!("session {} rejected at step {t}: all chargers busy", s.id);
                continue;
            }
            arrivals.push(idx);
        }
        let valued: Vec<Result<Option<ValueFunction>>> = arrivals
            .par_iter()
            .map(|&idx| {
                let Some(val) = &valuator else { return Ok(None) };
                let s = &sessions[idx];
                val.run(&lattice_for(s)?, s.window()).map(Some)
            })
            .collect();
        for (idx, vf) in arrivals.into_iter().zip(valued) {
            let s = &sessions[idx];
            ledgers[idx] = Some(Ledger {
                grid_cost: 0.0,
                penalty_cost: 0.0,
                charged: 0.0,
                discharged: 0.0,
                soc: Vec::with_capacity(s.duration()),
                actions: Vec::with_capacity(s.duration()),
            });
            active.push(Active {
                idx,
                soc: s.start_soc,
                vf: vf?,
            });
        }

        let price = rtp[t];
        if !price.is_finite() {
            return Err(Error::Data(format!("missing price at step {t}")));
        }
        let mut rec = StepRecord {
            t,
            price,
            connected: active.len(),
            charged_kwh: 0.0,
            discharged_kwh: 0.0,
            grid_cost: 0.0,
            penalty_cost: 0.0,
        };
        if active.is_empty() {
            steps.push(rec);
            continue;
        }

        active.sort_by(|a, b| llf_cmp(&sessions[a.idx], &sessions[b.idx], t));

        // Requests, then grants against the two station budgets.
        let mut requests: Vec<(f64, f64, Option<usize>)> = Vec::with_capacity(active.len());
        for a in &active {
            let s = &sessions[a.idx];
            match &a.vf {
                Some(vf) => {
                    let d = decide(vf, t, price, a.soc, &ctrl, &vcfg);
                    non_monotone += usize::from(d.non_monotone);
                    requests.push((d.p_kwh, d.b_kwh, Some(d.node)));
                }
                None => {
                    let need = if a.soc < s.target_soc {
                        (s.target_soc - a.soc) / env.sample(a.soc).eta * env.capacity_kwh()
                    } else {
                        0.0
                    };
                    let b = env.max_charge_kwh(a.soc, cfg.step_hours).min(charger_kwh).min(need);
                    requests.push((0.0, b, None));
                }
            }
        }
        let grants: Vec<(f64, f64)> = if valuator.is_none() {
            let want: Vec<f64> = requests.iter().map(|r| r.1).collect();
            water_fill(&want, budget).into_iter().map(|b| (0.0, b)).collect()
        } else {
            let (mut p_left, mut b_left) = (budget, budget);
            let (mut p_closed, mut b_closed) = (false, false);
            requests
                .iter()
                .map(|&(p, b, _)| {
                    let gp = grant(p, &mut p_left, &mut p_closed, opts.strict_llf);
                    let gb = grant(b, &mut b_left, &mut b_closed, opts.strict_llf);
                    (gp, gb)
                })
                .collect()
        };

        for ((a, req), (gp, gb)) in active.iter_mut().zip(&requests).zip(grants) {
            let s = &sessions[a.idx];
            let e = a.soc;
            let (p, b) = env.truncate_action(e, gp.min(charger_kwh), gb.min(charger_kwh), cfg.step_hours);
            let next = env.step_soc(e, p, b).clamp(env.soc_min(), env.soc_max());
            let g = energy_cost(price, b - p);
            let pen = energy_cost(env.sample(e).c_per_mwh, p);
            let l = ledgers[a.idx].as_mut().unwrap();
            l.grid_cost += g;
            l.penalty_cost += pen;
            l.charged += b;
            l.discharged += p;
            l.soc.push(next);
            l.actions.push((p, b));
            rec.charged_kwh += b;
            rec.discharged_kwh += p;
            rec.grid_cost += g;
            rec.penalty_cost += pen;
            if opts.audit {
                audit.push(AuditRow {
                    t,
                    ev_id: s.id.clone(),
                    lambda: price,
                    node: req.2,
                    p_kwh: gp,
                    b_kwh: gb,
                    p_trunc: p,
                    b_trunc: b,
                    soc: e,
                });
            }
            a.soc = next;
        }
        steps.push(rec);
    }
    for a in active.drain(..) {
        let idx = a.idx;
        outcomes[idx] = Some(finish(&sessions[idx], ledgers[idx].take().unwrap(), a.soc, env, cfg));
    }

    let sessions_out: Vec<SessionOutcome> = outcomes
        .into_iter()
        .map(|o| o.expect("every session is admitted or rejected"))
        .collect();
    let mut res = SimResult {
        scenario,
        steps,
        sessions: sessions_out,
        audit,
        grid_cost: 0.0,
        penalty_cost: 0.0,
        charged_kwh: 0.0,
        discharged_kwh: 0.0,
        rejected,
        non_monotone_lookups: non_monotone,
        runtime_s: 0.0,
    };
    for s in &res.sessions {
        res.grid_cost += s.grid_cost;
        res.penalty_cost += s.penalty_cost;
        res.charged_kwh += s.charged_kwh;
        res.discharged_kwh += s.discharged_kwh;
    }
    res.runtime_s = started.elapsed().as_secs_f64();
    Ok(res)
}

/// Curves the scenario's controller values and decides on: the plant itself
/// under perfect forecast, the constant model for L, the coarse table for NL.
pub fn controller_curves(scenario: Scenario, curves: &CurveResolutionPair, opts: &SimOptions) -> Result<BatteryCurves> {
    if scenario.perfect_forecast() {
        Ok(curves.env.clone())
    } else if scenario.linear_model() {
        opts.linear.curves(&curves.env)
    } else {
        Ok(curves.ctrl.clone())
    }
}

fn scenario_valuation(cfg: &FacilityConfig, scenario: Scenario, opts: &SimOptions) -> ValuationConfig {
    ValuationConfig {
        step_hours: cfg.step_hours,
        discharge: scenario.discharge(),
        ..opts.valuation.clone()
    }
}

/// Price lattice over a session: the realized prices without a model,
/// otherwise the model's nodes from the arrival's step of day.
fn session_lattice(prices: &PriceSeries, markov: Option<&PriceMarkov>, s: &ChargingSession) -> Result<PriceLattice> {
    match markov {
        None => Ok(PriceLattice::deterministic(&prices.rtp()[s.arrival..s.departure])),
        Some(m) => {
            let offsets = prices.dap().map(|d| &d[s.arrival..s.departure]);
            let offsets = if m.mode() == TrainMode::DapBias { offsets } else { None };
            m.lattice((prices.phase() + s.arrival) % m.horizon(), s.duration(), offsets)
        }
    }
}

/// The value function `simulate` would compute for `session` on arrival;
/// `None` for UC. PF scenarios ignore `markov`.
pub fn session_value_function(
    cfg: &FacilityConfig,
    prices: &PriceSeries,
    markov: Option<&PriceMarkov>,
    curves: &CurveResolutionPair,
    session: &ChargingSession,
    scenario: Scenario,
    opts: &SimOptions,
) -> Result<Option<ValueFunction>> {
    if scenario == Scenario::Uc {
        return Ok(None);
    }
    session.validate()?;
    if session.departure > prices.len() {
        return Err(Error::Data(format!("session {} departs after the prices end", session.id)));
    }
    let markov = if scenario.needs_markov() {
        Some(markov.ok_or_else(|| Error::Config(format!("scenario {scenario} needs a price model")))?)
    } else {
        None
    };
    let ctrl = controller_curves(scenario, curves, opts)?;
    let val = Valuator::new(&ctrl, &scenario_valuation(cfg, scenario, opts))?;
    val.run(&session_lattice(prices, markov, session)?, session.window()).map(Some)
}

/// Grant from one station budget in LLF order. Once a request does not fit,
/// the straddling EV gets what is left (or nothing in strict mode) and every
/// later EV gets nothing.
fn grant(req: f64, left: &mut f64, closed: &mut bool, strict: bool) -> f64 {
    if *closed || req <= 0.0 {
        return 0.0;
    }
    if req <= *left {
        *left -= req;
        return req;
    }
    *closed = true;
    let g = if strict { 0.0 } else { left.max(0.0) };
    *left = 0.0;
    g
}

fn finish(s: &ChargingSession, l: Ledger, soc: f64, env: &BatteryCurves, cfg: &FacilityConfig) -> SessionOutcome {
    SessionOutcome {
        id: s.id.clone(),
        arrival: s.arrival,
        departure: s.departure,
        start_soc: s.start_soc,
        target_soc: s.target_soc,
        final_soc: soc,
        grid_cost: l.grid_cost,
        penalty_cost: l.penalty_cost,
        charged_kwh: l.charged,
        discharged_kwh: l.discharged,
        feasible: session_feasible(s, env, cfg),
        rejected: false,
        soc: l.soc,
        actions: l.actions,
    }
}

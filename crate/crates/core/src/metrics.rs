//! Evaluation figures over simulation results: savings against a baseline,
//! energy balances, the ledger check, equivalent mileage and per-unit
//! benefit rates, plus the CSV/JSON report writers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battery::BatteryCurves;
use crate::energy_cost;
use crate::error::{Error, Result};
use crate::fleet::{compliance, Scenario, SimResult};

/// Which cost a figure is computed on. The operator's headline is the grid
/// bill; the penalty-inclusive variant adds the battery degradation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostBasis {
    Grid,
    WithPenalty,
}

impl CostBasis {
    pub fn cost(self, r: &SimResult) -> f64 {
        match self {
            CostBasis::Grid => r.grid_cost,
            CostBasis::WithPenalty => r.total_cost(),
        }
    }
}

/// Savings of a scenario against a baseline. `percent` is absent when the
/// baseline cost is not positive; `absolute` is always baseline − scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub percent: Option<f64>,
    pub absolute: f64,
}

impl Savings {
    /// Set when the percentage could not be formed.
    pub fn flagged(&self) -> bool {
        self.percent.is_none()
    }
}

/// `(baseline − scenario)/baseline × 100` on the chosen cost basis. Both runs
/// must cover the same sessions over the same steps.
pub fn cost_savings(scenario: &SimResult, baseline: &SimResult, basis: CostBasis) -> Result<Savings> {
    if scenario.steps.len() != baseline.steps.len()
        || scenario.sessions.len() != baseline.sessions.len()
        || scenario.sessions.iter().zip(&baseline.sessions).any(|(a, b)| a.id != b.id)
    {
        return Err(Error::Input(format!(
            "{} and {} were run on different sessions or price spans",
            scenario.scenario, baseline.scenario
        )));
    }
    Ok(savings_from_costs(basis.cost(scenario), basis.cost(baseline)))
}

pub fn savings_from_costs(scenario: f64, baseline: f64) -> Savings {
    let absolute = baseline - scenario;
    Savings {
        percent: (baseline > 0.0).then(|| absolute / baseline * 100.0),
        absolute,
    }
}

/// Grid-side energy totals, kWh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub charged_kwh: f64,
    pub discharged_kwh: f64,
}

impl EnergyBalance {
    pub fn charged_mwh(&self) -> f64 {
        self.charged_kwh / 1000.0
    }

    pub fn discharged_mwh(&self) -> f64 {
        self.discharged_kwh / 1000.0
    }
}

/// Σb and Σp over every session and step.
pub fn energy_balance(result: &SimResult) -> EnergyBalance {
    result.sessions.iter().fold(EnergyBalance::default(), |acc, s| EnergyBalance {
        charged_kwh: acc.charged_kwh + s.charged_kwh,
        discharged_kwh: acc.discharged_kwh + s.discharged_kwh,
    })
}

/// Grid and penalty cost rebuilt from the audit log alone: per session,
/// `λ(b − p)` and `c_env(e)·p` summed in step order, then summed over
/// sessions in result order. Matches the simulator's own totals bit for bit.
pub fn ledger_costs(result: &SimResult, env: &BatteryCurves) -> (f64, f64) {
    let mut per_session: HashMap<&str, (f64, f64)> = HashMap::new();
    for row in &result.audit {
        let acc = per_session.entry(row.ev_id.as_str()).or_default();
        acc.0 += energy_cost(row.lambda, row.b_trunc - row.p_trunc);
        acc.1 += energy_cost(env.sample(row.soc).c_per_mwh, row.p_trunc);
    }
    result.sessions.iter().fold((0.0, 0.0), |(g, p), s| {
        let (sg, sp) = per_session.get(s.id.as_str()).copied().unwrap_or_default();
        (g + sg, p + sp)
    })
}

/// Miles of driving the discharged energy stands for:
/// `discharged × session_fraction / capacity × epa_range`.
pub fn equivalent_mileage(discharged_kwh: f64, session_fraction: f64, capacity_kwh: f64, epa_range_mi: f64) -> Result<f64> {
    if !(capacity_kwh > 0.0) {
        return Err(Error::Input(format!("capacity must be positive, got {capacity_kwh}")));
    }
    if !(discharged_kwh >= 0.0 && epa_range_mi >= 0.0 && (0.0..=1.0).contains(&session_fraction)) {
        return Err(Error::Input(format!(
            "mileage needs non-negative energy and range and a fraction in [0, 1], got {discharged_kwh} kWh, \
             {session_fraction}, {epa_range_mi} mi"
        )));
    }
    Ok(discharged_kwh * session_fraction / capacity_kwh * epa_range_mi)
}

/// Savings per discharged kWh and per equivalent mile; absent where the
/// denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitRates {
    pub per_kwh: Option<f64>,
    pub per_mile: Option<f64>,
}

pub fn benefit_rates(savings: f64, discharged_kwh: f64, miles: f64) -> BenefitRates {
    let div = |d: f64| (d > 0.0).then(|| savings / d);
    BenefitRates {
        per_kwh: div(discharged_kwh),
        per_mile: div(miles),
    }
}

/// One row of a scenario comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub scenario: String,
    /// Grid cost, $.
    pub cost: f64,
    pub cost_with_penalty: f64,
    /// Against the baseline, grid cost basis.
    pub savings_pct: Option<f64>,
    pub savings_pct_with_penalty: Option<f64>,
    pub compliance: Option<f64>,
    pub charged_mwh: f64,
    pub discharged_mwh: f64,
    pub rejected: usize,
    #[serde(skip)]
    pub runtime_s: f64,
}

impl ScenarioComparison {
    pub fn new(result: &SimResult, baseline: &SimResult) -> Result<Self> {
        let grid = cost_savings(result, baseline, CostBasis::Grid)?;
        let pen = cost_savings(result, baseline, CostBasis::WithPenalty)?;
        let bal = energy_balance(result);
        Ok(ScenarioComparison {
            scenario: result.scenario.to_string(),
            cost: result.grid_cost,
            cost_with_penalty: result.total_cost(),
            savings_pct: grid.percent,
            savings_pct_with_penalty: pen.percent,
            compliance: compliance(result),
            charged_mwh: bal.charged_mwh(),
            discharged_mwh: bal.discharged_mwh(),
            rejected: result.rejected,
            runtime_s: result.runtime_s,
        })
    }
}

/// Parameters for turning discharged energy into equivalent miles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MileageConfig {
    pub capacity_kwh: f64,
    pub epa_range_mi: f64,
}

impl Default for MileageConfig {
    fn default() -> Self {
        MileageConfig {
            capacity_kwh: 100.0,
            epa_range_mi: 348.0,
        }
    }
}

/// Incremental benefit of discharge: a V2G scenario against its V1G twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2gBenefit {
    pub scenario: String,
    pub against: String,
    /// Grid-cost savings against the V1G run, $.
    pub savings: f64,
    pub discharged_kwh: f64,
    /// Share of sessions that discharged at all.
    pub session_fraction: f64,
    pub miles: f64,
    pub per_kwh: Option<f64>,
    pub per_mile: Option<f64>,
}

fn v1g_twin(s: Scenario) -> Option<Scenario> {
    match s {
        Scenario::Pf => Some(Scenario::PfV1g),
        Scenario::NlV2g => Some(Scenario::NlV1g),
        Scenario::LV2g => Some(Scenario::LV1g),
        _ => None,
    }
}

pub fn v2g_benefit(v2g: &SimResult, v1g: &SimResult, mileage: &MileageConfig) -> Result<V2gBenefit> {
    let savings = cost_savings(v2g, v1g, CostBasis::Grid)?.absolute;
    let discharged = energy_balance(v2g).discharged_kwh;
    let n = v2g.sessions.len();
    let fraction = if n == 0 {
        0.0
    } else {
        v2g.sessions.iter().filter(|s| s.discharged_kwh > 0.0).count() as f64 / n as f64
    };
    let miles = equivalent_mileage(discharged, fraction, mileage.capacity_kwh, mileage.epa_range_mi)?;
    let rates = benefit_rates(savings, discharged, miles);
    Ok(V2gBenefit {
        scenario: v2g.scenario.to_string(),
        against: v1g.scenario.to_string(),
        savings,
        discharged_kwh: discharged,
        session_fraction: fraction,
        miles,
        per_kwh: rates.per_kwh,
        per_mile: rates.per_mile,
    })
}

/// Everything a `compare` run reports. Runtimes are left out so reruns with
/// the same configuration produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub baseline: String,
    pub n_sessions: usize,
    pub n_steps: usize,
    pub rows: Vec<ScenarioComparison>,
    pub v2g_benefit: Vec<V2gBenefit>,
}

impl Summary {
    /// Rows for every result against the one whose scenario is `baseline`.
    pub fn build(
        results: &[SimResult],
        baseline: Scenario,
        mileage: &MileageConfig,
        config_hash: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let base = results
            .iter()
            .find(|r| r.scenario == baseline)
            .ok_or_else(|| Error::Input(format!("baseline {baseline} is not among the results")))?;
        let rows = results
            .iter()
            .map(|r| ScenarioComparison::new(r, base))
            .collect::<Result<Vec<_>>>()?;
        let mut benefits = Vec::new();
        for r in results {
            if let Some(twin) = v1g_twin(r.scenario) {
                if let Some(v1g) = results.iter().find(|x| x.scenario == twin) {
                    benefits.push(v2g_benefit(r, v1g, mileage)?);
                }
            }
        }
        Ok(Summary {
            config_hash: config_hash.into(),
            seed,
            baseline: baseline.to_string(),
            n_sessions: base.sessions.len(),
            n_steps: base.steps.len(),
            rows,
            v2g_benefit: benefits,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `scenario,cost,savings_pct,compliance,charged_mwh,discharged_mwh,runtime_s`
/// plus the penalty-inclusive columns at the end. Absent values are empty.
pub fn write_comparison_csv(rows: &[ScenarioComparison], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "cost",
        "savings_pct",
        "compliance",
        "charged_mwh",
        "discharged_mwh",
        "runtime_s",
        "cost_with_penalty",
        "savings_pct_with_penalty",
        "rejected",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.cost.to_string(),
            opt(r.savings_pct),
            opt(r.compliance),
            r.charged_mwh.to_string(),
            r.discharged_mwh.to_string(),
            format!("{:.3}", r.runtime_s),
            r.cost_with_penalty.to_string(),
            opt(r.savings_pct_with_penalty),
            r.rejected.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format running totals: `scenario,t,cumulative_cost,cumulative_cost_with_penalty`.
pub fn write_cumulative_csv(results: &[SimResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "t", "cumulative_cost", "cumulative_cost_with_penalty"])?;
    for r in results {
        let (mut grid, mut total) = (0.0, 0.0);
        for s in &r.steps {
            grid += s.grid_cost;
            total += s.grid_cost + s.penalty_cost;
            w.write_record([r.scenario.to_string(), s.t.to_string(), grid.to_string(), total.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per session: `id,arrival,departure,start_soc,target_soc,final_soc,grid_cost,penalty_cost,charged_kwh,discharged_kwh,feasible,rejected,compliant`.
pub fn write_session_outcomes_csv(result: &SimResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "id",
        "arrival",
        "departure",
        "start_soc",
        "target_soc",
        "final_soc",
        "grid_cost",
        "penalty_cost",
        "charged_kwh",
        "discharged_kwh",
        "feasible",
        "rejected",
        "compliant",
    ])?;
    for s in &result.sessions {
        w.write_record([
            s.id.clone(),
            s.arrival.to_string(),
            s.departure.to_string(),
            s.start_soc.to_string(),
            s.target_soc.to_string(),
            s.final_soc.to_string(),
            s.grid_cost.to_string(),
            s.penalty_cost.to_string(),
            s.charged_kwh.to_string(),
            s.discharged_kwh.to_string(),
            s.feasible.to_string(),
            s.rejected.to_string(),
            s.compliant().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Station totals per step.
pub fn write_steps_csv(result: &SimResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "price", "connected", "charged_kwh", "discharged_kwh", "grid_cost", "penalty_cost"])?;
    for s in &result.steps {
        w.write_record([
            s.t.to_string(),
            s.price.to_string(),
            s.connected.to_string(),
            s.charged_kwh.to_string(),
            s.discharged_kwh.to_string(),
            s.grid_cost.to_string(),
            s.penalty_cost.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

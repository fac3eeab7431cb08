//! First-order Markov model of the real-time price.
//!
//! Node values are per-step empirical quantile centers of the training
//! history; transitions are Laplace-smoothed counts between consecutive
//! steps. In [`TrainMode::DapBias`] the model is fit on the RTP − DAP
//! residual and the day-ahead price is added back when a session lattice is
//! built.

use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Laplace smoothing added to every transition count.
pub const TRANSITION_PSEUDOCOUNT: f64 = 1.0;

/// Relative distance under which two bin centers are merged into one node.
const NODE_MERGE_TOL: f64 = 1e-9;

/// Timestamp used for series that do not come from a file.
pub fn default_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2019, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch")
}

/// Uniformly spaced real-time price samples, $/MWh, with an optional aligned
/// day-ahead price column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    start: NaiveDateTime,
    step_minutes: u32,
    rtp: Vec<f64>,
    dap: Option<Vec<f64>>,
}

impl PriceSeries {
    pub fn new(
        start: NaiveDateTime,
        step_minutes: u32,
        rtp: Vec<f64>,
        dap: Option<Vec<f64>>,
    ) -> Result<Self> {
        if step_minutes == 0 {
            return Err(Error::Input("step length must be positive".into()));
        }
        if let Some(d) = &dap {
            if d.len() != rtp.len() {
                return Err(Error::Data(format!(
                    "day-ahead column has {} samples, real-time has {}",
                    d.len(),
                    rtp.len()
                )));
            }
        }
        let series = PriceSeries {
            start,
            step_minutes,
            rtp,
            dap,
        };
        let all = series
            .rtp
            .iter()
            .chain(series.dap.iter().flatten())
            .enumerate();
        for (i, v) in all {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite price at sample {}",
                    i % series.rtp.len().max(1)
                )));
            }
        }
        Ok(series)
    }

    /// Series starting at [`default_epoch`].
    pub fn from_values(step_minutes: u32, rtp: Vec<f64>) -> Result<Self> {
        Self::new(default_epoch(), step_minutes, rtp, None)
    }

    /// Builds a series from explicit timestamps, checking that they are
    /// strictly increasing with spacing equal to `step_minutes`.
    pub fn from_points(
        step_minutes: u32,
        points: &[(NaiveDateTime, f64, Option<f64>)],
    ) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Data("empty price series".into()));
        };
        let step = TimeDelta::minutes(i64::from(step_minutes));
        for (k, w) in points.windows(2).enumerate() {
            if w[1].0 - w[0].0 != step {
                return Err(Error::Data(format!(
                    "price samples {} ({}) and {} ({}) are not {} minutes apart",
                    k,
                    w[0].0,
                    k + 1,
                    w[1].0,
                    step_minutes
                )));
            }
        }
        let rtp = points.iter().map(|p| p.1).collect();
        let dap = if points.iter().all(|p| p.2.is_some()) {
            Some(points.iter().map(|p| p.2.unwrap_or_default()).collect())
        } else {
            None
        };
        Self::new(first.0, step_minutes, rtp, dap)
    }

    pub fn len(&self) -> usize {
        self.rtp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rtp.is_empty()
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn step_hours(&self) -> f64 {
        f64::from(self.step_minutes) / 60.0
    }

    pub fn rtp(&self) -> &[f64] {
        &self.rtp
    }

    pub fn dap(&self) -> Option<&[f64]> {
        self.dap.as_deref()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + TimeDelta::minutes(i64::from(self.step_minutes) * i as i64)
    }

    /// Step-of-day index of the first sample.
    pub fn phase(&self) -> usize {
        let minutes = self.start.hour() * 60 + self.start.minute();
        (minutes / self.step_minutes) as usize
    }

    /// Sub-series `[from, from + len)`.
    pub fn slice(&self, from: usize, len: usize) -> PriceSeries {
        let end = (from + len).min(self.len());
        PriceSeries {
            start: self.timestamp(from),
            step_minutes: self.step_minutes,
            rtp: self.rtp[from..end].to_vec(),
            dap: self.dap.as_ref().map(|d| d[from..end].to_vec()),
        }
    }

    /// Cuts the series into consecutive days of `horizon` samples. A trailing
    /// partial day is a data error.
    pub fn split_days(&self, horizon: usize) -> Result<Vec<PriceSeries>> {
        if horizon == 0 {
            return Err(Error::Input("horizon must be positive".into()));
        }
        if !self.len().is_multiple_of(horizon) {
            let d = self.len() / horizon;
            return Err(Error::Data(format!(
                "day {} (starting {}) has {} samples, expected {}",
                d,
                self.timestamp(d * horizon),
                self.len() % horizon,
                horizon
            )));
        }
        Ok((0..self.len() / horizon)
            .map(|d| self.slice(d * horizon, horizon))
            .collect())
    }
}

/// What the Markov nodes are fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Nodes are real-time prices.
    RawPrice,
    /// Nodes are real-time minus day-ahead residuals.
    DapBias,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw-price" => Ok(TrainMode::RawPrice),
            "dap-bias" | "bias" => Ok(TrainMode::DapBias),
            other => Err(Error::Config(format!("unknown markov mode '{other}'"))),
        }
    }
}

/// Discretized first-order Markov price process over one operating day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMarkov {
    format_version: u32,
    mode: TrainMode,
    step_minutes: u32,
    /// `nodes[t]`, ascending, $/MWh (residuals in dap-bias mode).
    nodes: Vec<Vec<f64>>,
    /// Empirical frequency of each node in the training data.
    weights: Vec<Vec<f64>>,
    /// `transitions[t][i][j]`: node `i` at step `t` to node `j` at `(t + 1) % horizon`.
    transitions: Vec<Vec<Vec<f64>>>,
}

/// Index of the node closest to `price`; equidistant prices go to the lower
/// (cheaper) node, out-of-range prices clamp to the end nodes.
pub fn nearest_node(nodes: &[f64], price: f64) -> usize {
    debug_assert!(!nodes.is_empty());
    let k = nodes.partition_point(|&x| x < price);
    if k == 0 {
        return 0;
    }
    if k == nodes.len() {
        return nodes.len() - 1;
    }
    if nodes[k] - price < price - nodes[k - 1] {
        k
    } else {
        k - 1
    }
}

fn quantile_nodes(values: &mut [f64], n_nodes: usize) -> (Vec<f64>, Vec<f64>) {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let mut nodes: Vec<f64> = Vec::with_capacity(n_nodes);
    let mut weights: Vec<f64> = Vec::with_capacity(n_nodes);
    for b in 0..n_nodes {
        let (lo, hi) = (b * n / n_nodes, (b + 1) * n / n_nodes);
        if hi == lo {
            continue;
        }
        let mean = values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        let w = (hi - lo) as f64;
        match nodes.last_mut() {
            Some(last) if (mean - *last).abs() <= NODE_MERGE_TOL * last.abs().max(1.0) => {
                let lw = weights.last_mut().expect("paired");
                *last = (*last * *lw + mean * w) / (*lw + w);
                *lw += w;
            }
            _ => {
                nodes.push(mean);
                weights.push(w);
            }
        }
    }
    for w in &mut weights {
        *w /= n as f64;
    }
    (nodes, weights)
}

/// Trains the Markov model from whole days of history.
///
/// Every day must hold exactly `horizon` samples. Asking for more nodes than
/// there are distinct observations collapses nodes (with a warning) rather
/// than failing.
pub fn train_markov(
    history: &[PriceSeries],
    n_nodes: usize,
    horizon: usize,
    mode: TrainMode,
) -> Result<PriceMarkov> {
    if n_nodes == 0 {
        return Err(Error::Input("n_nodes must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::Input("horizon must be positive".into()));
    }
    let Some(first) = history.first() else {
        return Err(Error::Data("empty price history".into()));
    };
    let step_minutes = first.step_minutes();

    let mut days: Vec<Vec<f64>> = Vec::with_capacity(history.len());
    for (d, day) in history.iter().enumerate() {
        if day.len() != horizon {
            return Err(Error::Data(format!(
                "day {} (starting {}) has {} samples, expected {}",
                d,
                day.start(),
                day.len(),
                horizon
            )));
        }
        if day.step_minutes() != step_minutes {
            return Err(Error::Data(format!(
                "day {} (starting {}) has a {}-minute step, expected {}",
                d,
                day.start(),
                day.step_minutes(),
                step_minutes
            )));
        }
        let values = match mode {
            TrainMode::RawPrice => day.rtp().to_vec(),
            TrainMode::DapBias => {
                let dap = day.dap().ok_or_else(|| {
                    Error::Data(format!(
                        "day {} (starting {}) has no day-ahead prices for dap-bias training",
                        d,
                        day.start()
                    ))
                })?;
                day.rtp().iter().zip(dap).map(|(r, a)| r - a).collect()
            }
        };
        days.push(values);
    }

    let mut nodes = Vec::with_capacity(horizon);
    let mut weights = Vec::with_capacity(horizon);
    let mut short = Vec::new();
    for t in 0..horizon {
        let mut column: Vec<f64> = days.iter().map(|d| d[t]).collect();
        let (n, w) = quantile_nodes(&mut column, n_nodes);
        if n.len() < n_nodes {
            short.push(n.len());
        }
        nodes.push(n);
        weights.push(w);
    }
    if let Some(fewest) = short.iter().min() {
        log::warn!(
            "{} of {horizon} steps have fewer than {n_nodes} distinct price nodes (as few as {fewest}); \
             the history has {} days",
            short.len(),
            days.len()
        );
    }

    let assign = |t: usize, v: f64| nearest_node(&nodes[t], v);
    let mut transitions: Vec<Vec<Vec<f64>>> = (0..horizon)
        .map(|t| {
            let next = &nodes[(t + 1) % horizon];
            vec![vec![TRANSITION_PSEUDOCOUNT; next.len()]; nodes[t].len()]
        })
        .collect();
    for (d, day) in days.iter().enumerate() {
        for t in 0..horizon - 1 {
            transitions[t][assign(t, day[t])][assign(t + 1, day[t + 1])] += 1.0;
        }
        // Day boundary: only when the next history day directly follows.
        if let Some(next_day) = days.get(d + 1) {
            let contiguous = history[d].timestamp(horizon) == history[d + 1].start();
            if contiguous {
                transitions[horizon - 1][assign(horizon - 1, day[horizon - 1])]
                    [assign(0, next_day[0])] += 1.0;
            }
        }
    }
    for matrix in &mut transitions {
        for row in matrix.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
    }

    Ok(PriceMarkov {
        format_version: MODEL_FORMAT_VERSION,
        mode,
        step_minutes,
        nodes,
        weights,
        transitions,
    })
}

impl PriceMarkov {
    /// Builds a model from explicit nodes and transition matrices.
    pub fn from_parts(
        mode: TrainMode,
        step_minutes: u32,
        nodes: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let weights = nodes
            .iter()
            .map(|n| vec![1.0 / n.len().max(1) as f64; n.len()])
            .collect();
        let m = PriceMarkov {
            format_version: MODEL_FORMAT_VERSION,
            mode,
            step_minutes,
            nodes,
            weights,
            transitions,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks the structural invariants: ascending nodes, matching matrix
    /// shapes, probabilities in [0, 1] and rows summing to one.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let h = self.nodes.len();
        if h == 0 || self.transitions.len() != h || self.weights.len() != h {
            return Err(Error::Data("model horizon mismatch".into()));
        }
        for t in 0..h {
            let n = &self.nodes[t];
            if n.is_empty() {
                return Err(Error::Data(format!("step {t} has no price nodes")));
            }
            if n.iter().any(|v| !v.is_finite()) || n.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!(
                    "step {t} nodes are not finite and strictly ascending"
                )));
            }
            let next = self.nodes[(t + 1) % h].len();
            let m = &self.transitions[t];
            if m.len() != n.len() || m.iter().any(|r| r.len() != next) {
                return Err(Error::Data(format!("step {t} transition matrix shape")));
            }
            for (i, row) in m.iter().enumerate() {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Data(format!("step {t} row {i}: probability outside [0,1]")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Data(format!("step {t} row {i} sums to {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.nodes.len()
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    /// Largest node count over all steps.
    pub fn n_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn nodes(&self, t: usize) -> &[f64] {
        &self.nodes[t]
    }

    pub fn weights(&self, t: usize) -> &[f64] {
        &self.weights[t]
    }

    pub fn transitions(&self, t: usize) -> &[Vec<f64>] {
        &self.transitions[t]
    }

    /// Node closest to `price` at step `t`.
    pub fn node_index(&self, t: usize, price: f64) -> Result<usize> {
        if t >= self.horizon() {
            return Err(Error::Input(format!(
                "step {t} outside model horizon {}",
                self.horizon()
            )));
        }
        if !price.is_finite() {
            return Err(Error::Input(format!("non-finite price {price}")));
        }
        Ok(nearest_node(&self.nodes[t], price))
    }

    /// Node/transition lattice for `len` consecutive steps starting at
    /// step-of-day `phase`, wrapping across days. `offsets` (one per lattice
    /// step) are added to the node values; in dap-bias mode these are the
    /// day-ahead prices and are required.
    pub fn lattice(&self, phase: usize, len: usize, offsets: Option<&[f64]>) -> Result<PriceLattice> {
        if self.mode == TrainMode::DapBias && offsets.is_none() {
            return Err(Error::Input(
                "dap-bias model needs day-ahead prices to build a lattice".into(),
            ));
        }
        if let Some(o) = offsets {
            if o.len() < len {
                return Err(Error::Input(format!(
                    "{} offsets for a {len}-step lattice",
                    o.len()
                )));
            }
        }
        let h = self.horizon();
        let nodes = (0..len)
            .map(|k| {
                let off = offsets.map_or(0.0, |o| o[k]);
                self.nodes[(phase + k) % h].iter().map(|v| v + off).collect()
            })
            .collect();
        let transitions = (0..len.saturating_sub(1))
            .map(|k| self.transitions[(phase + k) % h].clone())
            .collect();
        Ok(PriceLattice { nodes, transitions })
    }

    /// Copy of the model with `offsets[t]` added to the nodes of step `t`.
    /// Applied to a dap-bias model with a day's DAP this gives a raw-price
    /// model for that day.
    pub fn with_offsets(&self, offsets: &[f64]) -> Result<PriceMarkov> {
        if offsets.len() != self.horizon() {
            return Err(Error::Input(format!(
                "{} offsets for horizon {}",
                offsets.len(),
                self.horizon()
            )));
        }
        let mut m = self.clone();
        m.mode = TrainMode::RawPrice;
        for (n, o) in m.nodes.iter_mut().zip(offsets) {
            n.iter_mut().for_each(|v| *v += o);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: PriceMarkov = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Price nodes and transitions for the steps of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceLattice {
    /// `nodes[k]` for lattice step `k`, ascending.
    pub nodes: Vec<Vec<f64>>,
    /// `transitions[k][i][j]`: step `k` node `i` to step `k + 1` node `j`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl PriceLattice {
    /// One node per step at the realized price, transition weight 1.
    pub fn deterministic(prices: &[f64]) -> Self {
        PriceLattice {
            nodes: prices.iter().map(|&p| vec![p]).collect(),
            transitions: vec![vec![vec![1.0]]; prices.len().saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Node-index path of length `len` starting at step-of-day `t0`, following
/// the transition matrices (wrapping across days). Without `start`, the first
/// node is drawn from the empirical node frequencies.
pub fn sample_node_path<R: Rng + ?Sized>(
    markov: &PriceMarkov,
    rng: &mut R,
    t0: usize,
    len: usize,
    start: Option<usize>,
) -> Vec<usize> {
    let h = markov.horizon();
    let mut path = Vec::with_capacity(len);
    if len == 0 {
        return path;
    }
    let mut node = match start {
        Some(i) => i.min(markov.nodes[t0 % h].len() - 1),
        None => draw(&markov.weights[t0 % h], rng.random()),
    };
    path.push(node);
    for k in 1..len {
        let t = (t0 + k - 1) % h;
        node = draw(&markov.transitions[t][node], rng.random());
        path.push(node);
    }
    path
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Synthetic price series sampled from the model under a fixed seed. Values
/// are node values (residuals for a dap-bias model).
pub fn sample_path(
    markov: &PriceMarkov,
    seed: u64,
    t0: usize,
    len: usize,
    start: Option<usize>,
) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = markov.horizon();
    let path = sample_node_path(markov, &mut rng, t0, len, start);
    let rtp = path
        .iter()
        .enumerate()
        .map(|(k, &i)| markov.nodes[(t0 + k) % h][i])
        .collect();
    let start_ts = default_epoch() + TimeDelta::minutes(i64::from(markov.step_minutes) * t0 as i64);
    PriceSeries {
        start: start_ts,
        step_minutes: markov.step_minutes,
        rtp,
        dap: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days_of(profiles: &[Vec<f64>]) -> Vec<PriceSeries> {
        let h = profiles[0].len();
        let flat: Vec<f64> = profiles.iter().flatten().copied().collect();
        PriceSeries::from_values(60, flat)
            .unwrap()
            .split_days(h)
            .unwrap()
    }

    #[test]
    fn constant_history_collapses_to_one_node() {
        let days = days_of(&vec![vec![30.0; 24]; 5]);
        let m = train_markov(&days, 3, 24, TrainMode::RawPrice).unwrap();
        for t in 0..24 {
            assert_eq!(m.nodes(t), &[30.0]);
            assert_eq!(m.transitions(t), &[vec![1.0]]);
        }
    }

    #[test]
    fn alternating_days_give_two_sticky_nodes() {
        let profiles: Vec<Vec<f64>> = (0..10)
            .map(|d| vec![if d % 2 == 0 { 10.0 } else { 20.0 }; 24])
            .collect();
        let m = train_markov(&days_of(&profiles), 2, 24, TrainMode::RawPrice).unwrap();
        // Hand count: 5 days at each level, every within-day transition stays
        // put, so each row is (5 + 1, 0 + 1) / 7 after smoothing.
        for t in 0..23 {
            assert_eq!(m.nodes(t), &[10.0, 20.0]);
            let tr = m.transitions(t);
            assert!((tr[0][0] - 6.0 / 7.0).abs() < 1e-12);
            assert!((tr[0][1] - 1.0 / 7.0).abs() < 1e-12);
            assert!((tr[1][1] - 6.0 / 7.0).abs() < 1e-12);
        }
        // Day boundary flips the level: 5 transitions 10->20, 4 transitions 20->10.
        let wrap = m.transitions(23);
        assert!((wrap[0][1] - 6.0 / 7.0).abs() < 1e-12);
        assert!((wrap[1][0] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ragged_day_is_named() {
        let a = PriceSeries::from_values(60, vec![1.0; 24]).unwrap();
        let b = PriceSeries::new(a.timestamp(24), 60, vec![1.0; 23], None).unwrap();
        let err = train_markov(&[a, b], 2, 24, TrainMode::RawPrice).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("day 1"), "{msg}");
        assert!(msg.contains("23 samples"), "{msg}");
    }

    #[test]
    fn dap_bias_requires_dap_column() {
        let a = PriceSeries::from_values(60, vec![1.0; 24]).unwrap();
        assert!(matches!(
            train_markov(&[a], 2, 24, TrainMode::DapBias),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn dap_bias_round_trip_offsets_nodes_by_dap() {
        let dap: Vec<f64> = (0..24).map(|t| 20.0 + t as f64).collect();
        let mut days = Vec::new();
        for d in 0..6 {
            let rtp: Vec<f64> = dap.iter().map(|a| a + (d as f64 - 2.5)).collect();
            let start = default_epoch() + TimeDelta::days(d);
            days.push(PriceSeries::new(start, 60, rtp, Some(dap.clone())).unwrap());
        }
        let m = train_markov(&days, 3, 24, TrainMode::DapBias).unwrap();
        let raw = m.with_offsets(&dap).unwrap();
        for (t, d) in dap.iter().enumerate() {
            for (a, b) in raw.nodes(t).iter().zip(m.nodes(t)) {
                assert_eq!(*a, b + d);
            }
        }
        let lat = m.lattice(0, 24, Some(&dap)).unwrap();
        assert_eq!(lat.nodes[5], raw.nodes(5));
        assert!(m.lattice(0, 4, None).is_err());
    }

    #[test]
    fn nearest_node_cases() {
        let nodes = [10.0, 20.0, 30.0];
        assert_eq!(nearest_node(&nodes, 1000.0), 2);
        assert_eq!(nearest_node(&nodes, -5.0), 0);
        assert_eq!(nearest_node(&nodes, 14.9), 0);
        assert_eq!(nearest_node(&nodes, 15.1), 1);
        // Midpoint goes to the cheaper node.
        assert_eq!(nearest_node(&nodes, 15.0), 0);
        assert_eq!(nearest_node(&nodes, 25.0), 1);
        assert_eq!(nearest_node(&nodes, 20.0), 1);
    }

    #[test]
    fn node_index_exact_hit_and_errors() {
        let nodes: Vec<f64> = (0..12).map(|i| i as f64 * 7.5).collect();
        let m = PriceMarkov::from_parts(
            TrainMode::RawPrice,
            60,
            vec![nodes.clone()],
            vec![vec![vec![1.0 / 12.0; 12]; 12]],
        )
        .unwrap();
        assert_eq!(m.node_index(0, nodes[4]).unwrap(), 4);
        assert!(m.node_index(0, f64::NAN).is_err());
        assert!(m.node_index(1, 3.0).is_err());
    }

    #[test]
    fn single_node_and_absorbing_paths() {
        let single = PriceMarkov::from_parts(TrainMode::RawPrice, 60, vec![vec![42.0]; 4], vec![vec![vec![1.0]]; 4])
            .unwrap();
        let s = sample_path(&single, 9, 1, 10, None);
        assert!(s.rtp().iter().all(|&v| v == 42.0));

        let ident = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let two = PriceMarkov::from_parts(
            TrainMode::RawPrice,
            60,
            vec![vec![5.0, 50.0]; 3],
            vec![ident; 3],
        )
        .unwrap();
        let s = sample_path(&two, 1, 0, 9, Some(0));
        assert!(s.rtp().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = PriceMarkov::from_parts(
            TrainMode::RawPrice,
            60,
            vec![vec![1.0, 2.0, 3.0]; 2],
            vec![vec![vec![0.2, 0.3, 0.5]; 3]; 2],
        )
        .unwrap();
        assert_eq!(sample_path(&m, 5, 0, 50, None), sample_path(&m, 5, 0, 50, None));
        assert_ne!(sample_path(&m, 5, 0, 50, None), sample_path(&m, 6, 0, 50, None));
    }

    #[test]
    fn save_load_round_trip() {
        let days = days_of(&[
            (0..24).map(|t| t as f64).collect(),
            (0..24).map(|t| 2.0 * t as f64).collect(),
        ]);
        let m = train_markov(&days, 2, 24, TrainMode::RawPrice).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(PriceMarkov::load(&path).unwrap(), m);
    }

    #[test]
    fn from_points_rejects_gaps() {
        let t0 = default_epoch();
        let pts = vec![
            (t0, 1.0, None),
            (t0 + TimeDelta::hours(1), 2.0, None),
            (t0 + TimeDelta::hours(3), 3.0, None),
        ];
        let err = PriceSeries::from_points(60, &pts).unwrap_err().to_string();
        assert!(err.contains("samples 1"), "{err}");
    }
}

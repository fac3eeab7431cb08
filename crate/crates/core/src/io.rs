//! CSV loaders for price histories and charging sessions.
//!
//! Prices: `timestamp,zone,rtp[,dap]`. Sessions:
//! `id,arrival,departure,start_soc,target_soc[,energy_kwh]`, where arrival
//! and departure are step indices or timestamps, and the SoC columns may be
//! left empty.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{ChargingSession, DEFAULT_START_SOC};
use crate::price::{default_epoch, PriceSeries};

/// Sessions with a requested energy at or below this are dropped, kWh.
pub const MIN_SESSION_ENERGY_KWH: f64 = 5.0;

const TIMESTAMP_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_local()))
        .ok_or_else(|| Error::Data(format!("unrecognized timestamp {s:?}")))
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(f))
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::Data(format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("{what} {field:?} is not finite")));
    }
    Ok(v)
}

/// Loads one zone's prices at `step_minutes`. Finer source data is averaged
/// into each step; buckets at either end that the source only partly covers
/// are dropped. `zone` may be omitted when the file holds a single zone.
pub fn load_prices(path: &Path, zone: Option<&str>, step_minutes: u32) -> Result<PriceSeries> {
    if step_minutes == 0 || 1440 % step_minutes != 0 {
        return Err(Error::Config(format!("step of {step_minutes} min does not divide a day")));
    }
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers()?.clone();
    let need = |n: &str| {
        column(&headers, n).ok_or_else(|| Error::Data(format!("{}: missing column {n:?}", path.display())))
    };
    let (ts_col, rtp_col) = (need("timestamp")?, need("rtp")?);
    let zone_col = column(&headers, "zone");
    let dap_col = column(&headers, "dap");

    let mut zones = BTreeSet::new();
    let mut rows: Vec<(String, NaiveDateTime, f64, Option<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let z = zone_col.map(|c| field(c).to_string()).unwrap_or_default();
        zones.insert(z.clone());
        let ts = parse_timestamp(field(ts_col)).map_err(|e| Error::Data(format!("{}:{line}: {e}", path.display())))?;
        let rtp = parse_f64(field(rtp_col), "rtp").map_err(|e| Error::Data(format!("{}:{line}: {e}", path.display())))?;
        let dap = match dap_col.map(field) {
            Some(s) if !s.is_empty() => {
                Some(parse_f64(s, "dap").map_err(|e| Error::Data(format!("{}:{line}: {e}", path.display())))?)
            }
            _ => None,
        };
        rows.push((z, ts, rtp, dap));
    }
    let listed = || zones.iter().cloned().collect::<Vec<_>>().join(", ");
    let chosen = match zone {
        Some(z) => {
            if !zones.iter().any(|x| x.eq_ignore_ascii_case(z)) {
                return Err(Error::Data(format!(
                    "{}: no rows for zone {z:?}; available zones: {}",
                    path.display(),
                    listed()
                )));
            }
            z.to_string()
        }
        None if zones.len() == 1 => zones.iter().next().cloned().unwrap_or_default(),
        None if zones.is_empty() => return Err(Error::Data(format!("{}: no price rows", path.display()))),
        None => {
            return Err(Error::Config(format!(
                "{} holds several zones; pick one of: {}",
                path.display(),
                listed()
            )))
        }
    };
    let mut points: Vec<(NaiveDateTime, f64, Option<f64>)> = rows
        .into_iter()
        .filter(|r| r.0.eq_ignore_ascii_case(&chosen))
        .map(|r| (r.1, r.2, r.3))
        .collect();
    points.sort_by_key(|p| p.0);
    if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("{}: duplicate timestamp {}", path.display(), w[0].0)));
    }
    let source_step = points
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .min()
        .unwrap_or(TimeDelta::minutes(i64::from(step_minutes)));
    let target_step = TimeDelta::minutes(i64::from(step_minutes));
    if source_step > target_step {
        return Err(Error::Config(format!(
            "{}: source step {} min is coarser than the requested {step_minutes} min",
            path.display(),
            source_step.num_minutes()
        )));
    }
    if source_step.num_seconds() <= 0 || target_step.num_seconds() % source_step.num_seconds() != 0 {
        return Err(Error::Config(format!(
            "{}: source step {} s does not divide {step_minutes} min",
            path.display(),
            source_step.num_seconds()
        )));
    }
    let mut gaps = Vec::new();
    for w in points.windows(2) {
        let mut t = w[0].0 + source_step;
        while t < w[1].0 {
            gaps.push(t);
            t += source_step;
        }
    }
    if !gaps.is_empty() {
        let shown: Vec<String> = gaps.iter().take(10).map(|t| t.to_string()).collect();
        return Err(Error::Data(format!(
            "{}: {} missing samples in zone {chosen}: {}{}",
            path.display(),
            gaps.len(),
            shown.join(", "),
            if gaps.len() > 10 { ", ..." } else { "" }
        )));
    }

    // Mean per bucket, buckets aligned to midnight.
    let per_bucket = (target_step.num_seconds() / source_step.num_seconds()) as usize;
    let mut buckets: BTreeMap<NaiveDateTime, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    for (ts, rtp, dap) in points {
        let secs = i64::from(ts.num_seconds_from_midnight());
        let start = ts - TimeDelta::seconds(secs % target_step.num_seconds());
        buckets.entry(start).or_default().push((rtp, dap));
    }
    let n_buckets = buckets.len();
    let agg: Vec<(NaiveDateTime, f64, Option<f64>)> = buckets
        .into_iter()
        .enumerate()
        .filter_map(|(k, (start, vals))| {
            if vals.len() < per_bucket {
                log::warn!(
                    "dropping partial {} price step at {start} ({} of {per_bucket} samples)",
                    if k == 0 { "leading" } else { "trailing" },
                    vals.len()
                );
                debug_assert!(k == 0 || k + 1 == n_buckets);
                return None;
            }
            let n = vals.len() as f64;
            let rtp = vals.iter().map(|v| v.0).sum::<f64>() / n;
            let dap = vals
                .iter()
                .map(|v| v.1)
                .collect::<Option<Vec<f64>>>()
                .map(|d| d.iter().sum::<f64>() / n);
            Some((start, rtp, dap))
        })
        .collect();
    PriceSeries::from_points(step_minutes, &agg)
}

/// Writes a series as `timestamp,zone,rtp,dap`.
pub fn write_prices(series: &PriceSeries, zone: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "zone", "rtp", "dap"])?;
    for i in 0..series.len() {
        let dap = series.dap().map(|d| d[i].to_string()).unwrap_or_default();
        w.write_record([
            series.timestamp(i).format("%Y-%m-%d %H:%M:%S").to_string(),
            zone.to_string(),
            series.rtp()[i].to_string(),
            dap,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionLoadConfig {
    pub capacity_kwh: f64,
    pub default_start_soc: f64,
    /// Requests at or below this are filtered out, kWh.
    pub min_energy_kwh: f64,
    /// Step 0 and step length for timestamp columns.
    pub origin: NaiveDateTime,
    pub step_minutes: u32,
}

impl Default for SessionLoadConfig {
    fn default() -> Self {
        SessionLoadConfig {
            capacity_kwh: 100.0,
            default_start_soc: DEFAULT_START_SOC,
            min_energy_kwh: MIN_SESSION_ENERGY_KWH,
            origin: default_epoch(),
            step_minutes: 60,
        }
    }
}

impl SessionLoadConfig {
    /// Timestamps resolved against the start and step of `prices`.
    pub fn aligned_to(prices: &PriceSeries) -> Self {
        SessionLoadConfig {
            origin: prices.start(),
            step_minutes: prices.step_minutes(),
            ..Default::default()
        }
    }
}

/// A row that was not used, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub line: usize,
    pub reason: String,
}

/// Loader totals: `rows_in = rows_used + rows_filtered + rows_rejected`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionLoadStats {
    pub rows_in: usize,
    pub rows_used: usize,
    pub rows_filtered: usize,
    pub rows_rejected: usize,
    pub rejected: Vec<RowDiagnostic>,
}

enum RowOutcome {
    Used(ChargingSession),
    Filtered,
}

/// Step index: a plain integer, or a timestamp. Arrivals round up to the
/// first full step, departures round down.
fn parse_step(field: &str, cfg: &SessionLoadConfig, round_up: bool) -> std::result::Result<usize, String> {
    if let Ok(k) = field.parse::<usize>() {
        return Ok(k);
    }
    let ts = parse_timestamp(field).map_err(|e| e.to_string())?;
    let secs = (ts - cfg.origin).num_seconds();
    if secs < 0 {
        return Err(format!("{ts} is before the series start {}", cfg.origin));
    }
    let step = i64::from(cfg.step_minutes) * 60;
    let k = if round_up { (secs + step - 1) / step } else { secs / step };
    Ok(k as usize)
}

fn parse_opt(field: Option<&str>, what: &str) -> std::result::Result<Option<f64>, String> {
    match field {
        Some(s) if !s.is_empty() => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(format!("{what} {s:?} is not a number")),
        },
        _ => Ok(None),
    }
}

/// Loads sessions, dropping small energy requests and rejecting rows that
/// cannot form a valid session. Rejections are logged and counted, never
/// fatal; a missing file or header is.
pub fn load_sessions(path: &Path, cfg: &SessionLoadConfig) -> Result<(Vec<ChargingSession>, SessionLoadStats)> {
    if !(cfg.capacity_kwh > 0.0) || cfg.step_minutes == 0 {
        return Err(Error::Config("session loading needs a positive capacity and step".into()));
    }
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(["id", "arrival", "departure"]) {
        *slot = column(&headers, name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))?;
    }
    let [id_col, arr_col, dep_col] = cols;
    let start_col = column(&headers, "start_soc");
    let target_col = column(&headers, "target_soc");
    let energy_col = column(&headers, "energy_kwh");
    if target_col.is_none() && energy_col.is_none() {
        return Err(Error::Data(format!(
            "{}: need a target_soc or an energy_kwh column",
            path.display()
        )));
    }

    let mut stats = SessionLoadStats::default();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        stats.rows_in += 1;
        let row = rec.map_err(|e| e.to_string()).and_then(|rec| {
            let get = |c: Option<usize>| c.and_then(|c| rec.get(c));
            let id = get(Some(id_col)).unwrap_or("").to_string();
            if id.is_empty() {
                return Err("empty id".to_string());
            }
            let arrival = parse_step(get(Some(arr_col)).unwrap_or(""), cfg, true)?;
            let departure = parse_step(get(Some(dep_col)).unwrap_or(""), cfg, false)?;
            let energy = parse_opt(get(energy_col), "energy_kwh")?;
            if energy.is_some_and(|e| e <= cfg.min_energy_kwh) {
                return Ok(RowOutcome::Filtered);
            }
            let start = parse_opt(get(start_col), "start_soc")?.unwrap_or(cfg.default_start_soc);
            let session = match (parse_opt(get(target_col), "target_soc")?, energy) {
                (Some(f), e) => ChargingSession::new(id, arrival, departure, start, f).map(|mut s| {
                    s.energy_requested_kwh = e;
                    s
                }),
                (None, Some(e)) => ChargingSession::from_energy(id, arrival, departure, start, e, cfg.capacity_kwh, 1.0),
                (None, None) => return Err("neither target_soc nor energy_kwh given".to_string()),
            };
            session.map(RowOutcome::Used).map_err(|e| e.to_string())
        });
        match row {
            Ok(RowOutcome::Used(s)) => {
                stats.rows_used += 1;
                out.push(s);
            }
            Ok(RowOutcome::Filtered) => stats.rows_filtered += 1,
            Err(reason) => {
                log::warn!("{}:{line}: row rejected: {reason}", path.display());
                stats.rows_rejected += 1;
                stats.rejected.push(RowDiagnostic { line, reason });
            }
        }
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = out.iter().find(|s| !seen.insert(s.id.clone())) {
        return Err(Error::Data(format!("{}: duplicate session id {:?}", path.display(), dup.id)));
    }
    out.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.id.cmp(&b.id)));
    Ok((out, stats))
}

/// Writes sessions with step-index arrival and departure.
pub fn write_sessions(sessions: &[ChargingSession], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "arrival", "departure", "start_soc", "target_soc", "energy_kwh"])?;
    for s in sessions {
        w.write_record([
            s.id.clone(),
            s.arrival.to_string(),
            s.departure.to_string(),
            s.start_soc.to_string(),
            s.target_soc.to_string(),
            s.energy_requested_kwh.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

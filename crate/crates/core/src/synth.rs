//! Synthetic prices and sessions for tests, demos and the desk-scale runs.

use chrono::{Datelike, NaiveDateTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::ChargingSession;
use crate::price::{default_epoch, PriceSeries};

/// Hourly arrival weights shaped like a workplace garage: a sharp morning
/// peak and a thin tail through the afternoon.
pub const WORKPLACE_ARRIVALS: [f64; 24] = [
    0.2, 0.1, 0.1, 0.1, 0.2, 0.5, 2.0, 6.0, 10.0, 8.0, 5.0, 3.0, 2.5, 2.0, 1.5, 1.0, 0.8, 0.6, 0.5,
    0.4, 0.3, 0.3, 0.2, 0.2,
];

/// Typical hourly real-time price shape, $/MWh: low overnight, a morning
/// shoulder and an evening peak.
pub const DAILY_PROFILE: [f64; 24] = [
    22.0, 20.0, 19.0, 18.5, 19.0, 21.0, 26.0, 33.0, 38.0, 37.0, 35.0, 34.0, 33.0, 33.0, 34.0,
    37.0, 43.0, 52.0, 56.0, 50.0, 42.0, 34.0, 28.0, 24.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceSynthConfig {
    pub days: usize,
    /// Sub-hourly steps repeat the hourly profile value.
    pub step_minutes: u32,
    /// Log-sd of the day-level multiplier.
    pub day_level_sd: f64,
    /// AR(1) noise on the real-time price.
    pub noise_sd: f64,
    pub noise_ar: f64,
    /// Chance per step of a price spike and its mean size.
    pub spike_prob: f64,
    pub spike_mean: f64,
    /// Noise of the day-ahead price around the day's expected profile.
    pub dap_noise_sd: f64,
    pub start: NaiveDateTime,
}

impl Default for PriceSynthConfig {
    fn default() -> Self {
        PriceSynthConfig {
            days: 30,
            step_minutes: 60,
            day_level_sd: 0.15,
            noise_sd: 5.0,
            noise_ar: 0.6,
            spike_prob: 0.01,
            spike_mean: 60.0,
            dap_noise_sd: 2.0,
            start: default_epoch(),
        }
    }
}

/// Real-time and day-ahead prices following [`DAILY_PROFILE`].
pub fn synth_prices(cfg: &PriceSynthConfig, seed: u64) -> Result<PriceSeries> {
    if cfg.step_minutes == 0 || 1440 % cfg.step_minutes != 0 {
        return Err(Error::Config(format!("step of {} min does not divide a day", cfg.step_minutes)));
    }
    let per_day = (1440 / cfg.step_minutes) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let level = LogNormal::new(0.0, cfg.day_level_sd).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let dap_noise = Normal::new(0.0, cfg.dap_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut rtp = Vec::with_capacity(cfg.days * per_day);
    let mut dap = Vec::with_capacity(cfg.days * per_day);
    let mut ar = 0.0;
    for _ in 0..cfg.days {
        let lv = level.sample(&mut rng);
        for k in 0..per_day {
            let hour = k * cfg.step_minutes as usize / 60;
            let expected = DAILY_PROFILE[hour] * lv;
            ar = cfg.noise_ar * ar + noise.sample(&mut rng);
            let spike = if rng.random_bool(cfg.spike_prob) {
                cfg.spike_mean * rng.random_range(0.5..1.5)
            } else {
                0.0
            };
            rtp.push(expected + ar + spike);
            dap.push(expected + dap_noise.sample(&mut rng));
        }
    }
    PriceSeries::new(cfg.start, cfg.step_minutes, rtp, Some(dap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSynthConfig {
    pub n_sessions: usize,
    /// Relative arrival frequency per hour of day.
    pub arrival_weights: Vec<f64>,
    pub stay_mean_hours: f64,
    pub stay_sd_hours: f64,
    pub stay_min_hours: f64,
    pub stay_max_hours: f64,
    /// Energy requests are uniform on this range, kWh.
    pub energy_kwh: (f64, f64),
    pub start_soc: f64,
    pub capacity_kwh: f64,
    pub weekdays_only: bool,
}

impl Default for SessionSynthConfig {
    fn default() -> Self {
        SessionSynthConfig {
            n_sessions: 75,
            arrival_weights: WORKPLACE_ARRIVALS.to_vec(),
            stay_mean_hours: 9.0,
            stay_sd_hours: 2.0,
            stay_min_hours: 2.0,
            stay_max_hours: 14.0,
            energy_kwh: (10.0, 85.0),
            start_soc: crate::fleet::DEFAULT_START_SOC,
            capacity_kwh: 100.0,
            weekdays_only: true,
        }
    }
}

/// Sessions over the span of `prices`, sorted by arrival. Every session
/// departs before the series ends.
pub fn synth_sessions(cfg: &SessionSynthConfig, prices: &PriceSeries, seed: u64) -> Result<Vec<ChargingSession>> {
    let step_h = prices.step_hours();
    let per_day = (24.0 / step_h).round() as usize;
    let n_days = prices.len() / per_day.max(1);
    let phase = prices.phase();
    let days: Vec<usize> = (0..n_days)
        .filter(|&d| {
            let date = prices.timestamp(d * per_day).date();
            !cfg.weekdays_only || !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
        })
        .collect();
    if days.is_empty() || phase != 0 {
        return Err(Error::Input("session synthesis needs whole days starting at midnight".into()));
    }
    if cfg.arrival_weights.len() != 24 {
        return Err(Error::Config("arrival weights need one entry per hour".into()));
    }
    let hours = WeightedIndex::new(&cfg.arrival_weights).map_err(|e| Error::Config(e.to_string()))?;
    let stay = Normal::new(cfg.stay_mean_hours, cfg.stay_sd_hours).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.n_sessions);
    let mut attempts = 0;
    while out.len() < cfg.n_sessions {
        attempts += 1;
        if attempts > 100 * cfg.n_sessions + 1000 {
            return Err(Error::Input("could not place sessions inside the price span".into()));
        }
        let day = days[rng.random_range(0..days.len())];
        let hour = hours.sample(&mut rng) as f64 + rng.random_range(0.0..1.0);
        let arrival = day * per_day + (hour / step_h).floor() as usize;
        let h = stay.sample(&mut rng).clamp(cfg.stay_min_hours, cfg.stay_max_hours);
        let departure = arrival + ((h / step_h).round() as usize).max(1);
        if departure > prices.len() {
            continue;
        }
        let energy = rng.random_range(cfg.energy_kwh.0..=cfg.energy_kwh.1);
        out.push(ChargingSession::from_energy(
            format!("s{:04}", out.len()),
            arrival,
            departure,
            cfg.start_soc,
            energy,
            cfg.capacity_kwh,
            1.0,
        )?);
    }
    out.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.id.cmp(&b.id)));
    Ok(out)
}

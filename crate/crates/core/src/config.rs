//! Run configuration (TOML), its hash, the seed stream, the Markov model
//! cache and input preparation shared by the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::battery::{BatteryCurves, CurveResolutionPair};
use crate::error::{Error, Result};
use crate::fleet::{ChargingSession, FacilityConfig, LinearModel, Scenario, SimOptions};
use crate::io::{load_prices, load_sessions, SessionLoadConfig, SessionLoadStats};
use crate::metrics::MileageConfig;
use crate::price::{train_markov, PriceMarkov, PriceSeries, TrainMode};
use crate::synth::{synth_prices, synth_sessions, PriceSynthConfig, SessionSynthConfig};
use crate::valuation::{PartialRateRule, ValuationConfig, DEFAULT_PENALTY, DEFAULT_SEGMENTS};

/// Station hardware. The step length comes from the run's `step_minutes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FacilitySection {
    pub n_chargers: usize,
    pub charger_kw: f64,
    pub limit_kw: f64,
}

impl Default for FacilitySection {
    fn default() -> Self {
        let p = FacilityConfig::paper_preset();
        FacilitySection {
            n_chargers: p.n_chargers,
            charger_kw: p.charger_kw,
            limit_kw: p.limit_kw,
        }
    }
}

/// Synthetic inputs used when no price or session file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Days of price history the Markov model is trained on.
    pub history_days: usize,
    pub prices: PriceSynthConfig,
    pub sessions: SessionSynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            history_days: 120,
            prices: PriceSynthConfig::default(),
            sessions: SessionSynthConfig::default(),
        }
    }
}

/// Everything one run depends on. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub step_minutes: u32,
    /// Steps per Markov period (one day).
    pub horizon: usize,
    pub zone: Option<String>,
    /// Prices to simulate over. Synthetic when absent.
    pub prices: Option<PathBuf>,
    /// Prices the Markov model is trained on. Defaults to `prices`.
    pub history: Option<PathBuf>,
    pub sessions: Option<PathBuf>,
    /// `soc,b_kw,p_kw,eta,c_per_mwh` tables; the built-in nonlinear model
    /// at 101 and 10 samples when absent.
    pub env_curves: Option<PathBuf>,
    pub ctrl_curves: Option<PathBuf>,
    pub capacity_kwh: f64,
    pub scenario: Scenario,
    /// Scenarios run by `compare`, besides the UC baseline.
    pub compare: Vec<Scenario>,
    pub penalty: f64,
    pub n_nodes: usize,
    pub segments: usize,
    pub markov_mode: TrainMode,
    pub partial_rate: PartialRateRule,
    pub allow_negative_prices: bool,
    pub strict_llf: bool,
    pub seed: u64,
    /// Trained models are cached here when set.
    pub cache_dir: Option<PathBuf>,
    pub facility: FacilitySection,
    pub linear: LinearModel,
    pub mileage: MileageConfig,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            step_minutes: 60,
            horizon: 24,
            zone: None,
            prices: None,
            history: None,
            sessions: None,
            env_curves: None,
            ctrl_curves: None,
            capacity_kwh: 100.0,
            scenario: Scenario::NlV2g,
            compare: vec![Scenario::NlV1g, Scenario::NlV2g],
            penalty: DEFAULT_PENALTY,
            n_nodes: 12,
            segments: DEFAULT_SEGMENTS,
            markov_mode: TrainMode::RawPrice,
            partial_rate: PartialRateRule::default(),
            allow_negative_prices: true,
            strict_llf: false,
            seed: 42,
            cache_dir: None,
            facility: FacilitySection::default(),
            linear: LinearModel::default(),
            mileage: MileageConfig::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.prices,
            &mut self.history,
            &mut self.sessions,
            &mut self.env_curves,
            &mut self.ctrl_curves,
            &mut self.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_minutes == 0 || 1440 % self.step_minutes != 0 {
            return Err(Error::Config(format!("step of {} min does not divide a day", self.step_minutes)));
        }
        if self.horizon == 0 || self.n_nodes == 0 || self.segments == 0 {
            return Err(Error::Config("horizon, n_nodes and segments must be positive".into()));
        }
        if !(self.capacity_kwh > 0.0) {
            return Err(Error::Config("capacity_kwh must be positive".into()));
        }
        self.facility().validate()?;
        self.valuation().validate()
    }

    pub fn step_hours(&self) -> f64 {
        f64::from(self.step_minutes) / 60.0
    }

    pub fn facility(&self) -> FacilityConfig {
        FacilityConfig {
            n_chargers: self.facility.n_chargers,
            charger_kw: self.facility.charger_kw,
            limit_kw: self.facility.limit_kw,
            step_hours: self.step_hours(),
        }
    }

    pub fn valuation(&self) -> ValuationConfig {
        ValuationConfig {
            segments: self.segments,
            penalty: self.penalty,
            step_hours: self.step_hours(),
            partial_rate: self.partial_rate,
            allow_negative_prices: self.allow_negative_prices,
            ..Default::default()
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            valuation: self.valuation(),
            linear: self.linear,
            strict_llf: self.strict_llf,
            audit: true,
        }
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn curves(&self) -> Result<CurveResolutionPair> {
        let load = |p: &Option<PathBuf>, n: usize| match p {
            Some(path) => BatteryCurves::load_csv(path, self.capacity_kwh, None),
            None => Ok(scaled_default(n, self.capacity_kwh)),
        };
        CurveResolutionPair::new(
            load(&self.env_curves, CurveResolutionPair::ENV_SAMPLES)?,
            load(&self.ctrl_curves, CurveResolutionPair::CTRL_SAMPLES)?,
        )
    }

    pub fn seeds(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }
}

fn scaled_default(n: usize, capacity_kwh: f64) -> BatteryCurves {
    let base = BatteryCurves::nonlinear_default(n);
    if (base.capacity_kwh() - capacity_kwh).abs() < 1e-12 {
        return base;
    }
    BatteryCurves::new(capacity_kwh, base.soc_min(), base.soc_max(), base.samples().to_vec())
        .expect("default curve samples are valid")
}

/// The run's only source of randomness. Sub-seeds are drawn in a fixed
/// order so each consumer sees the same stream on every rerun.
#[derive(Debug, Clone)]
pub struct SeedStream {
    rng: ChaCha8Rng,
}

/// Named consumers of the seed stream, in draw order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub history: u64,
    pub prices: u64,
    pub sessions: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }

    pub fn run_seeds(mut self) -> RunSeeds {
        RunSeeds {
            history: self.next_seed(),
            prices: self.next_seed(),
            sessions: self.next_seed(),
        }
    }
}

/// Hex SHA-256 of a series' step, timestamps and values.
pub fn series_hash(series: &PriceSeries) -> String {
    let mut h = Sha256::new();
    h.update(series.step_minutes().to_le_bytes());
    h.update(series.start().and_utc().timestamp().to_le_bytes());
    for v in series.rtp() {
        h.update(v.to_le_bytes());
    }
    if let Some(d) = series.dap() {
        h.update(b"dap");
        for v in d {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Whole days of `series`, starting at the first midnight.
pub fn whole_days(series: &PriceSeries, horizon: usize) -> Result<Vec<PriceSeries>> {
    let phase = series.phase() % horizon;
    let skip = (horizon - phase) % horizon;
    if series.len() < skip + horizon {
        return Err(Error::Data(format!(
            "price history of {} steps holds no whole {horizon}-step day",
            series.len()
        )));
    }
    let n = (series.len() - skip) / horizon * horizon;
    if skip > 0 || skip + n < series.len() {
        log::info!("training on {} whole days; {} edge steps unused", n / horizon, series.len() - n);
    }
    series.slice(skip, n).split_days(horizon)
}

/// Cache file for a model, keyed by history hash, node count, horizon and mode.
pub fn markov_cache_path(dir: &Path, history: &PriceSeries, n_nodes: usize, horizon: usize, mode: TrainMode) -> PathBuf {
    let mut h = Sha256::new();
    h.update(series_hash(history).as_bytes());
    h.update(format!("|{n_nodes}|{horizon}|{mode:?}").as_bytes());
    let key = hex::encode(h.finalize());
    dir.join(format!("markov-{}.json", &key[..16]))
}

/// Trains a model on `history`, or loads it from the cache when an entry
/// with the same key exists. Returns whether the cache was hit.
pub fn load_or_train_markov(
    history: &PriceSeries,
    n_nodes: usize,
    horizon: usize,
    mode: TrainMode,
    cache_dir: Option<&Path>,
) -> Result<(PriceMarkov, bool)> {
    let cache = cache_dir.map(|d| markov_cache_path(d, history, n_nodes, horizon, mode));
    if let Some(path) = &cache {
        if path.exists() {
            match PriceMarkov::load(path) {
                Ok(m) => return Ok((m, true)),
                Err(e) => log::warn!("ignoring unreadable cached model {}: {e}", path.display()),
            }
        }
    }
    let model = train_markov(&whole_days(history, horizon)?, n_nodes, horizon, mode)?;
    if let Some(path) = &cache {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        model.save(path)?;
    }
    Ok((model, false))
}

/// Inputs of a simulation after loading or synthesis.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub prices: PriceSeries,
    pub history: PriceSeries,
    pub sessions: Vec<ChargingSession>,
    pub session_stats: Option<SessionLoadStats>,
    pub curves: CurveResolutionPair,
    pub seeds: RunSeeds,
}

pub fn load_price_inputs(cfg: &RunConfig, seeds: &RunSeeds) -> Result<(PriceSeries, PriceSeries)> {
    let synth = PriceSynthConfig {
        step_minutes: cfg.step_minutes,
        ..cfg.synth.prices.clone()
    };
    let prices = match &cfg.prices {
        Some(p) => load_prices(p, cfg.zone.as_deref(), cfg.step_minutes)?,
        None => synth_prices(&synth, seeds.prices)?,
    };
    let history = match (&cfg.history, &cfg.prices) {
        (Some(h), _) => load_prices(h, cfg.zone.as_deref(), cfg.step_minutes)?,
        (None, Some(_)) => {
            log::warn!("no separate price history; training on the simulated prices");
            prices.clone()
        }
        (None, None) => synth_prices(
            &PriceSynthConfig {
                days: cfg.synth.history_days,
                ..synth
            },
            seeds.history,
        )?,
    };
    Ok((prices, history))
}

pub fn prepare_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let seeds = cfg.seeds().run_seeds();
    let (prices, history) = load_price_inputs(cfg, &seeds)?;
    let (sessions, session_stats) = match &cfg.sessions {
        Some(p) => {
            let lc = SessionLoadConfig {
                capacity_kwh: cfg.capacity_kwh,
                ..SessionLoadConfig::aligned_to(&prices)
            };
            let (s, st) = load_sessions(p, &lc)?;
            (s, Some(st))
        }
        None => {
            let sc = SessionSynthConfig {
                capacity_kwh: cfg.capacity_kwh,
                ..cfg.synth.sessions.clone()
            };
            (synth_sessions(&sc, &prices, seeds.sessions)?, None)
        }
    };
    let beyond = sessions.iter().filter(|s| s.departure > prices.len()).count();
    if beyond > 0 {
        return Err(Error::Data(format!(
            "{beyond} sessions depart after the price series ends at step {}",
            prices.len()
        )));
    }
    Ok(Inputs {
        prices,
        history,
        sessions,
        session_stats,
        curves: cfg.curves()?,
        seeds,
    })
}

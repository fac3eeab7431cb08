//! SoC-dependent battery and charger behavior.
//!
//! A [`BatteryCurves`] table samples the charge rating `B(e)`, discharge
//! rating `P(e)`, one-way efficiency `η(e)` and discharge penalty `c(e)`
//! against SoC; values between samples are piecewise-linear. SoC is a
//! fraction of capacity, energies are kWh, ratings kW, penalties $/MWh.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a curve table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub soc: f64,
    pub b_kw: f64,
    pub p_kw: f64,
    pub eta: f64,
    pub c_per_mwh: f64,
}

/// Curve values at one SoC, or their slopes with respect to SoC fraction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CurveValues {
    pub b_kw: f64,
    pub p_kw: f64,
    pub eta: f64,
    pub c_per_mwh: f64,
}

impl CurveValues {
    fn lerp(a: &CurvePoint, b: &CurvePoint, w: f64) -> Self {
        CurveValues {
            b_kw: a.b_kw + w * (b.b_kw - a.b_kw),
            p_kw: a.p_kw + w * (b.p_kw - a.p_kw),
            eta: a.eta + w * (b.eta - a.eta),
            c_per_mwh: a.c_per_mwh + w * (b.c_per_mwh - a.c_per_mwh),
        }
    }

    fn slope(a: &CurvePoint, b: &CurvePoint) -> Self {
        let h = b.soc - a.soc;
        CurveValues {
            b_kw: (b.b_kw - a.b_kw) / h,
            p_kw: (b.p_kw - a.p_kw) / h,
            eta: (b.eta - a.eta) / h,
            c_per_mwh: (b.c_per_mwh - a.c_per_mwh) / h,
        }
    }

    fn mean(a: Self, b: Self) -> Self {
        CurveValues {
            b_kw: 0.5 * (a.b_kw + b.b_kw),
            p_kw: 0.5 * (a.p_kw + b.p_kw),
            eta: 0.5 * (a.eta + b.eta),
            c_per_mwh: 0.5 * (a.c_per_mwh + b.c_per_mwh),
        }
    }
}

impl From<&CurvePoint> for CurveValues {
    fn from(p: &CurvePoint) -> Self {
        CurveValues {
            b_kw: p.b_kw,
            p_kw: p.p_kw,
            eta: p.eta,
            c_per_mwh: p.c_per_mwh,
        }
    }
}

/// Sampled battery behavior curves for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryCurves {
    capacity_kwh: f64,
    soc_min: f64,
    soc_max: f64,
    samples: Vec<CurvePoint>,
}

/// Shape of the built-in nonlinear curves: quadratic efficiency and penalty,
/// CC-CV style trapezoids for the power ratings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultCurveShape {
    pub capacity_kwh: f64,
    pub nominal_kw: f64,
}

impl Default for DefaultCurveShape {
    fn default() -> Self {
        DefaultCurveShape {
            capacity_kwh: 100.0,
            nominal_kw: 17.2,
        }
    }
}

impl DefaultCurveShape {
    pub fn eta(&self, e: f64) -> f64 {
        0.96 - 0.04 * (2.0 * e - 1.0).powi(2)
    }

    pub fn c_per_mwh(&self, e: f64) -> f64 {
        10.0 + 20.0 * e * e
    }

    /// Ramp 0 to nominal over [0, 0.1], flat to 0.8, taper to 0 at full.
    pub fn b_kw(&self, e: f64) -> f64 {
        let r = if e < 0.1 {
            e / 0.1
        } else if e <= 0.8 {
            1.0
        } else {
            (1.0 - e) / 0.2
        };
        self.nominal_kw * r.clamp(0.0, 1.0)
    }

    /// Taper to 0 over [0, 0.2] at the empty end, flat nominal above.
    pub fn p_kw(&self, e: f64) -> f64 {
        let r = if e < 0.2 { e / 0.2 } else { 1.0 };
        self.nominal_kw * r.clamp(0.0, 1.0)
    }

    pub fn values(&self, e: f64) -> CurveValues {
        CurveValues {
            b_kw: self.b_kw(e),
            p_kw: self.p_kw(e),
            eta: self.eta(e),
            c_per_mwh: self.c_per_mwh(e),
        }
    }
}

impl BatteryCurves {
    pub fn new(capacity_kwh: f64, soc_min: f64, soc_max: f64, samples: Vec<CurvePoint>) -> Result<Self> {
        if !(capacity_kwh > 0.0 && capacity_kwh.is_finite()) {
            return Err(Error::Input(format!("battery capacity must be positive, got {capacity_kwh}")));
        }
        if !(0.0..=1.0).contains(&soc_min) || !(0.0..=1.0).contains(&soc_max) || soc_min >= soc_max {
            return Err(Error::Input(format!(
                "SoC bounds [{soc_min}, {soc_max}] must satisfy 0 <= min < max <= 1"
            )));
        }
        if samples.is_empty() {
            return Err(Error::Input("empty curve table".into()));
        }
        if samples.windows(2).any(|w| !(w[0].soc < w[1].soc)) {
            return Err(Error::Input("curve SoC samples must be strictly increasing".into()));
        }
        let (first, last) = (samples[0].soc, samples[samples.len() - 1].soc);
        if first > soc_min + 1e-12 || last < soc_max - 1e-12 {
            return Err(Error::Input(format!(
                "curve samples span [{first}, {last}] but must cover [{soc_min}, {soc_max}]"
            )));
        }
        for p in &samples {
            let ok = p.eta > 0.0
                && p.eta <= 1.0
                && p.b_kw >= 0.0
                && p.p_kw >= 0.0
                && p.c_per_mwh >= 0.0
                && p.b_kw.is_finite()
                && p.p_kw.is_finite()
                && p.c_per_mwh.is_finite();
            if !ok {
                return Err(Error::Input(format!("invalid curve sample at SoC {}", p.soc)));
            }
        }
        Ok(BatteryCurves {
            capacity_kwh,
            soc_min,
            soc_max,
            samples,
        })
    }

    /// Constant-parameter (linear) battery model.
    pub fn constant(
        capacity_kwh: f64,
        soc_min: f64,
        soc_max: f64,
        b_kw: f64,
        p_kw: f64,
        eta: f64,
        c_per_mwh: f64,
    ) -> Result<Self> {
        let at = |soc| CurvePoint {
            soc,
            b_kw,
            p_kw,
            eta,
            c_per_mwh,
        };
        Self::new(capacity_kwh, soc_min, soc_max, vec![at(soc_min), at(soc_max)])
    }

    /// Samples `f` at `n_samples` equally spaced SoC points over the bounds.
    pub fn from_fn(
        capacity_kwh: f64,
        soc_min: f64,
        soc_max: f64,
        n_samples: usize,
        f: impl Fn(f64) -> CurveValues,
    ) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::Input("need at least two curve samples".into()));
        }
        let span = soc_max - soc_min;
        let samples = (0..n_samples)
            .map(|k| {
                let soc = if k + 1 == n_samples {
                    soc_max
                } else {
                    soc_min + span * k as f64 / (n_samples - 1) as f64
                };
                let v = f(soc);
                CurvePoint {
                    soc,
                    b_kw: v.b_kw,
                    p_kw: v.p_kw,
                    eta: v.eta,
                    c_per_mwh: v.c_per_mwh,
                }
            })
            .collect();
        Self::new(capacity_kwh, soc_min, soc_max, samples)
    }

    /// Built-in nonlinear curves on [0, 1] at the given sample count.
    pub fn nonlinear_default(n_samples: usize) -> Self {
        let shape = DefaultCurveShape::default();
        Self::from_fn(shape.capacity_kwh, 0.0, 1.0, n_samples, |e| shape.values(e))
            .expect("default curves are valid")
    }

    pub fn capacity_kwh(&self) -> f64 {
        self.capacity_kwh
    }

    pub fn soc_min(&self) -> f64 {
        self.soc_min
    }

    pub fn soc_max(&self) -> f64 {
        self.soc_max
    }

    pub fn samples(&self) -> &[CurvePoint] {
        &self.samples
    }

    /// Same curves with P ≡ 0 (no grid injection).
    pub fn without_discharge(&self) -> Self {
        let mut c = self.clone();
        c.samples.iter_mut().for_each(|s| s.p_kw = 0.0);
        c
    }

    /// Index of the segment `[k, k + 1]` containing `e`.
    fn segment(&self, e: f64) -> usize {
        let n = self.samples.len();
        let pp = self.samples.partition_point(|s| s.soc <= e);
        pp.saturating_sub(1).min(n.saturating_sub(2))
    }

    fn clamp_soc(&self, e: f64) -> f64 {
        if e < self.soc_min - 1e-9 || e > self.soc_max + 1e-9 {
            log::warn!(
                "SoC {e} outside [{}, {}], clamping",
                self.soc_min,
                self.soc_max
            );
        }
        e.clamp(self.soc_min, self.soc_max)
    }

    /// Interpolated `(B, P, η, c)` at SoC `e`; exact at sample points.
    pub fn sample(&self, e: f64) -> CurveValues {
        let e = self.clamp_soc(e);
        if self.samples.len() == 1 {
            return (&self.samples[0]).into();
        }
        let k = self.segment(e);
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        if e == a.soc {
            return a.into();
        }
        if e == b.soc {
            return b.into();
        }
        CurveValues::lerp(a, b, (e - a.soc) / (b.soc - a.soc))
    }

    /// Slopes `(∂B/∂e, ∂P/∂e, ∂η/∂e, ∂c/∂e)` per unit SoC fraction: the
    /// active segment's slope, the mean of both neighbours at an interior
    /// sample point, one-sided at the ends.
    pub fn slopes(&self, e: f64) -> CurveValues {
        let e = self.clamp_soc(e);
        let n = self.samples.len();
        if n == 1 {
            return CurveValues::default();
        }
        let k = self.segment(e);
        let s = &self.samples;
        let here = CurveValues::slope(&s[k], &s[k + 1]);
        if e == s[k].soc && k > 0 {
            return CurveValues::mean(CurveValues::slope(&s[k - 1], &s[k]), here);
        }
        if e == s[k + 1].soc && k + 2 < n {
            return CurveValues::mean(here, CurveValues::slope(&s[k + 1], &s[k + 2]));
        }
        here
    }

    /// SoC after one step: `e − p/(η·E) + b·η/E`, with η at the starting SoC.
    /// Energies in kWh; no clamping.
    pub fn step_soc(&self, e: f64, p_kwh: f64, b_kwh: f64) -> f64 {
        let eta = self.sample(e).eta;
        e - p_kwh / (eta * self.capacity_kwh) + b_kwh * eta / self.capacity_kwh
    }

    /// [`step_soc`](Self::step_soc) that rejects results outside the SoC bounds.
    pub fn step_soc_strict(&self, e: f64, p_kwh: f64, b_kwh: f64) -> Result<f64> {
        if p_kwh < 0.0 || b_kwh < 0.0 {
            return Err(Error::Input(format!("negative energy p={p_kwh} b={b_kwh}")));
        }
        let next = self.step_soc(e, p_kwh, b_kwh);
        if next < self.soc_min - 1e-12 || next > self.soc_max + 1e-12 {
            return Err(Error::InfeasibleAction(format!(
                "p={p_kwh} kWh, b={b_kwh} kWh from SoC {e} reaches {next}"
            )));
        }
        Ok(next)
    }

    /// Largest grid-side charge energy for one step of `step_hours` from `e`.
    pub fn max_charge_kwh(&self, e: f64, step_hours: f64) -> f64 {
        let v = self.sample(e);
        let headroom = (self.soc_max - e) / v.eta * self.capacity_kwh;
        (v.b_kw * step_hours).min(headroom).max(0.0)
    }

    /// Largest grid-side discharge energy for one step of `step_hours` from `e`.
    pub fn max_discharge_kwh(&self, e: f64, step_hours: f64) -> f64 {
        let v = self.sample(e);
        let headroom = (e - self.soc_min) * v.eta * self.capacity_kwh;
        (v.p_kw * step_hours).min(headroom).max(0.0)
    }

    /// Limits a requested `(p, b)` to what these curves allow from `e`. At
    /// most one of the returned energies is nonzero: the larger request wins.
    pub fn truncate_action(&self, e: f64, p_kwh: f64, b_kwh: f64, step_hours: f64) -> (f64, f64) {
        let mut p = p_kwh.clamp(0.0, self.max_discharge_kwh(e, step_hours));
        let mut b = b_kwh.clamp(0.0, self.max_charge_kwh(e, step_hours));
        if p > 0.0 && b > 0.0 {
            if p_kwh > b_kwh {
                b = 0.0;
            } else {
                p = 0.0;
            }
        }
        (p, b)
    }

    /// Reads a `soc,b_kw,p_kw,eta,c_per_mwh` table. SoC bounds default to the
    /// table's first and last sample.
    pub fn load_csv(
        path: &Path,
        capacity_kwh: f64,
        soc_bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut samples = Vec::new();
        for row in rdr.deserialize::<CurvePoint>() {
            samples.push(row?);
        }
        let (lo, hi) = match soc_bounds {
            Some(b) => b,
            None => match (samples.first(), samples.last()) {
                (Some(f), Some(l)) => (f.soc, l.soc),
                _ => return Err(Error::Data(format!("{}: empty curve table", path.display()))),
            },
        };
        Self::new(capacity_kwh, lo, hi, samples)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Ground-truth curves for the environment and the controller's coarser copy.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveResolutionPair {
    pub env: BatteryCurves,
    pub ctrl: BatteryCurves,
}

impl CurveResolutionPair {
    pub const ENV_SAMPLES: usize = 101;
    pub const CTRL_SAMPLES: usize = 10;

    pub fn new(env: BatteryCurves, ctrl: BatteryCurves) -> Result<Self> {
        if (env.soc_min - ctrl.soc_min).abs() > 1e-12
            || (env.soc_max - ctrl.soc_max).abs() > 1e-12
            || (env.capacity_kwh - ctrl.capacity_kwh).abs() > 1e-12
        {
            return Err(Error::Input(
                "environment and controller curves must share capacity and SoC span".into(),
            ));
        }
        Ok(CurveResolutionPair { env, ctrl })
    }

    /// 101-sample environment, 10-sample controller, built-in shapes.
    pub fn default_nonlinear() -> Self {
        CurveResolutionPair {
            env: BatteryCurves::nonlinear_default(Self::ENV_SAMPLES),
            ctrl: BatteryCurves::nonlinear_default(Self::CTRL_SAMPLES),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_eta() -> BatteryCurves {
        BatteryCurves::new(
            100.0,
            0.0,
            1.0,
            vec![
                CurvePoint { soc: 0.0, b_kw: 10.0, p_kw: 10.0, eta: 0.90, c_per_mwh: 5.0 },
                CurvePoint { soc: 1.0, b_kw: 10.0, p_kw: 10.0, eta: 0.96, c_per_mwh: 5.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn linear_midpoint() {
        let v = two_point_eta().sample(0.5);
        assert!((v.eta - 0.93).abs() < 1e-15);
    }

    #[test]
    fn exact_at_knots() {
        let c = BatteryCurves::nonlinear_default(101);
        for s in c.samples() {
            assert_eq!(c.sample(s.soc), CurveValues::from(s));
        }
    }

    #[test]
    fn taper_slope() {
        let c = BatteryCurves::new(
            100.0,
            0.8,
            1.0,
            vec![
                CurvePoint { soc: 0.8, b_kw: 17.2, p_kw: 17.2, eta: 0.95, c_per_mwh: 0.0 },
                CurvePoint { soc: 1.0, b_kw: 0.0, p_kw: 17.2, eta: 0.95, c_per_mwh: 0.0 },
            ],
        )
        .unwrap();
        for e in [0.81, 0.9, 0.99] {
            assert!((c.slopes(e).b_kw + 86.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_curves_have_zero_slopes() {
        let c = BatteryCurves::constant(100.0, 0.0, 1.0, 17.2, 17.2, 0.95, 15.0).unwrap();
        for e in [0.0, 0.3, 1.0] {
            assert_eq!(c.slopes(e), CurveValues::default());
        }
    }

    #[test]
    fn interior_knot_slope_is_mean() {
        let c = BatteryCurves::nonlinear_default(11);
        let left = (c.sample(0.5).eta - c.sample(0.4).eta) / 0.1;
        let right = (c.sample(0.6).eta - c.sample(0.5).eta) / 0.1;
        assert!((c.slopes(0.5).eta - 0.5 * (left + right)).abs() < 1e-12);
    }

    #[test]
    fn empty_and_bad_tables_rejected() {
        assert!(BatteryCurves::new(100.0, 0.0, 1.0, vec![]).is_err());
        let p = CurvePoint { soc: 0.0, b_kw: 1.0, p_kw: 1.0, eta: 1.2, c_per_mwh: 0.0 };
        let q = CurvePoint { soc: 1.0, ..p };
        assert!(BatteryCurves::new(100.0, 0.0, 1.0, vec![p, q]).is_err());
        let short = CurvePoint { soc: 0.5, eta: 0.9, ..p };
        assert!(BatteryCurves::new(100.0, 0.0, 1.0, vec![CurvePoint { eta: 0.9, ..p }, short]).is_err());
    }

    #[test]
    fn step_soc_cases() {
        let c = BatteryCurves::constant(100.0, 0.0, 1.0, 17.2, 17.2, 0.95, 15.0).unwrap();
        assert_eq!(c.step_soc(0.4, 0.0, 0.0), 0.4);
        assert!((c.step_soc(0.4, 0.0, 1.0) - 0.4095).abs() < 1e-15);
        assert!(matches!(
            c.step_soc_strict(0.99, 0.0, 17.2),
            Err(Error::InfeasibleAction(_))
        ));
    }

    #[test]
    fn truncation_cases() {
        let env = BatteryCurves::nonlinear_default(101);
        // Within limits: unchanged.
        assert_eq!(env.truncate_action(0.5, 0.0, 10.0, 1.0), (0.0, 10.0));
        // CV taper: a full-rate request at 95% gets the true rating.
        let (_, b) = env.truncate_action(0.95, 0.0, 17.2, 1.0);
        assert!((b - env.sample(0.95).b_kw).abs() < 1e-12);
        assert!(b < 17.2);
        // Full battery takes no charge.
        assert_eq!(env.truncate_action(1.0, 0.0, 5.0, 1.0), (0.0, 0.0));
        // Mutual exclusivity.
        assert_eq!(env.truncate_action(0.5, 3.0, 5.0, 1.0), (0.0, 5.0));
        assert_eq!(env.truncate_action(0.5, 6.0, 5.0, 1.0), (6.0, 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let c = BatteryCurves::nonlinear_default(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctrl.csv");
        c.write_csv(&path).unwrap();
        let back = BatteryCurves::load_csv(&path, 100.0, None).unwrap();
        assert_eq!(back, c);
    }
}

//! Independent checks of individual modules against hand-derived or
//! brute-force reference values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v2g_core::battery::{BatteryCurves, CurveResolutionPair, DefaultCurveShape};
use v2g_core::fleet::{compliance, simulate, ChargingSession, FacilityConfig, Scenario, SimOptions, SimResult};
use v2g_core::metrics::{benefit_rates, v2g_benefit, MileageConfig};
use v2g_core::policy::decide;
use v2g_core::price::{sample_node_path, train_markov, PriceSeries, TrainMode};
use v2g_core::synth::{synth_prices, PriceSynthConfig};
use v2g_core::valuation::{backward_pass, deterministic_pass, SessionWindow, ValuationConfig};

fn constant(eta: f64, c: f64) -> BatteryCurves {
    BatteryCurves::constant(100.0, 0.0, 1.0, 17.2, 17.2, eta, c).unwrap()
}

#[test]
fn sampled_paths_reproduce_transition_frequencies() {
    let hist = synth_prices(&PriceSynthConfig { days: 60, ..Default::default() }, 4).unwrap();
    let mk = train_markov(&hist.split_days(24).unwrap(), 3, 24, TrainMode::RawPrice).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let t = 7;
    let n = mk.nodes(t).len();
    let m = mk.nodes(t + 1).len();
    let mut counts = vec![vec![0usize; m]; n];
    for _ in 0..10_000 {
        let path = sample_node_path(&mk, &mut rng, 0, 24, None);
        counts[path[t]][path[t + 1]] += 1;
    }
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total < 500 {
            continue;
        }
        for (j, &c) in row.iter().enumerate() {
            let freq = c as f64 / total as f64;
            let p = mk.transitions(t)[i][j];
            assert!((freq - p).abs() <= 0.02, "node {i}->{j}: sampled {freq:.3}, model {p:.3}");
        }
    }
}

#[test]
fn coarse_efficiency_table_is_within_interpolation_bound() {
    let shape = DefaultCurveShape::default();
    let c = BatteryCurves::nonlinear_default(10);
    let s = c.samples();
    let h = s.windows(2).map(|w| w[1].soc - w[0].soc).fold(0.0, f64::max);
    // η(e) = 0.96 − 0.04·(2e − 1)², |η''| = 0.32.
    let bound = h * h / 8.0 * 0.32;
    let worst = (0..=100)
        .map(|k| k as f64 / 100.0)
        .map(|e| (c.sample(e).eta - shape.eta(e)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= bound + 1e-15, "{worst} > {bound}");
    assert!(worst > 0.5 * bound, "bound is tight for a quadratic: {worst} vs {bound}");
}

#[test]
fn slopes_match_finite_differences_off_knots() {
    let c = BatteryCurves::nonlinear_default(10);
    let knots: Vec<f64> = c.samples().iter().map(|s| s.soc).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-4;
    let mut checked = 0;
    while checked < 100 {
        let e: f64 = rng.random_range(h..1.0 - h);
        if knots.iter().any(|k| (k - e).abs() <= h) {
            continue;
        }
        checked += 1;
        let (hi, lo, d) = (c.sample(e + h), c.sample(e - h), c.slopes(e));
        for (fd, an) in [
            ((hi.b_kw - lo.b_kw) / (2.0 * h), d.b_kw),
            ((hi.p_kw - lo.p_kw) / (2.0 * h), d.p_kw),
            ((hi.eta - lo.eta) / (2.0 * h), d.eta),
            ((hi.c_per_mwh - lo.c_per_mwh) / (2.0 * h), d.c_per_mwh),
        ] {
            assert!((fd - an).abs() <= 1e-6, "e={e}: {fd} vs {an}");
        }
    }
}

#[test]
fn single_step_charge_against_fine_substeps() {
    // η is read at the starting SoC, so a full-hour charge differs from the
    // same energy delivered in 1000 slices. The gap is pinned as a regression.
    let c = BatteryCurves::nonlinear_default(101);
    let b = 17.2;
    let one = c.step_soc(0.5, 0.0, b);
    let mut e = 0.5;
    for _ in 0..1000 {
        e = c.step_soc(e, 0.0, b / 1000.0);
    }
    let gap = one - e;
    assert!(gap > 0.0, "η falls above 0.5, so slicing stores less");
    assert!((gap - SUBSTEP_GAP).abs() <= 1e-9, "gap {gap:e}");
}

const SUBSTEP_GAP: f64 = 2.497373310302864e-4;

#[test]
fn values_are_finite_and_bounded_below() {
    let hist = synth_prices(&PriceSynthConfig { days: 30, ..Default::default() }, 12).unwrap();
    let mk = train_markov(&hist.split_days(24).unwrap(), 6, 24, TrainMode::RawPrice).unwrap();
    let c = BatteryCurves::nonlinear_default(10);
    let cfg = ValuationConfig { segments: 200, ..Default::default() };
    let w = SessionWindow { t_start: 5, t_end: 20, target: 0.7 };
    let vf = backward_pass(&mk, &c, w, 0, &cfg).unwrap();
    for t in w.t_start..w.t_end {
        for i in 0..vf.nodes(t).len() {
            assert!(vf.layer(t, i).iter().all(|v| v.is_finite() && *v >= -cfg.penalty));
        }
    }
    // Nonnegative prices and constant curves give nonnegative values. With
    // the default curves a rising c(e) makes full discharge cost more at
    // higher SoC, which can push q below zero.
    let prices: Vec<f64> = (0..24).map(|k| 10.0 + k as f64).collect();
    let vf = deterministic_pass(&prices, &constant(0.95, 15.0), w, &cfg).unwrap();
    assert!((w.t_start..w.t_end).all(|t| vf.layer(t, 0).iter().all(|v| *v >= 0.0)));
}

#[test]
fn constant_series_equals_one_node_model() {
    let c = BatteryCurves::nonlinear_default(10);
    let cfg = ValuationConfig { segments: 100, ..Default::default() };
    let days: Vec<PriceSeries> = (0..5).map(|_| PriceSeries::from_values(60, vec![30.0; 24]).unwrap()).collect();
    let mk = train_markov(&days, 4, 24, TrainMode::RawPrice).unwrap();
    let w = SessionWindow { t_start: 3, t_end: 15, target: 0.6 };
    let stochastic = backward_pass(&mk, &c, w, 0, &cfg).unwrap();
    let det = deterministic_pass(&[30.0; 24], &c, w, &cfg).unwrap();
    for t in w.t_start..w.t_end {
        assert_eq!(stochastic.layer(t, 0), det.layer(t, 0));
    }
}

/// Actions the value function picks over `{10, 50}` from an empty pack with
/// no target.
fn two_step_actions(eta: f64, c: f64) -> ((f64, f64), (f64, f64)) {
    let curves = constant(eta, c);
    let cfg = ValuationConfig { segments: 1000, ..Default::default() };
    let prices = [10.0, 50.0];
    let w = SessionWindow { t_start: 0, t_end: 2, target: 0.0 };
    let vf = deterministic_pass(&prices, &curves, w, &cfg).unwrap();
    let d0 = decide(&vf, 0, 10.0, 0.0, &curves, &cfg);
    let e = curves.step_soc(0.0, d0.p_kwh, d0.b_kwh);
    let d1 = decide(&vf, 1, 50.0, e, &curves, &cfg);
    ((d0.p_kwh, d0.b_kwh), (d1.p_kwh, d1.b_kwh))
}

#[test]
fn two_step_arbitrage_needs_round_trip_spread() {
    // Charging b at 10 lets b·η² be sold at 50 less the penalty: profitable
    // iff (50 − c)·η² > 10.
    for (eta, c) in [(0.95, 15.0), (0.9, 0.0), (0.6, 5.0), (0.5, 15.0), (0.95, 39.0), (0.45, 0.0)] {
        let ((p0, b0), (p1, b1)) = two_step_actions(eta, c);
        let profitable = (50.0 - c) * eta * eta > 10.0;
        assert_eq!(p0, 0.0);
        assert_eq!(b1, 0.0);
        if profitable {
            assert!((b0 - 17.2).abs() < 1e-9, "η={eta} c={c}: b0={b0}");
            assert!((p1 - 17.2 * eta * eta).abs() < 1e-6, "η={eta} c={c}: p1={p1}");
        } else {
            assert_eq!((b0, p1), (0.0, 0.0), "η={eta} c={c}");
        }
    }
}

#[test]
fn single_session_dispatch_matches_brute_force() {
    let curves = constant(0.95, 15.0);
    let pair = CurveResolutionPair::new(curves.clone(), curves.clone()).unwrap();
    let prices = PriceSeries::from_values(60, vec![10.0, 50.0]).unwrap();
    let s = ChargingSession::new("only", 0, 2, 0.1, 0.2).unwrap();
    let fac = FacilityConfig { limit_kw: 1e4, ..FacilityConfig::paper_preset() };
    let r = simulate(&fac, &prices, None, &pair, &[s], Scenario::Pf, &SimOptions::default()).unwrap();

    // Every (action, action) pair on a 0.01 kWh grid, charging or discharging
    // each step, ending at or above the target.
    let cost = |e0: f64, (p, b): (f64, f64), lam: f64| -> Option<(f64, f64)> {
        let e1 = curves.step_soc(e0, p, b);
        (-1e-12..=1.0 + 1e-12).contains(&e1).then(|| (e1, lam * (b - p) / 1000.0 + 15.0 * p / 1000.0))
    };
    let actions: Vec<(f64, f64)> = (0..=1720)
        .map(|k| (0.0, k as f64 / 100.0))
        .chain((1..=1720).map(|k| (k as f64 / 100.0, 0.0)))
        .collect();
    let mut best = (f64::INFINITY, (0.0, 0.0), (0.0, 0.0));
    for &a0 in &actions {
        let Some((e1, c0)) = cost(0.1, a0, 10.0) else { continue };
        for &a1 in &actions {
            let Some((e2, c1)) = cost(e1, a1, 50.0) else { continue };
            if e2 >= 0.2 - 1e-12 && c0 + c1 < best.0 {
                best = (c0 + c1, a0, a1);
            }
        }
    }
    let out = &r.sessions[0];
    assert!((out.total_cost() - best.0).abs() <= 2e-4, "{} vs {}", out.total_cost(), best.0);
    for (got, want) in out.actions.iter().zip([best.1, best.2]) {
        assert!((got.0 - want.0).abs() <= 0.02 && (got.1 - want.1).abs() <= 0.02, "{got:?} vs {want:?}");
    }
}

fn outcome(id: &str, final_soc: f64, target: f64, feasible: bool, discharged: f64) -> v2g_core::fleet::SessionOutcome {
    v2g_core::fleet::SessionOutcome {
        id: id.into(),
        arrival: 0,
        departure: 4,
        start_soc: 0.1,
        target_soc: target,
        final_soc,
        grid_cost: 1.0,
        penalty_cost: 0.0,
        charged_kwh: 10.0,
        discharged_kwh: discharged,
        feasible,
        rejected: false,
        soc: vec![],
        actions: vec![],
    }
}

fn result(scenario: Scenario, sessions: Vec<v2g_core::fleet::SessionOutcome>, grid_cost: f64) -> SimResult {
    let discharged = sessions.iter().map(|s| s.discharged_kwh).sum();
    SimResult {
        scenario,
        steps: vec![],
        sessions,
        audit: vec![],
        grid_cost,
        penalty_cost: 0.0,
        charged_kwh: 0.0,
        discharged_kwh: discharged,
        rejected: 0,
        non_monotone_lookups: 0,
        runtime_s: 0.0,
    }
}

#[test]
fn compliance_cases() {
    let exact = result(Scenario::Uc, vec![outcome("a", 0.8, 0.8, true, 0.0), outcome("b", 0.6, 0.6, true, 0.0)], 0.0);
    assert_eq!(compliance(&exact), Some(1.0));
    let near = result(Scenario::Uc, vec![outcome("a", 0.76, 0.8, true, 0.0)], 0.0);
    assert_eq!(compliance(&near), Some(1.0));
    let mixed = result(
        Scenario::Uc,
        vec![outcome("a", 0.8, 0.8, true, 0.0), outcome("b", 0.5, 0.8, true, 0.0), outcome("c", 0.2, 0.9, false, 0.0)],
        0.0,
    );
    assert_eq!(compliance(&mixed), Some(0.5));
}

#[test]
fn benefit_rates_are_ledger_ratios() {
    let v2g = result(
        Scenario::NlV2g,
        vec![outcome("a", 0.8, 0.8, true, 120.0), outcome("b", 0.8, 0.8, true, 0.0), outcome("c", 0.8, 0.8, true, 30.0)],
        40.0,
    );
    let v1g = result(
        Scenario::NlV1g,
        vec![outcome("a", 0.8, 0.8, true, 0.0), outcome("b", 0.8, 0.8, true, 0.0), outcome("c", 0.8, 0.8, true, 0.0)],
        55.0,
    );
    let mileage = MileageConfig::default();
    let b = v2g_benefit(&v2g, &v1g, &mileage).unwrap();
    assert_eq!(b.savings, 15.0);
    assert_eq!(b.discharged_kwh, 150.0);
    assert!((b.session_fraction - 2.0 / 3.0).abs() < 1e-15);
    let miles = 150.0 * (2.0 / 3.0) / 100.0 * 348.0;
    assert!((b.miles - miles).abs() < 1e-9);
    assert_eq!(b.per_kwh, Some(15.0 / 150.0));
    assert!((b.per_mile.unwrap() - 15.0 / miles).abs() < 1e-12);
    let zero = benefit_rates(0.0, 0.0, 0.0);
    assert_eq!((zero.per_kwh.unwrap_or(0.0), zero.per_mile.unwrap_or(0.0)), (0.0, 0.0));
}

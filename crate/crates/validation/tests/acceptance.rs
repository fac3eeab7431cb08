//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p v2g-core --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v2g_core::battery::{BatteryCurves, CurveResolutionPair};
use v2g_core::fleet::{compliance, simulate, FacilityConfig, Scenario, SimOptions, SimResult};
use v2g_core::metrics::equivalent_mileage;
use v2g_core::policy::decide;
use v2g_core::price::{sample_path, train_markov, PriceMarkov, PriceSeries, TrainMode};
use v2g_core::synth::{synth_prices, synth_sessions, PriceSynthConfig, SessionSynthConfig};
use v2g_core::valuation::{
    backward_pass, deterministic_pass, price_thresholds, q_update, q_update_with_target, terminal_value,
    SessionWindow, SocGrid, ValuationConfig, Valuator,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn linear() -> BatteryCurves {
    BatteryCurves::constant(100.0, 0.0, 1.0, 17.2, 17.2, 0.95, 15.0).unwrap()
}

// ---------------------------------------------------------------- criterion 1

/// Exhaustive optimum over grid-to-grid moves: every step picks the next
/// grid SoC within the plant's rating, paying λ per grid kWh plus the
/// degradation cost on discharge. Infinite when the target is unreachable.
#[allow(clippy::needless_range_loop)]
fn grid_search_optimum(curves: &BatteryCurves, prices: &[f64], s: f64, f: f64, m: usize, discharge: bool) -> f64 {
    let g = SocGrid::for_curves(curves, m).unwrap();
    let n = g.points();
    let cap = curves.capacity_kwh();
    let mut j: Vec<f64> = (0..n)
        .map(|k| if g.soc(k) >= f - 1e-9 { 0.0 } else { f64::INFINITY })
        .collect();
    for &lam in prices.iter().rev() {
        let mut nj = vec![f64::INFINITY; n];
        for a in 0..n {
            let e = g.soc(a);
            let v = curves.sample(e);
            for b in 0..n {
                let en = g.soc(b);
                let cost = if b >= a {
                    let kwh = (en - e) * cap / v.eta;
                    if kwh > v.b_kw + 1e-9 {
                        continue;
                    }
                    lam * kwh / 1000.0
                } else {
                    if !discharge {
                        continue;
                    }
                    let kwh = (e - en) * cap * v.eta;
                    if kwh > v.p_kw + 1e-9 {
                        continue;
                    }
                    (v.c_per_mwh - lam) * kwh / 1000.0
                };
                nj[a] = nj[a].min(cost + j[b]);
            }
        }
        j = nj;
    }
    j[g.nearest_point(s)]
}

/// Cost and final SoC of the PF controller on the plant itself.
fn pf_session(curves: &BatteryCurves, prices: &[f64], s: f64, f: f64, m: usize, discharge: bool) -> (f64, f64) {
    let cfg = ValuationConfig { segments: m, discharge, ..Default::default() };
    let w = SessionWindow { t_start: 0, t_end: prices.len(), target: f };
    let vf = deterministic_pass(prices, curves, w, &cfg).unwrap();
    let (mut e, mut cost) = (s, 0.0);
    for (t, &lam) in prices.iter().enumerate() {
        let d = decide(&vf, t, lam, e, curves, &cfg);
        let (p, b) = curves.truncate_action(e, d.p_kwh, d.b_kwh, 1.0);
        cost += lam * (b - p) / 1000.0 + curves.sample(e).c_per_mwh * p / 1000.0;
        e = curves.step_soc(e, p, b);
    }
    (cost, e)
}

fn criterion_1() -> Outcome {
    // Oracle grid: one SoC segment per action step. The DP runs at its
    // production resolution; the same-resolution gap is reported alongside.
    const M: usize = 50;
    let dp_segments = ValuationConfig::default().segments;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let nl = BatteryCurves::nonlinear_default(101);
    let lin = linear();
    let (mut n, mut missed) = (0, 0);
    let (mut worst, mut best, mut worst_coarse) = (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    while n < 60 {
        let curves = if n % 2 == 0 { &nl } else { &lin };
        let t = rng.random_range(4..=12usize);
        let prices: Vec<f64> = (0..t).map(|_| rng.random_range(10.0..80.0)).collect();
        // Start and target on grid points so both sides face the same requirement.
        let s = 0.1;
        let steps = rng.random_range(10..=40usize);
        let f = s + steps as f64 / M as f64;
        let discharge = n % 4 < 2;
        let o = grid_search_optimum(curves, &prices, s, f, M, discharge);
        if !o.is_finite() || o <= 0.0 {
            continue;
        }
        n += 1;
        let (c, e) = pf_session(curves, &prices, s, f, dp_segments, discharge);
        if e < f - 1e-6 {
            missed += 1;
        }
        let rel = (c - o) / o;
        worst = worst.max(rel);
        best = best.min(rel);
        let (c50, _) = pf_session(curves, &prices, s, f, M, discharge);
        worst_coarse = worst_coarse.max((c50 - o) / o);
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 0.02 && missed == 0 && secs < 120.0,
        format!(
            "{n} instances, oracle M={M}: PF-DP (M={dp_segments}) worst {:+.2}% (best {:+.2}%), \
             {missed} missed targets; at M={M} worst {:+.2}%; {secs:.1} s",
            worst * 100.0,
            best * 100.0,
            worst_coarse * 100.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Marginal value at lattice step `k`, node `i`, by recursion over the full
/// scenario tree (no sharing between branches).
#[allow(clippy::too_many_arguments)]
fn tree_value(
    mk: &PriceMarkov,
    phase: usize,
    len: usize,
    k: usize,
    i: usize,
    grid: &SocGrid,
    curves: &BatteryCurves,
    cfg: &ValuationConfig,
    target: f64,
) -> Vec<f64> {
    if k + 1 == len {
        return terminal_value(grid, target, cfg.penalty);
    }
    let h = mk.horizon();
    let row = &mk.transitions((phase + k) % h)[i];
    let next_nodes = mk.nodes((phase + k + 1) % h);
    let mut acc = vec![0.0; grid.points()];
    for (j, &w) in row.iter().enumerate() {
        let v = tree_value(mk, phase, len, k + 1, j, grid, curves, cfg, target);
        for (m, a) in acc.iter_mut().enumerate() {
            *a += w * q_update_with_target(&v, grid, grid.soc(m), next_nodes[j].max(0.0), curves, cfg, target);
        }
    }
    acc
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let h = 6;
        let n_nodes = rng.random_range(2..=3usize);
        let days: Vec<PriceSeries> = (0..30)
            .map(|_| {
                let v = (0..h).map(|k| 20.0 + 8.0 * k as f64 + rng.random_range(-15.0..15.0)).collect();
                PriceSeries::from_values(60, v).unwrap()
            })
            .collect();
        let mk = train_markov(&days, n_nodes, h, TrainMode::RawPrice).unwrap();
        let curves = if inst % 2 == 0 { BatteryCurves::nonlinear_default(101) } else { linear() };
        let cfg = ValuationConfig { segments: rng.random_range(8..=20), discharge: inst % 3 != 0, ..Default::default() };
        let len = rng.random_range(2..=5usize);
        let t_start = rng.random_range(0..h);
        let target = rng.random_range(0.2..0.6);
        let w = SessionWindow { t_start, t_end: t_start + len, target };
        let vf = backward_pass(&mk, &curves, w, 0, &cfg).unwrap();
        let grid = *vf.grid();
        for k in 0..len {
            for i in 0..vf.nodes(t_start + k).len() {
                let oracle = tree_value(&mk, t_start % h, len, k, i, &grid, &curves, &cfg, target);
                for (a, b) in vf.layer(t_start + k, i).iter().zip(&oracle) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-6, format!("20 instances, max |backward pass - scenario tree| = {worst:.2e} $/MWh"))
}

// ---------------------------------------------------------------- criterion 3

/// `∫ v` from `soc_min` to `e` for the piecewise-linear layer.
fn integral(v: &[f64], grid: &SocGrid, e: f64) -> f64 {
    let h = grid.spacing();
    let mut acc = 0.0;
    for m in 0..grid.segments() {
        let (x0, x1) = (grid.soc(m), grid.soc(m + 1));
        if e <= x0 {
            break;
        }
        let x = e.min(x1);
        let w = (x - x0) / h;
        let vx = v[m] + w * (v[m + 1] - v[m]);
        acc += 0.5 * (v[m] + vx) * (x - x0);
    }
    acc
}

/// Best one-step value at `e` over a fine action grid: sell `p` or buy `b`
/// (SoC-fraction units), collecting `π(p − b) − c·p + V(e')`.
fn brute_q(v: &[f64], grid: &SocGrid, e: f64, price: f64, curves: &BatteryCurves, cfg: &ValuationConfig) -> f64 {
    const STEP: f64 = 1e-4;
    let cv = curves.sample(e);
    let scale = cfg.step_hours / curves.capacity_kwh();
    let (lo, hi) = (curves.soc_min(), curves.soc_max());
    let b_max = (cv.b_kw * scale).min((hi - e).max(0.0) / cv.eta);
    let p_max = if cfg.discharge { (cv.p_kw * scale).min((e - lo).max(0.0) * cv.eta) } else { 0.0 };
    let mut best = integral(v, grid, e);
    let mut try_b = |b: f64| {
        let val = -price * b + integral(v, grid, (e + b * cv.eta).min(hi));
        best = best.max(val);
    };
    let n = (b_max / STEP).floor() as usize;
    (1..=n).for_each(|k| try_b(k as f64 * STEP));
    try_b(b_max);
    let mut try_p = |p: f64| {
        let val = (price - cv.c_per_mwh) * p + integral(v, grid, (e - p / cv.eta).max(lo));
        best = best.max(val);
    };
    let n = (p_max / STEP).floor() as usize;
    (1..=n).for_each(|k| try_p(k as f64 * STEP));
    try_p(p_max);
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = SocGrid::new(0.0, 1.0, 100).unwrap();
    let curve_set = [BatteryCurves::nonlinear_default(101), BatteryCurves::nonlinear_default(10), linear()];
    let cfg = ValuationConfig { segments: 100, ..Default::default() };
    let h = 1e-3;
    let (mut bad, mut pointwise_bad) = (0, 0);
    let mut worst_abs: f64 = 0.0;
    for draw in 0..1000 {
        let curves = &curve_set[draw % curve_set.len()];
        // Decreasing layer with random slope and curvature.
        let (a, b, c) = (rng.random_range(40.0..120.0), rng.random_range(0.0..80.0), rng.random_range(0.0..40.0));
        let v: Vec<f64> = (0..=100).map(|m| {
            let x = m as f64 / 100.0;
            a - b * x - c * x * x
        }).collect();
        let e = rng.random_range(0.01 + h..0.99 - h);
        let price = rng.random_range(0.0..150.0);
        let q = q_update(&v, &grid, e, price, curves, &cfg);
        let fd = (brute_q(&v, &grid, e + h, price, curves, &cfg) - brute_q(&v, &grid, e - h, price, curves, &cfg)) / (2.0 * h);
        // Q' = q almost everywhere, so the centered difference equals the
        // mean of q over the window even when a grid point or curve knot
        // falls inside it.
        let k = 40;
        let q_mean = (0..=k)
            .map(|i| {
                let w = if i == 0 || i == k { 0.5 } else { 1.0 };
                w * q_update(&v, &grid, e - h + 2.0 * h * i as f64 / k as f64, price, curves, &cfg)
            })
            .sum::<f64>()
            / k as f64;
        let err = (q_mean - fd).abs();
        if err > 0.5 && err > 0.02 * fd.abs() {
            bad += 1;
            worst_abs = worst_abs.max(err);
        }
        let point_err = (q - fd).abs();
        if point_err > 0.5 && point_err > 0.02 * fd.abs() {
            pointwise_bad += 1;
        }
    }

    // Continuity across the four thresholds under constant parameters.
    let lin = linear();
    let mut jump: f64 = 0.0;
    for _ in 0..200 {
        let (a, b) = (rng.random_range(40.0..120.0), rng.random_range(0.0..80.0));
        let v: Vec<f64> = (0..=100).map(|m| a - b * m as f64 / 100.0).collect();
        let e = rng.random_range(0.2..0.8);
        let th = price_thresholds(&v, &grid, e, &lin, &cfg);
        for x in [th.full_charge, th.partial_charge, th.idle, th.partial_discharge] {
            if x <= 0.0 {
                continue;
            }
            let below = q_update(&v, &grid, e, x, &lin, &cfg);
            let above = q_update(&v, &grid, e, x * (1.0 + 1e-12) + 1e-12, &lin, &cfg);
            jump = jump.max((below - above).abs());
        }
    }
    outcome(
        bad == 0 && jump <= 1e-6,
        format!(
            "1000 draws: {bad} outside 2%/0.5 (worst {worst_abs:.3}); {pointwise_bad} pointwise at kinks; \
             max jump at thresholds {jump:.2e} $/MWh"
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let prices = synth_prices(&PriceSynthConfig { days: 40, ..Default::default() }, 11).unwrap();
    let sessions = synth_sessions(&SessionSynthConfig { n_sessions: 100, ..Default::default() }, &prices, 5).unwrap();
    let fac = FacilityConfig { limit_kw: 1e6, n_chargers: 1000, ..FacilityConfig::paper_preset() };
    let curves = CurveResolutionPair::default_nonlinear();
    let opts = SimOptions { audit: false, ..Default::default() };
    let run = |sc| simulate(&fac, &prices, None, &curves, &sessions, sc, &opts).unwrap();
    let (v2g, v1g, uc) = (run(Scenario::Pf), run(Scenario::PfV1g), run(Scenario::Uc));
    let (mut checked, mut v2g_over, mut v1g_over) = (0, 0, 0);
    let (mut worst_v2g, mut worst_v1g): (f64, f64) = (0.0, 0.0);
    for ((a, b), c) in v2g.sessions.iter().zip(&v1g.sessions).zip(&uc.sessions) {
        if !(a.feasible && a.compliant() && b.compliant() && c.compliant()) {
            continue;
        }
        checked += 1;
        if a.total_cost() > b.total_cost() {
            v2g_over += 1;
            worst_v2g = worst_v2g.max(a.total_cost() - b.total_cost());
        }
        if b.total_cost() > c.total_cost() {
            v1g_over += 1;
            worst_v1g = worst_v1g.max(b.total_cost() - c.total_cost());
        }
    }
    outcome(
        checked >= 90 && v2g_over == 0 && v1g_over == 0,
        format!(
            "{checked} sessions: PF-V2G > PF-V1G in {v2g_over} (worst ${worst_v2g:.2e}), \
             PF-V1G > UC in {v1g_over} (worst ${worst_v1g:.2e})"
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn limit_violations(r: &SimResult, fac: &FacilityConfig) -> (usize, usize) {
    let budget = fac.limit_kw * fac.step_hours * (1.0 + 1e-12);
    let mut per_step = std::collections::BTreeMap::<usize, (f64, f64)>::new();
    let mut exclusive = 0;
    for row in &r.audit {
        let acc = per_step.entry(row.t).or_default();
        acc.0 += row.p_trunc;
        acc.1 += row.b_trunc;
        if row.p_trunc * row.b_trunc != 0.0 {
            exclusive += 1;
        }
    }
    let over = per_step.values().filter(|(p, b)| *p > budget || *b > budget).count();
    (over, exclusive)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hist = synth_prices(&PriceSynthConfig { days: 60, ..Default::default() }, 50).unwrap();
    let mk = train_markov(&hist.split_days(24).unwrap(), 8, 24, TrainMode::RawPrice).unwrap();
    let curves = CurveResolutionPair::default_nonlinear();
    let (mut decisions, mut over, mut exclusive) = (0, 0, 0);
    let mut round = 0u64;
    while decisions < 10_000 {
        let prices = synth_prices(&PriceSynthConfig { days: 10, ..Default::default() }, 100 + round).unwrap();
        let n = rng.random_range(20..60);
        let sessions = synth_sessions(&SessionSynthConfig { n_sessions: n, ..Default::default() }, &prices, round).unwrap();
        let fac = FacilityConfig {
            limit_kw: rng.random_range(20.0..120.0),
            n_chargers: rng.random_range(5..30),
            ..FacilityConfig::paper_preset()
        };
        let opts = SimOptions { strict_llf: round % 2 == 1, ..Default::default() };
        let sc = [Scenario::NlV2g, Scenario::LV2g, Scenario::Pf, Scenario::Uc][round as usize % 4];
        let r = simulate(&fac, &prices, Some(&mk), &curves, &sessions, sc, &opts).unwrap();
        let (o, x) = limit_violations(&r, &fac);
        decisions += r.audit.len();
        over += o;
        exclusive += x;
        round += 1;
    }
    outcome(
        over == 0 && exclusive == 0,
        format!("{decisions} decisions in {round} runs: {over} limit violations, {exclusive} simultaneous charge/discharge"),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let hist = synth_prices(&PriceSynthConfig { days: 120, ..Default::default() }, 21).unwrap();
    let mk = train_markov(&hist.split_days(24).unwrap(), 12, 24, TrainMode::RawPrice).unwrap();
    let prices = sample_path(&mk, 99, 0, 30 * 24, None);
    let sessions = synth_sessions(&SessionSynthConfig::default(), &prices, 5).unwrap();
    let fac = FacilityConfig::paper_preset();
    let curves = CurveResolutionPair::default_nonlinear();
    let opts = SimOptions { audit: false, ..Default::default() };
    let run = |sc| simulate(&fac, &prices, Some(&mk), &curves, &sessions, sc, &opts).unwrap();
    let nl = compliance(&run(Scenario::NlV2g)).unwrap_or(0.0);
    let l = compliance(&run(Scenario::LV2g)).unwrap_or(0.0);
    outcome(
        nl >= 0.90 && l < nl,
        format!("30 days, {} sessions, 21 x 17.2 kW, 150 kW: NL-V2G {nl:.3}, L-V2G {l:.3}", sessions.len()),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let miles = equivalent_mileage(9600.0, 139.0 / 2967.0, 100.0, 348.0).unwrap();
    let ratio = FacilityConfig::paper_preset().oversubscription();
    outcome(
        (miles - 1565.0).abs() <= 1.0 && (ratio - 2.41).abs() <= 0.01,
        format!("mileage {miles:.1} mi, oversubscription {ratio:.3}"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let hist = synth_prices(&PriceSynthConfig { days: 120, ..Default::default() }, 8).unwrap();
    let mk = train_markov(&hist.split_days(24).unwrap(), 12, 24, TrainMode::RawPrice).unwrap();
    let ctrl = BatteryCurves::nonlinear_default(10);
    let cfg = ValuationConfig::default();
    let w = SessionWindow { t_start: 0, t_end: 24, target: 0.8 };
    let mut times: Vec<f64> = (0..7)
        .map(|_| {
            let t0 = Instant::now();
            let vf = backward_pass(&mk, &ctrl, w, 0, &cfg).unwrap();
            assert_eq!(vf.n_layers(), 24);
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let pass_ms = times[times.len() / 2] * 1000.0;

    // One year at workplace scale.
    let year = sample_path(&mk, 88, 0, 365 * 24, None);
    let sessions = synth_sessions(&SessionSynthConfig { n_sessions: 3000, ..Default::default() }, &year, 9).unwrap();
    let fac = FacilityConfig { n_chargers: 60, ..FacilityConfig::paper_preset() };
    let curves = CurveResolutionPair::default_nonlinear();
    let opts = SimOptions { audit: false, ..Default::default() };
    let t0 = Instant::now();
    let r = simulate(&fac, &year, Some(&mk), &curves, &sessions, Scenario::NlV2g, &opts).unwrap();
    let year_s = t0.elapsed().as_secs_f64();
    let _ = Valuator::new(&ctrl, &cfg).unwrap();
    outcome(
        pass_ms <= 50.0 && year_s <= 900.0,
        format!(
            "backward pass (T=24, N=12, M=1000) median {pass_ms:.1} ms; 1-year NL-V2G, {} sessions: {year_s:.1} s",
            r.sessions.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    // Honor `cargo test -- <filter>` loosely: a filter that names no
    // criterion skips the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str()) || a.starts_with("criterion")) {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 8] = [
        ("1 oracle optimality (deterministic)", criterion_1),
        ("2 stochastic Bellman oracle", criterion_2),
        ("3 q-update derivative check", criterion_3),
        ("4 scenario dominance", criterion_4),
        ("5 facility limit and exclusivity", criterion_5),
        ("6 compliance at desk scale", criterion_6),
        ("7 worked examples", criterion_7),
        ("8 performance envelope", criterion_8),
    ];
    let only: Vec<&String> = args.iter().filter(|a| a.starts_with("criterion")).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        let key = format!("criterion{}", &name[..1]);
        if !only.is_empty() && !only.iter().any(|o| **o == key) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        println!(
            "{} criterion {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("SKIP criterion 9 golden regression: needs user-supplied market and session data; see README");
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

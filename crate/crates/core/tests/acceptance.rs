//! Acceptance gate. Each criterion prints one PASS/FAIL line and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use richards_sdre::integrate::SimulationRecord;
use richards_sdre::runner::{preset, run_experiment, verify, ExperimentConfig, Outcome};

const S_MAX: f64 = 1.25e-4;

/// Written straight to stderr so the line shows even when output is captured.
fn report(n: usize, title: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} ({title}): {verdict}: {detail}");
    assert!(passed, "criterion {n} ({title}) failed: {detail}");
}

fn paired(name: &'static str) -> &'static Outcome {
    static CELLS: [OnceLock<Outcome>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let idx = ["test1", "test2", "test3", "test4"].iter().position(|n| *n == name).unwrap();
    CELLS[idx].get_or_init(|| run_experiment(&preset(name).unwrap()).unwrap())
}

fn record(r: &Option<richards_sdre::Result<SimulationRecord>>) -> Result<&SimulationRecord, String> {
    match r {
        Some(Ok(rec)) => Ok(rec),
        Some(Err(e)) => Err(e.to_string()),
        None => Err("run not requested".into()),
    }
}

/// Cost ratio of a paired run, or the reason it is unavailable.
fn ratio(name: &'static str) -> Result<f64, String> {
    let out = paired(name);
    out.summary.cost_ratio.ok_or_else(|| out.summary.errors.join("; "))
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn describe_band(name: &'static str, target: f64, rel: f64) -> (bool, String) {
    match ratio(name) {
        Ok(r) => (within(r, target, rel), format!("{name} ratio {r:.4} (target {target:.4} +/- {:.0}%)", rel * 100.0)),
        Err(e) => (false, format!("{name} ratio unavailable: {e}")),
    }
}

#[test]
fn criterion_1_haverkamp_cost_ratios() {
    let (ok1, d1) = describe_band("test1", 45.68 / 16.37, 0.25);
    let (ok2, d2) = describe_band("test2", 45.23 / 17.23, 0.25);
    let slow: Vec<String> = ["test1", "test2"]
        .iter()
        .filter(|n| paired(n).summary.wall_time >= 60.0)
        .map(|n| format!("{n} took {:.1}s", paired(n).summary.wall_time))
        .collect();
    let detail = format!("{d1}; {d2}{}", slow.iter().map(|s| format!("; {s}")).collect::<String>());
    report(1, "Haverkamp cost ratios", ok1 && ok2 && slow.is_empty(), &detail);
}

#[test]
fn criterion_2_gardner_cost_ratios() {
    let (ok3, d3) = describe_band("test3", 80.84 / 7.25, 0.25);
    let (ok4, d4) = describe_band("test4", 191.71 / 9.60, 0.35);
    let ordering = match (ratio("test1"), ratio("test3"), ratio("test4")) {
        (Ok(r1), Ok(r3), Ok(r4)) => r4 > r3 && r3 > r1,
        _ => false,
    };
    let detail = format!("{d3}; {d4}; ordering test4 > test3 > test1 {}", if ordering { "holds" } else { "fails" });
    report(2, "Gardner cost ratios", ok3 && ok4 && ordering, &detail);
}

#[test]
fn criterion_3_mean_uptake_plateau() {
    let out = paired("test1");
    let controlled = match record(&out.controlled) {
        Ok(rec) => {
            let low = rec
                .times
                .iter()
                .zip(&rec.mean_uptake)
                .filter(|(t, _)| (300.0..=1000.0).contains(*t))
                .map(|(_, s)| *s)
                .fold(f64::INFINITY, f64::min);
            let covers = rec.times.last() == Some(&1000.0);
            (covers && low >= 0.95 * S_MAX, format!("controlled min S on [300, 1000] = {low:.4e}"))
        }
        Err(e) => (false, format!("controlled run failed: {e}")),
    };
    let uncontrolled = match record(&out.uncontrolled) {
        Ok(rec) => {
            let window: Vec<f64> = rec
                .times
                .iter()
                .zip(&rec.mean_uptake)
                .filter(|(t, _)| (250.0..=1000.0).contains(*t))
                .map(|(_, s)| *s)
                .collect();
            let decreasing = window.len() >= 2 && window.windows(2).all(|w| w[1] < w[0]);
            let (first, last) = (window.first().copied().unwrap_or(f64::NAN), window.last().copied().unwrap_or(f64::NAN));
            (
                decreasing,
                format!("uncontrolled S from {first:.6e} to {last:.6e}, strictly decreasing: {decreasing}"),
            )
        }
        Err(e) => (false, format!("uncontrolled run failed: {e}")),
    };
    report(
        3,
        "mean uptake plateau",
        controlled.0 && uncontrolled.0,
        &format!("{}; {}", controlled.1, uncontrolled.1),
    );
}

#[test]
fn criterion_4_gardner_uncontrolled_plateau() {
    let out = paired("test3");
    let (passed, detail) = match record(&out.uncontrolled) {
        Ok(rec) => {
            let last = *rec.mean_uptake.last().unwrap();
            let tail: Vec<f64> = rec
                .times
                .iter()
                .zip(&rec.mean_uptake)
                .filter(|(t, _)| **t >= 900.0)
                .map(|(_, s)| *s)
                .collect();
            let spread = tail.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - tail.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let settled = spread <= 0.01 * last;
            (
                within(last, 9e-5, 0.10) && settled,
                format!("equilibrium S = {last:.4e} (target 9e-5 +/- 10%), spread over [900, 1000] = {spread:.2e}"),
            )
        }
        Err(e) => (false, format!("uncontrolled run failed: {e}")),
    };
    report(4, "Gardner uncontrolled plateau", passed, &detail);
}

/// Surface head series of a record.
fn surface(rec: &SimulationRecord) -> Vec<(f64, f64)> {
    rec.times.iter().zip(&rec.states).map(|(t, y)| (*t, y[0])).collect()
}

fn test1_shape() -> (bool, String) {
    let rec = match record(&paired("test1").controlled) {
        Ok(r) => r,
        Err(e) => return (false, format!("test1 controlled run failed: {e}")),
    };
    let y0 = surface(rec);
    let Some(k) = y0.iter().position(|(t, h)| *t <= 50.0 && (-40.0..=-30.0).contains(h)) else {
        let reached = y0.iter().filter(|(t, _)| *t <= 50.0).map(|(_, h)| *h).fold(f64::INFINITY, f64::min);
        return (false, format!("test1 y0 never in [-40, -30] by t = 50 (lowest {reached:.2})"));
    };
    let (t_reach, h_reach) = y0[k];
    let (t_end, h_end) = *y0.last().unwrap();
    let dipped = y0[k..].iter().map(|(_, h)| *h).fold(f64::INFINITY, f64::min);
    let rate = (h_end - h_reach) / (t_end - t_reach);
    let passed = t_end == 1000.0 && h_end > dipped && dipped >= -40.0 && (0.0..=0.05).contains(&rate);
    (
        passed,
        format!("test1 y0 = {h_reach:.2} at t = {t_reach:.2}, lowest {dipped:.2}, {h_end:.2} at t = {t_end}, mean rate {rate:.3e}"),
    )
}

fn test3_shape() -> (bool, String) {
    let rec = match record(&paired("test3").controlled) {
        Ok(r) => r,
        Err(e) => return (false, format!("test3 controlled run failed: {e}")),
    };
    let y0 = surface(rec);
    let dip = y0.iter().map(|(_, h)| *h).fold(f64::INFINITY, f64::min);
    let tail: Vec<f64> = y0.iter().filter(|(t, _)| *t >= 900.0).map(|(_, h)| *h).collect();
    let settled = !tail.is_empty() && tail.iter().all(|h| (-38.0..=-30.0).contains(h));
    let last = y0.last().unwrap();
    (
        (-55.0..=-45.0).contains(&dip) && settled && last.0 == 1000.0,
        format!("test3 y0 lowest {dip:.2}, final {:.2} at t = {}", last.1, last.0),
    )
}

#[test]
fn criterion_5_boundary_trajectory_shape() {
    let (ok1, d1) = test1_shape();
    let (ok3, d3) = test3_shape();
    report(5, "boundary trajectory shape", ok1 && ok3, &format!("{d1}; {d3}"));
}

#[test]
fn criterion_6_noise_robustness() {
    let baseline = paired("test3");
    let base_con = baseline.summary.total_cost_controlled;
    let base_unc = baseline.summary.total_cost_uncontrolled;
    let mut con = Vec::new();
    let mut unc = Vec::new();
    let mut errors = Vec::new();
    for seed in 1..=10 {
        let cfg = ExperimentConfig { seed, ..preset("test4").unwrap() };
        let out = run_experiment(&cfg).unwrap();
        con.extend(out.summary.total_cost_controlled);
        unc.extend(out.summary.total_cost_uncontrolled);
        errors.extend(out.summary.errors.iter().map(|e| format!("seed {seed} {e}")));
    }
    let mean = |v: &[f64]| if v.len() == 10 { Some(v.iter().sum::<f64>() / 10.0) } else { None };
    let growth = |m: Option<f64>, b: Option<f64>| m.zip(b).map(|(m, b)| m / b - 1.0);
    let g_con = growth(mean(&con), base_con);
    let g_unc = growth(mean(&unc), base_unc);
    let show = |g: Option<f64>| g.map_or("unavailable".to_string(), |g| format!("{:+.3}%", 100.0 * g));
    let passed = matches!((g_con, g_unc), (Some(c), Some(u)) if c < 0.5 && u > 1.0);
    let mut detail = format!("controlled mean increase {} (< 50%), uncontrolled mean increase {} (> 100%)", show(g_con), show(g_unc));
    if let Some(first) = errors.first() {
        detail.push_str(&format!("; {} failed runs, first: {first}", errors.len()));
    }
    report(6, "noise robustness", passed, &detail);
}

#[test]
fn criterion_7_property_suite() {
    let started = Instant::now();
    let checks = verify::run(None);
    let elapsed = started.elapsed().as_secs_f64();
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            std::io::stderr(),
            "  {:<24} {verdict}: measured {:.3e} {} {:.3e}",
            c.name,
            c.measured,
            c.criterion,
            c.tolerance
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let detail = format!("{} of {} properties pass in {elapsed:.1}s; failed: {failed:?}", checks.len() - failed.len(), checks.len());
    report(7, "property suite", failed.is_empty() && elapsed < 300.0, &detail);
}

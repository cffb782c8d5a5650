//! Acceptance criteria. Runs as a plain binary (`harness = false`) so every
//! criterion prints exactly one PASS/FAIL line even when all pass.

use std::process::ExitCode;

use lorahop::engine::{
    all_joined_at, export, measure_avg_power, measure_duty_cycle, measure_sync_error, run,
    Scenario, SimulationTrace, TraceEventKind,
};
use lorahop::phy::{lorawan_time_on_air, time_on_air, RadioParams};
use lorahop::planner::{app_period, duty_cycle_estimate, mean_power, Airtimes, PowerProfile};
use lorahop::protocol::{build_schedule, frame_time, NodeId};
use lorahop::timebase::min_guard;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const TICK: f64 = 1.0 / 32_768.0;
const DRIFTS: [f64; 4] = [0.0, 20.0, -20.0, 10.0];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn ms(secs: f64) -> f64 {
    secs * 1e3
}

fn c1_airtime() -> Verdict {
    let r = RadioParams::default();
    let got = [
        time_on_air(3, &r).unwrap().as_secs(),
        time_on_air(29, &r).unwrap().as_secs(),
        lorawan_time_on_air(24, &r).unwrap().as_secs(),
    ];
    let exact = [103.424, 226.304, 267.264];
    let published = [103.4, 226.3, 267.26];
    let ok = got
        .iter()
        .zip(exact.iter().zip(published))
        .all(|(g, (e, p))| (ms(*g) - e).abs() < 1e-9 && (ms(*g) - p).abs() <= 0.05);
    verdict(
        ok,
        format!("{:.3} / {:.3} / {:.3} ms", ms(got[0]), ms(got[1]), ms(got[2])),
    )
}

fn c2_frame_time() -> Verdict {
    let s = build_schedule(29, 90, 21_281).unwrap();
    let tf = frame_time(&s, 32_768);
    verdict((tf - 58.5).abs() <= 0.1, format!("T_F = {tf:.4} s (published 58.5 s)"))
}

fn steady_samples(trace: &SimulationTrace, a: u8, b: u8) -> Vec<f64> {
    let joined = all_joined_at(trace).unwrap_or(f64::INFINITY);
    measure_sync_error(trace, NodeId(a), NodeId(b))
        .into_iter()
        .filter(|s| s.time > joined)
        .map(|s| s.epsilon.abs())
        .collect()
}

fn worst(samples: &[f64]) -> f64 {
    samples.iter().copied().fold(0.0, f64::max)
}

fn c3_sync() -> Verdict {
    let bound = 30.6e-6;
    let star = run(&Scenario::star(&DRIFTS)).unwrap();
    let line = run(&Scenario::line(&DRIFTS)).unwrap();
    let star_pairs: Vec<Vec<f64>> = (1..4).map(|c| steady_samples(&star, 0, c)).collect();
    let line_pairs: Vec<Vec<f64>> = (1..4).map(|c| steady_samples(&line, c - 1, c)).collect();
    let hops: Vec<Vec<f64>> = (1..4).map(|c| steady_samples(&line, 0, c)).collect();
    let all_pairs = star_pairs.iter().chain(&line_pairs);
    let enough = all_pairs.clone().chain(&hops).all(|s| s.len() >= 80);
    let per_pair = all_pairs.clone().map(|s| worst(s)).fold(0.0, f64::max);
    let hop_max: Vec<f64> = hops.iter().map(|s| worst(s)).collect();
    let monotone = hop_max.windows(2).all(|w| w[0] <= w[1]);
    let ok = enough && per_pair <= bound && hop_max[2] <= 3.0 * TICK && monotone;
    verdict(
        ok,
        format!(
            "max parent-child |eps| = {:.2} us (<= 30.6); relay->hop 1/2/3 = {:.2}/{:.2}/{:.2} us (hop 3 <= {:.2})",
            per_pair * 1e6,
            hop_max[0] * 1e6,
            hop_max[1] * 1e6,
            hop_max[2] * 1e6,
            3.0 * TICK * 1e6
        ),
    )
}

fn relay_airtimes(r: &RadioParams) -> Airtimes {
    Airtimes {
        t_ack: time_on_air(2, r).unwrap().as_secs(),
        t_data: lorawan_time_on_air(24, r).unwrap().as_secs(),
        t_bcn: time_on_air(3, r).unwrap().as_secs(),
    }
}

/// Relay duty cycle over consecutive whole `T_app` windows after every node joined.
fn relay_duty(m0: usize) -> (f64, f64, f64) {
    let mut drifts = vec![0.0];
    drifts.extend(DRIFTS[1..].iter().cycle().take(m0));
    let mut sc = Scenario::star(&drifts);
    sc.frames = 200;
    let trace = run(&sc).unwrap();
    let k = u64::from(sc.k);
    let first = (trace.relay_frame_at(all_joined_at(&trace).unwrap()) / k + 2) * k;
    let t_app = app_period(sc.k, 90, sc.slot_seconds());
    let estimate = duty_cycle_estimate(m0 as u32, sc.k, 1, t_app, &relay_airtimes(&sc.radio));
    let mut worst_window: f64 = 0.0;
    let mut start = first;
    while start + k <= sc.frames {
        let (a, b) = (trace.relay_frame_start(start), trace.relay_frame_start(start + k));
        let d = measure_duty_cycle(&trace, sc.relay, a, b, Some(0));
        worst_window = worst_window.max((d - estimate).abs() / estimate);
        start += k;
    }
    let (a, b) = (trace.relay_frame_start(first), trace.relay_frame_start(start));
    (measure_duty_cycle(&trace, sc.relay, a, b, Some(0)), estimate, worst_window)
}

fn c4_duty_cycle() -> Verdict {
    let results: Vec<(f64, f64, f64)> = (1..=3).map(relay_duty).collect();
    let rel: Vec<f64> = results.iter().map(|(m, e, _)| (m - e).abs() / e).collect();
    let worst_window = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let ys: Vec<f64> = results.iter().map(|r| r.0).collect();
    // least-squares line through m0 = 1, 2, 3
    let slope = (ys[2] - ys[0]) / 2.0;
    let intercept = (ys[0] + ys[1] + ys[2]) / 3.0 - 2.0 * slope;
    let residual = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - (intercept + slope * (i as f64 + 1.0))).abs())
        .fold(0.0, f64::max);
    let ok = rel.iter().all(|r| *r <= 0.02) && worst_window <= 0.02 && residual < 0.01 * slope;
    verdict(
        ok,
        format!(
            "measured {:.4}/{:.4}/{:.4}% vs model {:.4}/{:.4}/{:.4}%, max rel err {:.3}% (worst single window {:.3}%), fit residual {:.2e} of slope",
            ys[0] * 100.0,
            ys[1] * 100.0,
            ys[2] * 100.0,
            results[0].1 * 100.0,
            results[1].1 * 100.0,
            results[2].1 * 100.0,
            rel.iter().copied().fold(0.0, f64::max) * 100.0,
            worst_window * 100.0,
            residual / slope
        ),
    )
}

fn leaf_power(profile: PowerProfile) -> (f64, f64) {
    let mut sc = Scenario::star(&[0.0, 10.0]);
    sc.frames = 60;
    sc.power = profile;
    sc.uplink_enabled = false;
    sc.admission_frames = Some(6);
    sc.timing.t_guard = min_guard(10.0, sc.frame_seconds());
    let trace = run(&sc).unwrap();
    let (a, b) = (trace.relay_frame_start(12), trace.relay_frame_start(sc.frames));
    let measured = measure_avg_power(&trace, NodeId(1), &profile, a, b);
    let t_bcn = time_on_air(3, &sc.radio).unwrap().as_secs();
    let model = mean_power(&profile, t_bcn, sc.slot_seconds(), 90, sc.k, 10.0);
    (measured, model)
}

fn c5_power() -> Verdict {
    let free_app = PowerProfile {
        p_app: PowerProfile::default().p_sleep,
        ..PowerProfile::default()
    };
    let runs = [leaf_power(free_app), leaf_power(PowerProfile::default())];
    let errs: Vec<f64> = runs.iter().map(|(m, p)| (m - p).abs() / p).collect();
    verdict(
        errs.iter().all(|e| *e <= 0.05),
        format!(
            "zero-cost app {:.4} vs {:.4} mW ({:.2}%), with app {:.4} vs {:.4} mW ({:.2}%)",
            runs[0].0 * 1e3,
            runs[0].1 * 1e3,
            errs[0] * 100.0,
            runs[1].0 * 1e3,
            runs[1].1 * 1e3,
            errs[1] * 100.0
        ),
    )
}

fn guard_scenario(guard: f64, frames: u64) -> (Scenario, SimulationTrace) {
    let mut sc = Scenario::star(&[0.0, 10.0]);
    sc.frames = frames;
    sc.timing.t_guard = guard;
    let trace = run(&sc).unwrap();
    (sc, trace)
}

fn c6_guard() -> Verdict {
    let tf = Scenario::star(&[0.0, 10.0]).frame_seconds();
    let g_min = min_guard(10.0, tf);
    let small = g_min / 12.0;
    let (_, t) = guard_scenario(small, 60);
    let child = NodeId(1);
    let joined = t.events_of(child, TraceEventKind::Joined).next().map(|e| e.time);
    let first_miss = t.events_of(child, TraceEventKind::BeaconMiss).next().map(|e| e.time);
    let desync = t.events_of(child, TraceEventKind::Desync).next().map(|e| e.time);
    let rejoin = desync.and_then(|d| t.events_of(child, TraceEventKind::Joined).find(|e| e.time > d).map(|e| e.time));
    let allowed = ((small / 2.0) / (10e-6 * tf)).ceil() as u64 + 1;
    let miss_frames = match (joined, first_miss) {
        (Some(j), Some(m)) => Some(t.relay_frame_at(m) - t.relay_frame_at(j)),
        _ => None,
    };
    let small_ok = miss_frames.is_some_and(|f| f <= allowed) && rejoin.is_some();

    let mut clean = Vec::new();
    for g in [g_min, 0.010] {
        let (_, t) = guard_scenario(g, 200);
        let joined = t.join_time(child).unwrap_or(f64::INFINITY);
        let misses = t.events_of(child, TraceEventKind::BeaconMiss).filter(|e| e.time > joined).count();
        clean.push((g, misses, joined.is_finite()));
    }
    let clean_ok = clean.iter().all(|(_, m, j)| *m == 0 && *j);
    verdict(
        small_ok && clean_ok,
        format!(
            "guard {:.3} ms: first miss after {} frame(s) (allowed {allowed}), desync {}, rejoin {}; guard {:.3} ms / {:.1} ms: {} / {} misses in 200 frames",
            small * 1e3,
            miss_frames.map_or("never".to_string(), |f| f.to_string()),
            desync.is_some(),
            rejoin.is_some(),
            clean[0].0 * 1e3,
            clean[1].0 * 1e3,
            clean[0].1,
            clean[1].1
        ),
    )
}

fn relay_queue(n: usize) -> Vec<usize> {
    let mut drifts = vec![0.0];
    drifts.extend(DRIFTS[1..].iter().cycle().take(n - 1));
    let mut sc = Scenario::star(&drifts);
    sc.frames = 80;
    let trace = run(&sc).unwrap();
    let start = trace.relay_frame_at(all_joined_at(&trace).unwrap()) + 1;
    trace
        .queues
        .iter()
        .filter(|q| q.node == sc.relay && q.frame >= start && q.frame < start + 50)
        .map(|q| q.uplink)
        .collect()
}

fn c7_capacity() -> Verdict {
    let over = relay_queue(5);
    let sampled: Vec<usize> = over.iter().step_by(5).copied().collect();
    let increasing = sampled.len() >= 10 && sampled.windows(2).all(|w| w[1] > w[0]);
    let fit = relay_queue(4);
    let bounded = fit.len() == 50 && fit.iter().all(|d| *d <= 4);
    verdict(
        increasing && bounded,
        format!(
            "n=5,k=4 relay queue every 5 frames {:?}; n=4,k=4 max depth {}",
            sampled,
            fit.iter().max().copied().unwrap_or(0)
        ),
    )
}

fn c8_kn() -> Verdict {
    let t_sl = 21_281.0 / 32_768.0;
    let periods = [app_period(1, 360, t_sl), app_period(2, 180, t_sl), app_period(4, 90, t_sl)];
    let invariant = periods.iter().all(|p| *p == periods[0]);

    let mut runner = TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let strategy = (
        1e-6f64..1e-3,
        1e-3f64..0.1,
        1e-3f64..0.2,
        0.0f64..0.1,
        0.0f64..5.0,
        1u32..8,
        1u32..40,
        0.0f64..40.0,
    );
    let property = runner.run(&strategy, |(p_s, p_rx, p_tx, p_app, tau, n, m, drift)| {
        let profile = PowerProfile {
            p_sleep: p_s,
            p_rx: p_rx.max(p_s),
            p_tx: p_tx.max(p_s),
            p_app: p_app.max(p_s),
            tau_app: tau,
        };
        prop_assume!(profile.p_rx + profile.p_tx > 2.0 * profile.p_sleep);
        let product = n * m;
        let best = (n..=product)
            .filter(|k| product % k == 0)
            .map(|k| (k, mean_power(&profile, 0.103424, t_sl, product / k, k, drift)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k);
        prop_assert_eq!(best, Some(n));
        Ok(())
    });
    verdict(
        invariant && property.is_ok(),
        format!(
            "T_app = {:.4} s for (1,360),(2,180),(4,90); k = n minimises P_tot over 256 random profiles: {}",
            periods[0],
            match &property {
                Ok(()) => "held".to_string(),
                Err(e) => e.to_string(),
            }
        ),
    )
}

fn c9_determinism() -> Verdict {
    let mut identical = true;
    let mut files = 0;
    for sc in [Scenario::star(&DRIFTS), Scenario::line(&DRIFTS)] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            export::write_all(&run(&sc).unwrap(), &sc.power, d.path()).unwrap();
        }
        for name in [export::RADIO_STATES_CSV, export::PACKETS_CSV, export::SYNC_CSV, export::SUMMARY_CSV] {
            let a = std::fs::read(dirs[0].path().join(name)).unwrap();
            let b = std::fs::read(dirs[1].path().join(name)).unwrap();
            identical &= a == b && !a.is_empty();
            files += 1;
        }
    }
    verdict(identical, format!("{files} CSV files compared byte for byte"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("airtime golden values", c1_airtime),
        ("frame timing", c2_frame_time),
        ("sync-error bound", c3_sync),
        ("duty cycle vs model", c4_duty_cycle),
        ("power model", c5_power),
        ("guard-time property", c6_guard),
        ("capacity property", c7_capacity),
        ("kN invariance and k-optimality", c8_kn),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("{} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! End-to-end acceptance checks against the calibrated configuration.
//!
//! Each criterion prints one `PASS` or `FAIL` line with the measured values.
//! Criteria listed in `KNOWN_UNATTAINABLE` are reported but do not fail the
//! run; every other failure makes the process exit nonzero.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uplink_qkd::calibration;
use uplink_qkd::decoy::{channel_model, decoy_bounds, ChannelObservables, ProtocolParams};
use uplink_qkd::link::{
    fading_equivalence_experiment, pass_profile, percentile_pass_elevation, PassProfile,
};
use uplink_qkd::pass::{
    key_per_pass, loss_grid, max_tolerable_loss, rate_at_loss, rate_vs_loss, WindowPolicy,
};
use uplink_qkd::photonics::block::{stability_run, BlockModel};
use uplink_qkd::photonics::{
    generate_pulse_train, simulate_detections, tally, DetectorConfig, PatternMode, PulseClass,
    SourceConfig, TimingWindow,
};
use uplink_qkd::sync::{
    align_timetags, bandwidth_estimate, clock_tags_through, detection_times, AlignConfig,
    ClockModel, DriftMode, DriftProfile, ReportingMode,
};
use uplink_qkd::window::{log_widths, ClosedFormModel};

/// Criteria that cannot all hold at once under one calibration; see the
/// guide's calibration chapter.
const KNOWN_UNATTAINABLE: &[u32] = &[4];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn model() -> ClosedFormModel {
    ClosedFormModel::from_calibration(&calibration::experimental())
}

fn within_factor(x: f64, target: f64, factor: f64) -> bool {
    x >= target / factor && x <= target * factor
}

fn within_rel(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cut = max_tolerable_loss(&model(), WindowPolicy::default(), 30.0, 70.0, 0.01);
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match cut {
        Ok(c) => (
            (55.0..=61.0).contains(&c) && secs < 60.0,
            format!("cutoff {c:.2} dB in {secs:.2} s"),
        ),
        Err(e) => (false, e.to_string()),
    };
    Outcome {
        id: 1,
        pass,
        detail,
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cal = calibration::experimental();
    let m = model();
    let (best, _) = m.optimal(30.0, &log_widths(20e-12, m.period(), 400));
    let block = BlockModel {
        params: cal.protocol,
        detector: cal.detector,
        source_jitter: cal.source.source_jitter,
        window: best.width,
    };
    let run = stability_run(
        &block,
        cal.detector.channel_transmittance(30.0),
        1000.0,
        1.0,
        7,
    );
    let secs = start.elapsed().as_secs_f64();
    let pass = within_rel(run.mean_secure_rate, 7560.0, 0.25)
        && within_rel(run.mean_qber, 0.0185, 0.25)
        && secs < 120.0;
    Outcome {
        id: 2,
        pass,
        detail: format!(
            "rate {:.0} bit/s (7560 +-25%), QBER {:.3}% (1.85% +-25%), {secs:.1} s",
            run.mean_secure_rate,
            100.0 * run.mean_qber
        ),
    }
}

fn criterion_3() -> Outcome {
    let p = rate_at_loss(&model(), WindowPolicy::default(), 57.0);
    let bps = p.rate * 76e6;
    Outcome {
        id: 3,
        pass: within_factor(bps, 2.0, 2.0),
        detail: format!("{bps:.2} bit/s at 57 dB (2 bit/s, factor 2)"),
    }
}

fn criterion_4() -> Outcome {
    let m = model();
    let widths = log_widths(20e-12, m.period(), 400);
    let opt = |l: f64| m.optimal(l, &widths).0.width;
    let (w40, w54) = (opt(40.0), opt(54.0));
    let trend: Vec<f64> = (30..=57).map(|l| opt(l as f64)).collect();
    let monotone = trend.windows(2).all(|w| w[1] <= w[0]);
    let (first, last) = (trend[0], trend[trend.len() - 1]);
    let pass = within_factor(w40, 1.2e-9, 2.0)
        && within_factor(w54, 0.4e-9, 2.0)
        && monotone
        && within_factor(first, 2e-9, 2.0)
        && within_factor(last, 40e-12, 2.0);
    Outcome {
        id: 4,
        pass,
        detail: format!(
            "40 dB {:.2} ns (1.2), 54 dB {:.2} ns (0.4), monotone {monotone}, 30 dB {:.2} ns (~2), 57 dB {:.0} ps (~40)",
            w40 * 1e9,
            w54 * 1e9,
            first * 1e9,
            last * 1e12
        ),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (i, mu) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        for (j, eta) in [1e-4, 1e-3, 1e-2].into_iter().enumerate() {
            for (k, y0) in [0.0, 1e-5, 1e-4].into_iter().enumerate() {
                let seed = (100 + 9 * i + 3 * j + k) as u64;
                let (e_d, e_0) = (0.02, 0.5);
                let protocol = ProtocolParams {
                    mu,
                    nu: mu / 2.0,
                    p_signal: 1.0,
                    p_decoy: 0.0,
                    p_vacuum: 0.0,
                    e_detector: e_d,
                    e_zero: e_0,
                    ..ProtocolParams::default()
                };
                let period = 1.0 / protocol.clock_rate;
                let source = SourceConfig {
                    protocol,
                    pattern_mode: PatternMode::SeededRandom,
                    source_jitter: 50e-12,
                };
                let det = DetectorConfig {
                    efficiency: 1.0,
                    dark_rate: -(-y0 as f64).ln_1p() / period,
                    background_rate: 0.0,
                    jitter_sigma: 30e-12,
                    dead_time: 0.0,
                    tick_resolution: 156e-12,
                };
                let n = 10_000_000u64;
                let schedule = generate_pulse_train(&source, n, seed);
                let sim = simulate_detections(&schedule, eta, &det, schedule.span(), seed);
                let t = tally(
                    &sim.stream,
                    &schedule,
                    TimingWindow::full_period(period),
                    det.tick_resolution,
                );
                let expect = channel_model(mu, eta, y0, e_d, e_0).unwrap();
                let (q, e) = (t.gain(PulseClass::Signal), t.qber(PulseClass::Signal));
                let sq = (expect.gain * (1.0 - expect.gain) / n as f64).sqrt();
                let detected = t.detected[0].max(1) as f64;
                let se = (expect.qber * (1.0 - expect.qber) / detected).sqrt();
                worst = worst
                    .max((q - expect.gain).abs() / sq)
                    .max((e - expect.qber).abs() / se);
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 5,
        pass: worst < 5.0 && secs < 300.0,
        detail: format!("{cases} grid points, worst deviation {worst:.2} sigma, {secs:.1} s"),
    }
}

/// Yield and error of the `n`-photon component of the model channel.
fn photon_number_terms(n: u32, eta: f64, y0: f64, e_d: f64, e_0: f64) -> (f64, f64) {
    let signal = 1.0 - (1.0 - eta).powi(n as i32);
    let y = y0 + signal;
    let err = e_0 * y0 + e_d * signal;
    (y, err)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let trials = 1000;
    for _ in 0..trials {
        let mu: f64 = rng.random_range(0.1..=1.0);
        let nu: f64 = mu * rng.random_range(0.01..0.99);
        let eta: f64 = 10f64.powf(rng.random_range(-6.0..=0.0));
        let y0: f64 = rng.random_range(0.0..=1e-3);
        let e_d: f64 = rng.random_range(0.0..=0.1);
        let e_0 = 0.5;
        let params = ProtocolParams {
            mu,
            nu,
            e_detector: e_d,
            e_zero: e_0,
            ..ProtocolParams::default()
        };
        // gains and error rates summed over photon number
        let gain = |m: f64| {
            let (mut q, mut qe, mut pn) = (0.0, 0.0, (-m).exp());
            for n in 0..200u32 {
                if n > 0 {
                    pn *= m / n as f64;
                }
                let (y, err) = photon_number_terms(n, eta, y0, e_d, e_0);
                q += pn * y;
                qe += pn * err;
            }
            (q, qe / q)
        };
        let (q_mu, e_mu) = gain(mu);
        let (q_nu, e_nu) = gain(nu);
        let obs = ChannelObservables {
            q_mu,
            q_nu,
            e_mu,
            e_nu,
            y_zero: y0,
            n_mu: 1.0,
            n_nu: 1.0,
        };
        let b = decoy_bounds(&params, &obs).unwrap();
        let (y1, err1) = photon_number_terms(1, eta, y0, e_d, e_0);
        let e1 = err1 / y1;
        if b.y1_lower > y1 + 1e-12 || b.e1_upper < e1 - 1e-12 {
            violations += 1;
        }
    }
    Outcome {
        id: 6,
        pass: violations == 0,
        detail: format!("{violations} violations in {trials} random configurations"),
    }
}

fn criterion_7() -> Outcome {
    let period = 13e-9;
    let c = ClockModel {
        nominal_period: period,
        fractional_error: 1e-15 / period,
        drift_mode: DriftMode::Linear,
        divide_ratio: 1,
        initial_offset: 0.0,
        segment: 1.0,
    };
    let offset = DriftProfile::new(&c, 1.0, 0).offset(1.0);
    let arithmetic = within_rel(offset, 76.9e-9, 0.01);

    let mut cal = calibration::experimental();
    cal.protocol.clock_rate = 1e9;
    cal.protocol.mu = 0.5;
    cal.source.protocol = cal.protocol;
    let duration = 5.0;
    let tick = cal.detector.tick_resolution;
    let n = (duration * cal.protocol.clock_rate) as u64;
    let schedule = generate_pulse_train(&cal.source, n, 77);
    let sim = simulate_detections(
        &schedule,
        cal.detector.channel_transmittance(57.0),
        &cal.detector,
        duration,
        77,
    );
    let clock = ClockModel {
        nominal_period: 1e-9,
        fractional_error: 1e-15 / 1e-9,
        drift_mode: DriftMode::Linear,
        divide_ratio: 1000,
        initial_offset: 0.0,
        segment: 1.0,
    };
    let profile = DriftProfile::new(&clock, duration, 77);
    let bob = profile.apply(&sim.stream, tick);
    let alice = clock_tags_through(&DriftProfile::identity(), &clock, duration, tick);
    let signals = sim.stream.iter().filter(|t| t.truth.is_signal()).count() as f64 / duration;
    let expected: Vec<Option<u64>> = sim
        .stream
        .iter()
        .zip(&sim.origins)
        .map(|(t, o)| o.filter(|_| t.truth.is_signal()).map(|_| t.tick))
        .collect();
    let aligned = align_timetags(
        &detection_times(&bob),
        &detection_times(&alice),
        clock.divide_ratio,
        clock.nominal_period,
        tick,
        |_| 0.0,
        &AlignConfig::default(),
    );
    let (matched, spread) = match &aligned {
        Ok(r) => {
            let mut r = r.clone();
            r.score(&expected);
            (
                r.matched_fraction(&expected),
                r.signal_spread.unwrap_or(f64::NAN),
            )
        }
        Err(_) => (0.0, f64::NAN),
    };
    let jitter = cal.source.source_jitter.hypot(cal.detector.jitter_sigma);
    Outcome {
        id: 7,
        pass: arithmetic && matched >= 0.99 && spread <= 2.0 * jitter,
        detail: format!(
            "offset {:.2} ns after 1 s (76.9 +-1%); {signals:.0} signal/s, matched {matched:.4}, spread {:.0} ps{}",
            offset * 1e9,
            spread * 1e12,
            aligned.err().map_or(String::new(), |e| format!(", {e}"))
        ),
    }
}

fn criterion_8() -> Outcome {
    let gated = bandwidth_estimate(50.0, 1e9, ReportingMode::Gated, 0.5, 0.0);
    let timetag = bandwidth_estimate(50.0, 1e9, ReportingMode::Timetag, 0.5, 0.0);
    Outcome {
        id: 8,
        pass: gated == 1e9 && (timetag - 5000.0).abs() < 1e-6,
        detail: format!("gated {gated:e}/s, timetag {timetag:.3}/s"),
    }
}

fn criterion_9() -> Outcome {
    let cal = calibration::experimental();
    let m = model();
    let curve = rate_vs_loss(
        &m,
        WindowPolicy::default(),
        &loss_grid(20.0, 80.0, 0.25).unwrap(),
    )
    .unwrap();
    let el = percentile_pass_elevation(&cal.link, 80.0);
    let profile = pass_profile(el, &cal.link, 1.0).unwrap();
    let total = key_per_pass(&profile, &curve).total_bits;
    let flat = PassProfile::constant(40.0, 300.0, 1.0);
    let flat_total = key_per_pass(&flat, &curve).total_bits;
    let exact = curve.rate_bps_at(40.0) * 300.0;
    let flat_ok = (flat_total - exact).abs() <= 1e-9 * exact;
    Outcome {
        id: 9,
        pass: within_factor(total, 5.7e4, 2.0) && flat_ok,
        detail: format!(
            "pass at {el:.1} deg max elevation: {total:.3e} bits (5.7e4, factor 2); constant profile {flat_total:.6e} vs {exact:.6e}"
        ),
    }
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let c = fading_equivalence_experiment(&model(), 40.0, 1.0, 1_000_000_000_000, 0.01, 10);
    let secs = start.elapsed().as_secs_f64();
    match c {
        Ok(c) => Outcome {
            id: 10,
            pass: c.relative_difference <= 0.02,
            detail: format!(
                "static {:.2} bit/s, fading {:.2} bit/s, difference {:.2}% over {} blocks, {secs:.1} s",
                c.static_rate,
                c.fading_rate,
                100.0 * c.relative_difference,
                c.blocks
            ),
        },
        Err(e) => Outcome { id: 10, pass: false, detail: e.to_string() },
    }
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 10] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let mut unexpected = 0;
    for f in criteria {
        let o = f();
        let known = KNOWN_UNATTAINABLE.contains(&o.id);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {:>2}: {tag} - {}", o.id, o.detail);
        if !o.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    }
}

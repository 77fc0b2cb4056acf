use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;

use super::tally::{PhotonNumberTally, TallyCounts};
use super::timetag::{Timetag, Truth};
use super::{combined_jitter, DetectorConfig, PulseClass, PulseSchedule};
use crate::decoy::one_minus_exp_neg;
use crate::rng::{domain, substream};

/// Pulses per random-number block. Randomness is keyed to blocks, so any
/// grouping of blocks into work segments gives identical output.
pub const BLOCK_PULSES: u64 = 1 << 16;

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    /// Detection events after dead-time filtering, sorted by tick.
    pub stream: Vec<Timetag>,
    /// Emitting pulse of each event in `stream`; `None` for dark/background.
    pub origins: Vec<Option<u64>>,
    /// Ground-truth per-class tallies of pulse-originated detections.
    pub tallies: TallyCounts,
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    time: f64,
    channel: u8,
    truth: Truth,
    origin: Option<u64>,
    error: bool,
    photons: u32,
}

struct BlockOutput {
    events: Vec<RawEvent>,
    photon_numbers: Option<PhotonNumberTally>,
}

/// Event-level simulation of `schedule` through a channel of transmittance
/// `eta` (detector efficiency applied on top), plus dark and background
/// counts over `[0, duration)`.
pub fn simulate_detections(
    schedule: &PulseSchedule,
    eta: f64,
    det: &DetectorConfig,
    duration: f64,
    seed: u64,
) -> SimulationOutput {
    simulate_detections_segmented(
        schedule,
        eta,
        det,
        duration,
        seed,
        rayon::current_num_threads(),
        false,
    )
}

/// As [`simulate_detections`], with explicit work partitioning and optional
/// per-photon-number bookkeeping.
///
/// With `photon_numbers` set, every pulse has its emitted photon number drawn
/// explicitly (cost linear in pulses, not detections). That path consumes
/// randomness differently from the thinned default, so the two modes give
/// statistically equivalent but not identical streams.
pub fn simulate_detections_segmented(
    schedule: &PulseSchedule,
    eta: f64,
    det: &DetectorConfig,
    duration: f64,
    seed: u64,
    segments: usize,
    photon_numbers: bool,
) -> SimulationOutput {
    assert!((0.0..=1.0).contains(&eta), "eta must lie in [0, 1]");
    let block_time = BLOCK_PULSES as f64 * schedule.period();
    let horizon = schedule.span().max(duration.max(0.0));
    let n_blocks = (horizon / block_time).ceil().max(1.0) as u64;
    let segments = segments.clamp(1, n_blocks as usize) as u64;
    let per_segment = n_blocks.div_ceil(segments);

    let blocks: Vec<BlockOutput> = (0..segments)
        .into_par_iter()
        .flat_map_iter(|s| {
            let lo = s * per_segment;
            let hi = ((s + 1) * per_segment).min(n_blocks);
            (lo..hi)
                .map(|b| simulate_block(schedule, eta, det, duration, seed, b, photon_numbers))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut photon_tally = photon_numbers.then(PhotonNumberTally::default);
    let mut events: Vec<RawEvent> = Vec::with_capacity(blocks.iter().map(|b| b.events.len()).sum());
    for b in blocks {
        events.extend(b.events);
        if let (Some(total), Some(part)) = (photon_tally.as_mut(), b.photon_numbers) {
            total.merge(&part);
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.channel.cmp(&b.channel)));

    let mut last_click = [f64::NEG_INFINITY; 256];
    let mut tallies = TallyCounts {
        sent: schedule.class_counts(),
        ..TallyCounts::default()
    };
    let mut stream = Vec::with_capacity(events.len());
    let mut origins = Vec::with_capacity(events.len());
    for ev in events {
        let last = &mut last_click[ev.channel as usize];
        if ev.time - *last < det.dead_time {
            continue;
        }
        *last = ev.time;
        if let Truth::Pulse(class) = ev.truth {
            tallies.detected[class.index()] += 1;
            tallies.errors[class.index()] += ev.error as u64;
            if let Some(pt) = photon_tally.as_mut() {
                pt.record_detection(class, ev.photons, ev.error);
            }
        }
        stream.push(Timetag {
            tick: (ev.time / det.tick_resolution).round().max(0.0) as u64,
            channel: ev.channel,
            truth: ev.truth,
        });
        origins.push(ev.origin);
    }
    tallies.photon_numbers = photon_tally;
    SimulationOutput {
        stream,
        origins,
        tallies,
    }
}

fn simulate_block(
    schedule: &PulseSchedule,
    eta: f64,
    det: &DetectorConfig,
    duration: f64,
    seed: u64,
    block: u64,
    photon_numbers: bool,
) -> BlockOutput {
    let mut events = Vec::new();
    let start = block * BLOCK_PULSES;
    let end = ((block + 1) * BLOCK_PULSES).min(schedule.len());
    let jitter = Normal::new(
        0.0,
        combined_jitter(schedule.source_jitter(), det.jitter_sigma),
    )
    .expect("jitter is finite and non-negative");
    let scale = eta * det.efficiency;

    let mut rng = substream(seed, domain::PHOTONS + block);
    let mut tally = photon_numbers.then(PhotonNumberTally::default);
    if start < end {
        if let Some(t) = tally.as_mut() {
            explicit_photons(
                schedule,
                scale,
                start,
                end,
                &jitter,
                &mut rng,
                t,
                &mut events,
            );
        } else {
            thinned_photons(schedule, scale, start, end, &jitter, &mut rng, &mut events);
        }
    }

    let block_time = BLOCK_PULSES as f64 * schedule.period();
    let t0 = block as f64 * block_time;
    let t1 = ((block + 1) as f64 * block_time).min(duration);
    let rate = det.noise_rate();
    if t1 > t0 && rate > 0.0 {
        let mut rng = substream(seed, domain::NOISE + block);
        let count = Poisson::new(rate * (t1 - t0))
            .expect("positive mean")
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let time = t0 + rng.random::<f64>() * (t1 - t0);
            let truth = if rng.random::<f64>() * rate < det.dark_rate {
                Truth::Dark
            } else {
                Truth::Background
            };
            let channel = rng.random::<bool>() as u8;
            events.push(RawEvent {
                time,
                channel,
                truth,
                origin: None,
                error: false,
                photons: 0,
            });
        }
    }
    BlockOutput {
        events,
        photon_numbers: tally,
    }
}

/// Fast path: detected photons per pulse ~ Poisson(m·scale). Candidate pulses
/// are visited by geometric skips at the largest class probability and then
/// thinned to the actual class, so cost scales with detections.
#[allow(clippy::too_many_arguments)]
fn thinned_photons(
    schedule: &PulseSchedule,
    scale: f64,
    start: u64,
    end: u64,
    jitter: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<RawEvent>,
) {
    let p_max = one_minus_exp_neg(schedule.max_mean_photon_number() * scale);
    if p_max <= 0.0 {
        return;
    }
    let skip = Geometric::new(p_max).expect("probability in (0, 1]");
    let mut i = start;
    loop {
        i = i.saturating_add(skip.sample(rng));
        if i >= end {
            break;
        }
        let class = schedule.class_of(i);
        let lambda = schedule.mean_photon_number_of(class) * scale;
        let p = one_minus_exp_neg(lambda);
        if rng.random::<f64>() * p_max < p {
            let k = truncated_poisson(lambda, rng);
            events.push(detection(schedule, i, class, k, k, jitter, rng));
        }
        i += 1;
    }
}

/// Oracle path: emitted photon number per pulse drawn explicitly, each photon
/// surviving independently.
#[allow(clippy::too_many_arguments)]
fn explicit_photons(
    schedule: &PulseSchedule,
    scale: f64,
    start: u64,
    end: u64,
    jitter: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    tally: &mut PhotonNumberTally,
    events: &mut Vec<RawEvent>,
) {
    for i in start..end {
        let class = schedule.class_of(i);
        let m = schedule.mean_photon_number_of(class);
        let emitted = if m > 0.0 {
            Poisson::new(m).expect("positive mean").sample(rng) as u64
        } else {
            0
        };
        tally.record_sent(class, emitted as u32);
        if emitted == 0 || scale <= 0.0 {
            continue;
        }
        let survived = Binomial::new(emitted, scale.min(1.0))
            .expect("valid binomial")
            .sample(rng);
        if survived > 0 {
            events.push(detection(
                schedule,
                i,
                class,
                emitted as u32,
                survived as u32,
                jitter,
                rng,
            ));
        }
    }
}

fn detection(
    schedule: &PulseSchedule,
    index: u64,
    class: PulseClass,
    emitted: u32,
    survived: u32,
    jitter: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> RawEvent {
    let alice = schedule.bit_of(index);
    let e_d = schedule.e_detector();
    let flipped = (0..survived).filter(|_| rng.random::<f64>() < e_d).count() as u32;
    let bob = if flipped == 0 {
        alice
    } else if flipped == survived {
        alice ^ 1
    } else {
        // Both detectors fired: squash to a random bit.
        rng.random::<bool>() as u8
    };
    RawEvent {
        time: schedule.emission_time(index) + jitter.sample(rng),
        channel: bob,
        truth: Truth::Pulse(class),
        origin: Some(index),
        error: bob != alice,
        photons: emitted,
    }
}

/// Poisson(lambda) conditioned on at least one event, by inversion.
fn truncated_poisson(lambda: f64, rng: &mut ChaCha8Rng) -> u32 {
    let target = rng.random::<f64>() * one_minus_exp_neg(lambda);
    let mut term = (-lambda).exp();
    let mut cdf = 0.0;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= lambda / k as f64;
        cdf += term;
        if cdf >= target || k >= 1000 || term == 0.0 {
            return k;
        }
    }
}

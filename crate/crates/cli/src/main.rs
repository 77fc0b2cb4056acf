use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use uplink_qkd::config::{ConfigError, RunConfig};
use uplink_qkd::link::{fading_equivalence_experiment, pass_profile, percentile_pass_elevation};
use uplink_qkd::pass::{
    key_per_pass, loss_grid, max_tolerable_loss, pass_statistics, rate_vs_loss, WindowPolicy,
};
use uplink_qkd::photonics::block::{stability_run, BlockModel};
use uplink_qkd::photonics::{
    generate_pulse_train, simulate_detections, tally, PulseClass, TimingWindow,
};
use uplink_qkd::sync::{
    align_timetags, bandwidth_estimate, clock_tags_through, detection_times, DriftProfile,
    ReportingMode,
};
use uplink_qkd::window::{
    default_widths, fold_histogram, log_widths, peak_centroid, sweep_stream, ClosedFormModel,
};
use uplink_qkd::Error;

/// Environment variable naming a directory whose `default.conf` is loaded
/// when `--config` is not given.
const CONFIG_DIR_ENV: &str = "QKD_UPLINK_CONFIG_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "uplink-qkd",
    version,
    about = "Decoy-state QKD uplink experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, later wins.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Start from the idealised simulation calibration.
    #[arg(long, global = true)]
    simulation: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Secure key rate against total loss.
    Ratecurve {
        #[arg(long, default_value_t = 30.0)]
        loss_min: f64,
        #[arg(long, default_value_t = 62.0)]
        loss_max: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Fixed window width in ns instead of the per-loss optimum.
        #[arg(long)]
        window_ns: Option<f64>,
        /// Also locate the zero-rate loss inside [loss-min, loss-max].
        #[arg(long)]
        cutoff: bool,
    },
    /// Rate and QBER against acceptance-window width at one loss.
    WindowSweep {
        #[arg(long, default_value_t = 40.0)]
        loss_db: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Sweep a simulated stream of this many seconds instead of the
        /// closed-form model.
        #[arg(long)]
        simulate: Option<f64>,
    },
    /// Simulate, drift and realign a time-tag stream.
    SyncDemo {
        #[arg(long, default_value_t = 35.0)]
        loss_db: f64,
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
        #[arg(long, value_enum, default_value_t = Side::Bob)]
        drift_side: Side,
    },
    /// Loss profile and key of one pass.
    Pass {
        /// Maximum elevation in degrees; overrides --percentile.
        #[arg(long)]
        max_elevation: Option<f64>,
        /// Pass ranked at this percentile of the synthetic population.
        #[arg(long, default_value_t = 80.0)]
        percentile: f64,
        #[arg(long, default_value_t = 1.0)]
        time_step: f64,
        /// Passes in the population statistics.
        #[arg(long, default_value_t = 1000)]
        population: usize,
    },
    /// Event-level simulation at one loss with per-class tallies.
    Montecarlo {
        #[arg(long, default_value_t = 40.0)]
        loss_db: f64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Window width in ns; default is the closed-form optimum.
        #[arg(long)]
        window_ns: Option<f64>,
        /// Also write every detection to timetags.csv.
        #[arg(long)]
        timetags: bool,
    },
    /// Pooled key rate with and without log-normal fading.
    FadingTest {
        #[arg(long, default_value_t = 52.0)]
        loss_db: f64,
        #[arg(long, default_value_t = 0.5)]
        sigma_ln: f64,
        #[arg(long, default_value_t = 1e10)]
        pulses: f64,
    },
    /// Key rate and QBER over a long run at fixed loss.
    Stability {
        #[arg(long, default_value_t = 30.0)]
        loss_db: f64,
        #[arg(long, default_value_t = 1000.0)]
        duration: f64,
        #[arg(long, default_value_t = 1.0)]
        interval: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Side {
    Bob,
    Alice,
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = if common.simulation {
        RunConfig::from_calibration(uplink_qkd::calibration::simulation())
    } else {
        RunConfig::default()
    };
    let file = common.config.clone().or_else(|| {
        std::env::var_os(CONFIG_DIR_ENV)
            .map(|d| Path::new(&d).join("default.conf"))
            .filter(|p| p.is_file())
    });
    if let Some(path) = file {
        let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Invalid {
            key: "config".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        cfg.apply_str(&text)?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: kv.clone(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
}

impl Output<'_> {
    /// Create `name` in the output directory with the config header written.
    fn file(&self, name: &str) -> Result<BufWriter<File>, Error> {
        std::fs::create_dir_all(&self.cfg.out_dir)?;
        let mut w = BufWriter::new(File::create(self.cfg.out_dir.join(name))?);
        write!(w, "# command = {}\n{}", self.command, self.cfg.to_header())?;
        Ok(w)
    }

    fn summary(&self, mut body: Value) -> Result<(), Error> {
        std::fs::create_dir_all(&self.cfg.out_dir)?;
        body["command"] = json!(self.command);
        body["seed"] = json!(self.cfg.seed);
        body["config_hash"] = json!(format!("{:016x}", self.cfg.hash()));
        let mut w = BufWriter::new(File::create(self.cfg.out_dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut w, &body).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        println!(
            "{}",
            serde_json::to_string(&body).map_err(std::io::Error::from)?
        );
        Ok(())
    }
}

fn model(cfg: &RunConfig) -> ClosedFormModel {
    ClosedFormModel::from_calibration(&cfg.calibration)
}

fn policy(window_ns: Option<f64>) -> WindowPolicy {
    window_ns.map_or_else(WindowPolicy::default, |w| WindowPolicy::Fixed(w * 1e-9))
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli.common)?;
    let cal = &cfg.calibration;
    match cli.command {
        Command::Ratecurve {
            loss_min,
            loss_max,
            step,
            window_ns,
            cutoff,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "ratecurve",
            };
            let m = model(&cfg);
            let curve = rate_vs_loss(&m, policy(window_ns), &loss_grid(loss_min, loss_max, step)?)?;
            let mut w = out.file("ratecurve.csv")?;
            curve.write_csv(&mut w)?;
            w.flush()?;
            let cut = if cutoff {
                Some(max_tolerable_loss(
                    &m,
                    policy(window_ns),
                    loss_min,
                    loss_max,
                    0.01,
                )?)
            } else {
                None
            };
            let last_positive = curve
                .points
                .iter()
                .rev()
                .find(|p| p.rate > 0.0)
                .map(|p| p.loss_db);
            out.summary(json!({
                "points": curve.points.len(),
                "last_positive_loss_db": last_positive,
                "cutoff_loss_db": cut,
            }))
        }
        Command::WindowSweep {
            loss_db,
            points,
            simulate,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "window-sweep",
            };
            let m = model(&cfg);
            let widths = if points == 50 {
                default_widths(m.period())
            } else {
                log_widths(20e-12, m.period(), points.max(2))
            };
            let sweep = match simulate {
                None => m.sweep(loss_db, &widths),
                Some(duration) => {
                    let n = (duration * cal.protocol.clock_rate).round() as u64;
                    let schedule = generate_pulse_train(&cal.source, n, cfg.seed);
                    let eta = cal.detector.channel_transmittance(loss_db);
                    let sim =
                        simulate_detections(&schedule, eta, &cal.detector, duration, cfg.seed);
                    sweep_stream(
                        &sim.stream,
                        &schedule,
                        cal.detector.tick_resolution,
                        &widths,
                        &cal.protocol,
                    )
                }
            };
            let mut w = out.file("window_sweep.csv")?;
            sweep.write_csv(&mut w, cfg.hash())?;
            w.flush()?;
            let best = sweep.best();
            out.summary(json!({
                "loss_db": loss_db,
                "simulated": simulate.is_some(),
                "optimal_width_ns": best.width * 1e9,
                "optimal_secure_rate_bps": best.secure_rate,
                "optimal_qber": best.qber,
                "degenerate": sweep.degenerate,
            }))
        }
        Command::SyncDemo {
            loss_db,
            duration,
            drift_side,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "sync-demo",
            };
            let tick = cal.detector.tick_resolution;
            let n = (duration * cal.protocol.clock_rate).round() as u64;
            let schedule = generate_pulse_train(&cal.source, n, cfg.seed);
            let eta = cal.detector.channel_transmittance(loss_db);
            let sim = simulate_detections(&schedule, eta, &cal.detector, duration, cfg.seed);
            let profile = DriftProfile::new(&cfg.clock, duration, cfg.seed);
            let (bob, alice) = match drift_side {
                Side::Bob => (
                    profile.apply(&sim.stream, tick),
                    clock_tags_through(&DriftProfile::identity(), &cfg.clock, duration, tick),
                ),
                Side::Alice => (
                    sim.stream.clone(),
                    clock_tags_through(&profile, &cfg.clock, duration, tick),
                ),
            };

            let mut w = out.file("drift.csv")?;
            writeln!(w, "time_s,offset_ns")?;
            let steps = (duration / cfg.fold_section).ceil() as usize;
            for i in 0..=steps {
                let t = (i as f64 * cfg.fold_section).min(duration);
                writeln!(w, "{},{}", t, profile.offset(t) * 1e9)?;
            }
            w.flush()?;

            let mut res = align_timetags(
                &detection_times(&bob),
                &detection_times(&alice),
                cfg.clock.divide_ratio,
                cfg.clock.nominal_period,
                tick,
                |_| 0.0,
                &cfg.align_config(),
            )?;
            let expected: Vec<Option<u64>> = sim
                .stream
                .iter()
                .zip(&sim.origins)
                .map(|(t, o)| o.map(|_| t.tick))
                .collect();
            res.score(&expected);
            let mut w = out.file("sections.csv")?;
            res.write_csv(&mut w)?;
            w.flush()?;

            let corrected: Vec<_> = sim
                .stream
                .iter()
                .zip(&res.corrected)
                .map(|(t, &c)| uplink_qkd::photonics::Timetag { tick: c, ..*t })
                .collect();
            let bin = tick;
            let folded = fold_histogram(
                &corrected,
                tick,
                cfg.clock.nominal_period,
                bin,
                cfg.fold_section,
            );
            let mut w = out.file("folded.csv")?;
            let bins = folded.first().map_or(0, |h| h.counts.len());
            writeln!(
                w,
                "phase_ns,{}",
                (0..folded.len())
                    .map(|s| format!("s{s}"))
                    .collect::<Vec<_>>()
                    .join(",")
            )?;
            for b in 0..bins {
                let row: Vec<String> = folded.iter().map(|h| h.counts[b].to_string()).collect();
                writeln!(
                    w,
                    "{},{}",
                    (b as f64 + 0.5) * cfg.clock.nominal_period / bins as f64 * 1e9,
                    row.join(",")
                )?;
            }
            w.flush()?;

            let noise = cal.detector.dark_rate + cal.detector.background_rate;
            out.summary(json!({
                "loss_db": loss_db,
                "duration_s": duration,
                "drift_side": format!("{drift_side:?}").to_lowercase(),
                "detections": sim.stream.len(),
                "sections": res.sections.len(),
                "matched_fraction": res.matched_fraction(&expected),
                "residual_spread_ps": res.residual_spread * 1e12,
                "peak_fraction": res.peak_fraction,
                "drift_excursion_ns": profile.excursion() * 1e9,
                "peak_offset_ns": peak_centroid(&corrected, tick, cfg.clock.nominal_period) * 1e9,
                "gated_messages_per_s":
                    bandwidth_estimate(loss_db, cal.protocol.clock_rate, ReportingMode::Gated, cal.protocol.mu, noise),
                "timetag_messages_per_s":
                    bandwidth_estimate(loss_db, cal.protocol.clock_rate, ReportingMode::Timetag, cal.protocol.mu, noise),
            }))
        }
        Command::Pass {
            max_elevation,
            percentile,
            time_step,
            population,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "pass",
            };
            let el =
                max_elevation.unwrap_or_else(|| percentile_pass_elevation(&cal.link, percentile));
            let profile = pass_profile(el, &cal.link, time_step)?;
            let lo = (profile.min_loss() - 1.0).floor();
            let hi = profile
                .samples
                .iter()
                .map(|s| s.loss_db)
                .fold(lo + 1.0, f64::max)
                .ceil();
            let curve = rate_vs_loss(
                &model(&cfg),
                WindowPolicy::default(),
                &loss_grid(lo, hi, 0.25)?,
            )?;
            let key = key_per_pass(&profile, &curve);
            let mut w = out.file("pass_profile.csv")?;
            profile.write_csv(&mut w)?;
            w.flush()?;
            let mut w = out.file("pass_key.csv")?;
            key.write_csv(&mut w)?;
            w.flush()?;
            let population_curve = rate_vs_loss(
                &model(&cfg),
                WindowPolicy::default(),
                &loss_grid(20.0, 80.0, 0.25)?,
            )?;
            let stats = pass_statistics(&cal.link, &population_curve, population, 5.0)?;
            out.summary(json!({
                "max_elevation_deg": el,
                "duration_s": profile.duration(),
                "min_loss_db": profile.min_loss(),
                "total_bits": key.total_bits,
                "population": stats.passes,
                "usable_fraction": stats.usable_fraction,
                "mean_usable_loss_db": stats.mean_usable_loss,
            }))
        }
        Command::Montecarlo {
            loss_db,
            duration,
            window_ns,
            timetags,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "montecarlo",
            };
            let m = model(&cfg);
            let width = match window_ns {
                Some(w) => w * 1e-9,
                None => {
                    m.optimal(loss_db, &log_widths(20e-12, m.period(), 400))
                        .0
                        .width
                }
            };
            let n = (duration * cal.protocol.clock_rate).round() as u64;
            let schedule = generate_pulse_train(&cal.source, n, cfg.seed);
            let eta = cal.detector.channel_transmittance(loss_db);
            let sim = simulate_detections(&schedule, eta, &cal.detector, duration, cfg.seed);
            let tick = cal.detector.tick_resolution;
            let center = peak_centroid(&sim.stream, tick, schedule.period());
            let t = tally(&sim.stream, &schedule, TimingWindow { center, width }, tick);
            let mut w = out.file("montecarlo.csv")?;
            writeln!(w, "class,sent,detected,errors,gain,qber")?;
            for c in PulseClass::ALL {
                let i = c.index();
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    format!("{c:?}").to_lowercase(),
                    t.sent[i],
                    t.detected[i],
                    t.errors[i],
                    t.gain(c),
                    t.qber(c)
                )?;
            }
            w.flush()?;
            if timetags {
                let mut w = out.file("timetags.csv")?;
                writeln!(w, "tick,channel,truth")?;
                for tag in &sim.stream {
                    writeln!(w, "{},{},{}", tag.tick, tag.channel, tag.truth.code())?;
                }
                w.flush()?;
            }
            let rate = t.key_rate(&cal.protocol).unwrap_or(0.0);
            out.summary(json!({
                "loss_db": loss_db,
                "pulses": n,
                "window_ns": width * 1e9,
                "detections": sim.stream.len(),
                "gap_slots": t.gap_slots,
                "gap_detections": t.gap_detections,
                "y_zero": t.y_zero(),
                "qber": t.qber(PulseClass::Signal),
                "secure_rate_bps": rate * cal.protocol.clock_rate,
            }))
        }
        Command::FadingTest {
            loss_db,
            sigma_ln,
            pulses,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "fading-test",
            };
            let c = fading_equivalence_experiment(
                &model(&cfg),
                loss_db,
                sigma_ln,
                pulses.round() as u64,
                cfg.fading_block,
                cfg.seed,
            )?;
            let mut w = out.file("fading.csv")?;
            writeln!(w, "mode,secure_rate_bps")?;
            writeln!(w, "static,{}", c.static_rate)?;
            writeln!(w, "fading,{}", c.fading_rate)?;
            w.flush()?;
            out.summary(json!({
                "loss_db": loss_db,
                "sigma_ln": sigma_ln,
                "pulses": pulses,
                "blocks": c.blocks,
                "window_ns": c.window * 1e9,
                "static_rate_bps": c.static_rate,
                "fading_rate_bps": c.fading_rate,
                "relative_difference": c.relative_difference,
            }))
        }
        Command::Stability {
            loss_db,
            duration,
            interval,
        } => {
            let out = Output {
                cfg: &cfg,
                command: "stability",
            };
            let m = model(&cfg);
            let (best, _) = m.optimal(loss_db, &log_widths(20e-12, m.period(), 400));
            let block = BlockModel {
                params: cal.protocol,
                detector: cal.detector,
                source_jitter: cal.source.source_jitter,
                window: best.width,
            };
            let run = stability_run(
                &block,
                cal.detector.channel_transmittance(loss_db),
                duration,
                interval,
                cfg.seed,
            );
            let mut w = out.file("stability.csv")?;
            writeln!(w, "time_s,raw_rate_cps,qber,secure_rate_bps")?;
            for p in &run.points {
                writeln!(w, "{},{},{},{}", p.time, p.raw_rate, p.qber, p.secure_rate)?;
            }
            w.flush()?;
            out.summary(json!({
                "loss_db": loss_db,
                "duration_s": duration,
                "window_ns": best.width * 1e9,
                "mean_secure_rate_bps": run.mean_secure_rate,
                "mean_qber": run.mean_qber,
            }))
        }
    }
}

/// 2 for anything the user can fix in the configuration or arguments, 3 for
/// failures of the run itself.
fn exit_code(e: &Error) -> u8 {
    use uplink_qkd::sync::SyncError;
    match e {
        Error::Config(_) | Error::Decoy(_) | Error::Link(_) => 2,
        Error::Pass(p) if p.is_bracket() => 3,
        Error::Pass(_) => 2,
        Error::Sync(SyncError::Domain { .. }) => 2,
        Error::Sync(_) | Error::Io(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uplink-qkd: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

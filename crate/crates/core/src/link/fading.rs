use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoy::DecoyError;
use crate::photonics::block::{sample_block_tallies, BlockModel};
use crate::photonics::TallyCounts;
use crate::rng::{domain, substream};
use crate::window::{log_widths, ClosedFormModel};

/// Mean-preserving log-normal transmittance: `eta = mean exp(X - s^2/2)`,
/// `X ~ N(0, s^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingModel {
    pub mean_transmittance: f64,
    pub sigma_ln: f64,
}

impl FadingModel {
    fn draw(&self, normal: &Normal<f64>, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        let s = self.sigma_ln;
        self.mean_transmittance * (normal.sample(rng) - 0.5 * s * s).exp()
    }

    fn normal(&self) -> Normal<f64> {
        Normal::new(0.0, self.sigma_ln).expect("sigma_ln is finite and non-negative")
    }
}

pub fn lognormal_samples(fading: &FadingModel, n: usize, seed: u64) -> Vec<f64> {
    let normal = fading.normal();
    let mut rng = substream(seed, domain::FADING);
    (0..n).map(|_| fading.draw(&normal, &mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FadingComparison {
    /// Secure key rate at constant mean transmittance, bits per second.
    pub static_rate: f64,
    /// Secure key rate from counts pooled over fading blocks, bits per second.
    pub fading_rate: f64,
    /// `|fading - static| / static`.
    pub relative_difference: f64,
    /// Acceptance window used by both runs, seconds.
    pub window: f64,
    pub blocks: u64,
}

/// Secure rate from pooled counts with and without log-normal fading at the
/// same mean loss.
///
/// Transmittance is redrawn every `block_duration` seconds. Both runs use the
/// same photon-count substream for each block and the fading draws have their
/// own substream, so `sigma_ln = 0` reproduces the static run exactly.
pub fn fading_equivalence_experiment(
    model: &ClosedFormModel,
    mean_loss_db: f64,
    sigma_ln: f64,
    n_pulses: u64,
    block_duration: f64,
    seed: u64,
) -> Result<FadingComparison, DecoyError> {
    let clock = model.params.clock_rate;
    let widths = log_widths(20e-12, model.period(), 400);
    let (best, _) = model.optimal(mean_loss_db, &widths);
    let block = BlockModel {
        params: model.params,
        detector: model.detector,
        source_jitter: model.source_jitter,
        window: best.width,
    };
    let per_block = ((clock * block_duration).round() as u64).max(1);
    let n_blocks = n_pulses.div_ceil(per_block);
    let fading = FadingModel {
        mean_transmittance: model.detector.channel_transmittance(mean_loss_db),
        sigma_ln,
    };
    let normal = fading.normal();

    let run = |faded: bool| -> TallyCounts {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let n = per_block.min(n_pulses - b * per_block);
                let eta = if faded {
                    let mut rng = substream(seed, domain::FADING + b);
                    fading.draw(&normal, &mut rng).min(1.0)
                } else {
                    fading.mean_transmittance
                };
                let mut rng = substream(seed, domain::BLOCKS + b);
                sample_block_tallies(&block, eta, n, &mut rng)
            })
            .reduce(TallyCounts::default, |mut a, b| {
                a.merge(&b);
                a
            })
    };
    let static_rate = run(false).key_rate(&model.params)? * clock;
    let fading_rate = run(true).key_rate(&model.params)? * clock;
    let relative_difference = if static_rate > 0.0 {
        (fading_rate - static_rate).abs() / static_rate
    } else if fading_rate == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(FadingComparison {
        static_rate,
        fading_rate,
        relative_difference,
        window: best.width,
        blocks: n_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ClosedFormModel {
        ClosedFormModel::from_calibration(&crate::calibration::experimental())
    }

    #[test]
    fn zero_sigma_is_constant() {
        let f = FadingModel {
            mean_transmittance: 1e-4,
            sigma_ln: 0.0,
        };
        assert!(lognormal_samples(&f, 100, 1).iter().all(|&x| x == 1e-4));
    }

    #[test]
    fn mean_is_preserved() {
        let f = FadingModel {
            mean_transmittance: 2e-3,
            sigma_ln: 1.0,
        };
        let n = 1_000_000;
        let xs = lognormal_samples(&f, n, 3);
        assert!(xs.iter().all(|&x| x > 0.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        // sd of a unit-mean log-normal with s = 1 is sqrt(e - 1)
        let sd = f.mean_transmittance * (1f64.exp() - 1.0).sqrt();
        assert!((mean - f.mean_transmittance).abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn zero_sigma_reproduces_static_run() {
        let c = fading_equivalence_experiment(&model(), 40.0, 0.0, 100_000_000, 0.01, 5).unwrap();
        assert_eq!(c.static_rate, c.fading_rate);
        assert_eq!(c.relative_difference, 0.0);
    }

    #[test]
    fn pooled_counts_match_static_in_linear_regime() {
        use crate::photonics::PulseClass;
        let m = model();
        let block = BlockModel {
            params: m.params,
            detector: m.detector,
            source_jitter: m.source_jitter,
            window: 1e-9,
        };
        let eta = m.detector.channel_transmittance(40.0);
        let f = FadingModel {
            mean_transmittance: eta,
            sigma_ln: 1.0,
        };
        let normal = f.normal();
        let per_block = 760_000u64;
        let mut faded = TallyCounts::default();
        let mut fixed = TallyCounts::default();
        for b in 0..2000 {
            let mut r = substream(11, domain::FADING + b);
            let e = f.draw(&normal, &mut r);
            faded.merge(&sample_block_tallies(
                &block,
                e,
                per_block,
                &mut substream(11, domain::BLOCKS + b),
            ));
            fixed.merge(&sample_block_tallies(
                &block,
                eta,
                per_block,
                &mut substream(12, domain::BLOCKS + b),
            ));
        }
        let (a, b) = (
            faded.gain(PulseClass::Signal),
            fixed.gain(PulseClass::Signal),
        );
        // fading adds block-to-block variance on top of the binomial noise
        let n = faded.sent[0] as f64;
        let var = 2.0 * b / n + (1f64.exp() - 1.0) * (b - block.y_zero()).powi(2) / 2000.0;
        assert!((a - b).abs() < 5.0 * var.sqrt(), "{a} vs {b}");
    }
}

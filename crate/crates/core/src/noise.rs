//! Gaussian measurement noise from a seeded ChaCha8 stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    /// Gap and relative velocity.
    Radar,
    /// Own speed.
    Tachometer,
    /// Own acceleration.
    Accelerometer,
}

/// Noise variances (not standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// m² and m²/s².
    #[serde(default = "d_radar")]
    pub radar: f64,
    /// m²/s².
    #[serde(default = "d_tach")]
    pub tachometer: f64,
    /// m²/s⁴.
    #[serde(default = "d_accel")]
    pub accelerometer: f64,
    /// Feed the measured rather than the true acceleration into the
    /// homogenizing input. Off by default: with tight limits the amplified
    /// accelerometer noise saturates the command and the platoon loses speed.
    #[serde(default)]
    pub measured_accel_in_homogenizing: bool,
}

fn yes() -> bool {
    true
}
fn d_radar() -> f64 {
    0.025
}
fn d_tach() -> f64 {
    0.25
}
fn d_accel() -> f64 {
    0.1
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: true,
            radar: d_radar(),
            tachometer: d_tach(),
            accelerometer: d_accel(),
            measured_accel_in_homogenizing: false,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig { enabled: false, ..Default::default() }
    }

    pub fn variance(&self, kind: SensorKind) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        match kind {
            SensorKind::Radar => self.radar,
            SensorKind::Tachometer => self.tachometer,
            SensorKind::Accelerometer => self.accelerometer,
        }
    }
}

/// Adds one zero-mean Gaussian sample with the given variance.
pub fn inject_noise<R: Rng>(truth: f64, variance: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if variance > 0.0 {
        truth + variance.sqrt() * z
    } else {
        truth
    }
}

/// Per-vehicle measurement offsets for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeasurementNoise {
    pub gap: f64,
    pub rel_v: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseSource {
    cfg: NoiseConfig,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(cfg: NoiseConfig, seed: u64) -> Self {
        NoiseSource { cfg, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Draws the four offsets for one vehicle. Draws happen even when a
    /// variance is zero so streams stay aligned between configurations.
    pub fn sample(&mut self) -> MeasurementNoise {
        let r = self.cfg.variance(SensorKind::Radar);
        let t = self.cfg.variance(SensorKind::Tachometer);
        let a = self.cfg.variance(SensorKind::Accelerometer);
        MeasurementNoise {
            gap: inject_noise(0.0, r, &mut self.rng),
            rel_v: inject_noise(0.0, r, &mut self.rng),
            v: inject_noise(0.0, t, &mut self.rng),
            a: inject_noise(0.0, a, &mut self.rng),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(inject_noise(3.25, 0.0, &mut rng), 3.25);
    }

    #[test]
    fn radar_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| inject_noise(0.0, 0.025, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.1581).abs() < 0.02 * 0.1581, "{std}");
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = NoiseSource::new(NoiseConfig::default(), 42);
        let mut b = NoiseSource::new(NoiseConfig::default(), 42);
        for _ in 0..100 {
            assert_eq!(a.sample(), b.sample());
        }
        let mut off = NoiseSource::new(NoiseConfig::off(), 42);
        assert_eq!(off.sample(), MeasurementNoise::default());
    }
}

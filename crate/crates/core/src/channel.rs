//! Physical channel synthesis for a half-wavelength uniform linear array.
//!
//! A channel is the superposition of multipath components, each contributing
//! `alpha * a(theta) * exp(-j 2 pi tau f)` on a baseband subcarrier grid.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Number of BS antennas.
    pub num_antennas: usize,
    /// Carrier frequency in Hz.
    pub carrier_frequency: f64,
    /// System bandwidth in Hz.
    pub bandwidth: f64,
    /// Number of subcarriers the element-space channel is evaluated on.
    pub num_subcarriers: usize,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            num_antennas: 32,
            carrier_frequency: 60e9,
            bandwidth: 500e6,
            num_subcarriers: 64,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::domain("array needs at least one antenna"));
        }
        if self.num_subcarriers == 0 {
            return Err(Error::domain("array needs at least one subcarrier"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::domain(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency.is_finite()) {
            return Err(Error::domain(format!(
                "carrier frequency must be positive, got {}",
                self.carrier_frequency
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Baseband subcarrier offsets `-W/2 + q W / F`, or `[0]` for a single tone.
    pub fn subcarrier_offsets(&self) -> Vec<f64> {
        let f = self.num_subcarriers;
        if f == 1 {
            return vec![0.0];
        }
        let step = self.bandwidth / f as f64;
        (0..f).map(|q| -0.5 * self.bandwidth + q as f64 * step).collect()
    }
}

/// One propagation path: complex gain, angle of arrival at the BS, delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathComponent {
    pub amplitude: Complex64,
    /// Angle of arrival in radians, measured from the array axis, in (0, pi).
    pub aoa: f64,
    /// Propagation delay in seconds.
    pub delay: f64,
}

impl MultipathComponent {
    pub fn new(amplitude: Complex64, aoa: f64, delay: f64) -> Self {
        Self { amplitude, aoa, delay }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.re.is_finite() && self.amplitude.im.is_finite()) {
            return Err(Error::domain("path amplitude must be finite"));
        }
        if !(self.aoa > 0.0 && self.aoa < PI) {
            return Err(Error::domain(format!("angle of arrival {} outside (0, pi)", self.aoa)));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::domain(format!("delay {} must be finite and >= 0", self.delay)));
        }
        Ok(())
    }
}

/// Antenna x subcarrier channel matrix of one location.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub matrix: Array2<Complex64>,
    pub sample_id: usize,
}

impl ChannelSample {
    pub fn zeros(cfg: &ArrayConfig, sample_id: usize) -> Self {
        Self {
            matrix: Array2::zeros((cfg.num_antennas, cfg.num_subcarriers)),
            sample_id,
        }
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }
}

/// Normalized half-wavelength ULA response, entry `p` is `exp(j pi p cos(theta)) / sqrt(N)`.
pub fn array_response(theta: f64, num_antennas: usize) -> Result<Array1<Complex64>> {
    if num_antennas == 0 {
        return Err(Error::domain("array response needs at least one antenna"));
    }
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::domain(format!("angle {theta} outside (0, pi)")));
    }
    let scale = 1.0 / (num_antennas as f64).sqrt();
    let spatial = PI * theta.cos();
    Ok(Array1::from_iter(
        (0..num_antennas).map(|p| Complex64::from_polar(scale, spatial * p as f64)),
    ))
}

pub fn synth_channel(mpcs: &[MultipathComponent], cfg: &ArrayConfig) -> Result<ChannelSample> {
    cfg.validate()?;
    let offsets = cfg.subcarrier_offsets();
    let mut h = Array2::<Complex64>::zeros((cfg.num_antennas, cfg.num_subcarriers));
    for mpc in mpcs {
        mpc.validate()?;
        let a = array_response(mpc.aoa, cfg.num_antennas)?;
        for (q, &f) in offsets.iter().enumerate() {
            let tone = mpc.amplitude * Complex64::from_polar(1.0, -2.0 * PI * mpc.delay * f);
            for (p, ap) in a.iter().enumerate() {
                h[[p, q]] += tone * ap;
            }
        }
    }
    Ok(ChannelSample { matrix: h, sample_id: 0 })
}

/// Received signal strength as total multipath power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rss {
    /// No path reaches the location.
    NoPower,
    Db(f64),
}

impl Rss {
    /// Whether this RSS lies strictly below the threshold `rss0` (in dB).
    pub fn below(self, rss0: f64) -> bool {
        match self {
            Rss::NoPower => rss0 > f64::NEG_INFINITY,
            Rss::Db(v) => v < rss0,
        }
    }

    pub fn as_db(self) -> f64 {
        match self {
            Rss::NoPower => f64::NEG_INFINITY,
            Rss::Db(v) => v,
        }
    }
}

pub fn rss_db(mpcs: &[MultipathComponent]) -> Rss {
    let power: f64 = mpcs.iter().map(|m| m.amplitude.norm_sqr()).sum();
    if power > 0.0 {
        Rss::Db(10.0 * power.log10())
    } else {
        Rss::NoPower
    }
}

/// RSS estimated from the channel matrix alone (mean per-subcarrier power).
pub fn rss_from_channel(sample: &ChannelSample) -> Rss {
    let cols = sample.matrix.ncols().max(1);
    let power = sample.frobenius_norm_sqr() / cols as f64;
    if power > 0.0 {
        Rss::Db(10.0 * power.log10())
    } else {
        Rss::NoPower
    }
}

/// Adds circularly symmetric complex Gaussian noise at the given per-entry SNR.
pub fn add_noise(sample: &ChannelSample, snr_db: f64, seed: u64) -> Result<ChannelSample> {
    if snr_db.is_nan() {
        return Err(Error::domain("SNR must not be NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(sample.clone());
    }
    let energy = sample.frobenius_norm_sqr();
    if energy <= 0.0 {
        return Err(Error::domain("cannot set a finite SNR on a zero channel"));
    }
    let entries = sample.matrix.len() as f64;
    let variance = energy / (entries * 10f64.powf(snr_db / 10.0));
    let std_per_axis = (variance / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    for z in out.matrix.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z += Complex64::new(re * std_per_axis, im * std_per_axis);
    }
    Ok(out)
}

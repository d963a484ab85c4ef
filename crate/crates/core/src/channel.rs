//! Classical reduction of the depolarizing single-photon link.
//!
//! A detected photon comes from the background with probability `P`; a
//! background photon is unpolarized and lands on either outcome with
//! probability one half. Signal photons flip with the intrinsic per-basis
//! error. Detector dark counts are folded into `P`.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Basis {
    /// Rectilinear `{H, V}`; carries the key.
    X = 0,
    /// Diagonal `{+, -}`; used for parameter estimation.
    Z = 1,
}

impl Basis {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Basis::Z
        } else {
            Basis::X
        }
    }

    pub fn as_bit(self) -> bool {
        self == Basis::Z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Lost,
    Bit(bool),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("{name} = {value} is not a probability")]
    NotProbability { name: &'static str, value: f64 },
    #[error("effective error {0} exceeds 1/2")]
    ErrorAboveHalf(f64),
    #[error("unknown channel preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    background: f64,
    intrinsic_x: f64,
    intrinsic_z: f64,
    detection: f64,
}

fn check(name: &'static str, value: f64) -> Result<f64, ChannelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ChannelError::NotProbability { name, value })
    }
}

impl ChannelModel {
    pub fn new(background: f64, intrinsic_x: f64, intrinsic_z: f64, detection: f64) -> Result<Self, ChannelError> {
        let model = Self {
            background: check("background", background)?,
            intrinsic_x: check("intrinsic_x", intrinsic_x)?,
            intrinsic_z: check("intrinsic_z", intrinsic_z)?,
            detection: check("detection", detection)?,
        };
        let (qx, qz) = model.effective_qber();
        for q in [qx, qz] {
            if q > 0.5 + 1e-12 {
                return Err(ChannelError::ErrorAboveHalf(q));
            }
        }
        Ok(model)
    }

    /// Perfect lossless link.
    pub fn noiseless() -> Self {
        Self { background: 0.0, intrinsic_x: 0.0, intrinsic_z: 0.0, detection: 1.0 }
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn intrinsic(&self, basis: Basis) -> f64 {
        match basis {
            Basis::X => self.intrinsic_x,
            Basis::Z => self.intrinsic_z,
        }
    }

    pub fn detection(&self) -> f64 {
        self.detection
    }

    pub fn with_detection(mut self, detection: f64) -> Result<Self, ChannelError> {
        self.detection = check("detection", detection)?;
        Ok(self)
    }

    /// Average error per basis, `(1 - P) e_b + P / 2`.
    pub fn effective_qber(&self) -> (f64, f64) {
        (self.qber(Basis::X), self.qber(Basis::Z))
    }

    pub fn qber(&self, basis: Basis) -> f64 {
        (1.0 - self.background) * self.intrinsic(basis) + 0.5 * self.background
    }

    /// One slot through the link.
    ///
    /// Mismatched bases give a uniform outcome whatever the noise.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        sent_bit: bool,
        sent_basis: Basis,
        measure_basis: Basis,
        rng: &mut R,
    ) -> Detection {
        if rng.gen::<f64>() >= self.detection {
            return Detection::Lost;
        }
        if sent_basis != measure_basis {
            return Detection::Bit(rng.gen());
        }
        let flip = rng.gen::<f64>() < self.qber(sent_basis);
        Detection::Bit(sent_bit ^ flip)
    }
}

/// Named channel conditions.
///
/// `a` through `d` reproduce the four measured `(Q_X, Q_Z)` operating
/// points: `a` is the bare link (waveplate error only), `b`..`d` add
/// unpolarized background with `e_X` held at the bare-link value and `e_Z`
/// solved so both average errors match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPreset {
    pub name: &'static str,
    pub qber_x: f64,
    pub qber_z: f64,
}

pub const BARE_INTRINSIC_X: f64 = 0.003;

pub const PRESETS: [ChannelPreset; 4] = [
    ChannelPreset { name: "a", qber_x: 0.003, qber_z: 0.015 },
    ChannelPreset { name: "b", qber_x: 0.024, qber_z: 0.039 },
    ChannelPreset { name: "c", qber_x: 0.049, qber_z: 0.060 },
    ChannelPreset { name: "d", qber_x: 0.083, qber_z: 0.081 },
];

impl ChannelPreset {
    pub fn by_name(name: &str) -> Result<Self, ChannelError> {
        if name.eq_ignore_ascii_case("noiseless") {
            return Ok(ChannelPreset { name: "noiseless", qber_x: 0.0, qber_z: 0.0 });
        }
        PRESETS
            .iter()
            .copied()
            .find(|p| p.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| ChannelError::UnknownPreset(name.to_string()))
    }

    /// Lossless model realising this preset.
    pub fn model(&self) -> ChannelModel {
        if self.qber_x == 0.0 && self.qber_z == 0.0 {
            return ChannelModel::noiseless();
        }
        let ex = BARE_INTRINSIC_X.min(self.qber_x);
        let background = (self.qber_x - ex) / (0.5 - ex);
        let ez = ((self.qber_z - 0.5 * background) / (1.0 - background)).max(0.0);
        ChannelModel::new(background, ex, ez, 1.0).expect("preset parameters are valid")
    }
}

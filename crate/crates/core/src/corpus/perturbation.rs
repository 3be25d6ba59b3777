use std::fmt;

use crate::error::{Error, Result};

/// Decoding-time perturbation applied to produce one hypothesis.
///
/// Values are stored on a hundredths grid so descriptors compare, hash and
/// order exactly; the wire format carries them as decimals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PerturbationDescriptor {
    alpha_centi: u8,
    pitch_semitones: i8,
    atempo_centi: u8,
}

/// Input variants at alpha = 0 other than the original signal: three
/// pitch-only shifts and three (tempo, pitch) pairs.
const INPUT_VARIANTS: [(u8, i8); 6] = [(100, -2), (100, 1), (100, 2), (90, -1), (95, -2), (95, -1)];
const NOISE_LEVELS: [u8; 3] = [1, 2, 3];

fn to_centi(value: f64, what: &str) -> Result<u8> {
    let scaled = value * 100.0;
    let rounded = scaled.round();
    if !value.is_finite() || (scaled - rounded).abs() > 1e-6 || !(0.0..=255.0).contains(&rounded) {
        return Err(Error::InvalidPerturbation(format!(
            "{what} {value} is not on the 0.01 grid"
        )));
    }
    Ok(rounded as u8)
}

impl PerturbationDescriptor {
    pub const BASELINE: PerturbationDescriptor = PerturbationDescriptor {
        alpha_centi: 0,
        pitch_semitones: 0,
        atempo_centi: 100,
    };

    /// Parses a descriptor on the 0.01 grid without checking it against the
    /// selected configuration set. Used for exploratory sweeps.
    pub fn from_values(alpha: f64, pitch_semitones: i64, atempo: f64) -> Result<Self> {
        let alpha_centi = to_centi(alpha, "alpha")?;
        let atempo_centi = to_centi(atempo, "atempo")?;
        if atempo_centi == 0 {
            return Err(Error::InvalidPerturbation("atempo must be positive".into()));
        }
        let pitch_semitones = i8::try_from(pitch_semitones).map_err(|_| {
            Error::InvalidPerturbation(format!("pitch {pitch_semitones} out of range"))
        })?;
        Ok(PerturbationDescriptor {
            alpha_centi,
            pitch_semitones,
            atempo_centi,
        })
    }

    /// Parses a descriptor and rejects anything outside the 28 selected
    /// configurations.
    pub fn selected(alpha: f64, pitch_semitones: i64, atempo: f64) -> Result<Self> {
        let d = Self::from_values(alpha, pitch_semitones, atempo)?;
        if d.is_selected() {
            Ok(d)
        } else {
            Err(Error::InvalidPerturbation(format!(
                "{d} is not one of the selected configurations"
            )))
        }
    }

    /// All selected configurations in canonical order: baseline, the six
    /// input variants at alpha 0, then each noise level applied to the
    /// original plus the six input variants.
    pub fn all_selected() -> Vec<PerturbationDescriptor> {
        let mut out = Vec::with_capacity(28);
        out.push(Self::BASELINE);
        for &(atempo_centi, pitch) in &INPUT_VARIANTS {
            out.push(PerturbationDescriptor {
                alpha_centi: 0,
                pitch_semitones: pitch,
                atempo_centi,
            });
        }
        for &alpha_centi in &NOISE_LEVELS {
            out.push(PerturbationDescriptor {
                alpha_centi,
                ..Self::BASELINE
            });
            for &(atempo_centi, pitch) in &INPUT_VARIANTS {
                out.push(PerturbationDescriptor {
                    alpha_centi,
                    pitch_semitones: pitch,
                    atempo_centi,
                });
            }
        }
        out
    }

    pub fn is_selected(&self) -> bool {
        let input_ok = (self.atempo_centi == 100 && self.pitch_semitones == 0)
            || INPUT_VARIANTS.contains(&(self.atempo_centi, self.pitch_semitones));
        let alpha_ok = self.alpha_centi == 0 || NOISE_LEVELS.contains(&self.alpha_centi);
        input_ok && alpha_ok
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::BASELINE
    }

    pub fn alpha(&self) -> f64 {
        f64::from(self.alpha_centi) / 100.0
    }

    pub fn pitch_semitones(&self) -> i64 {
        i64::from(self.pitch_semitones)
    }

    pub fn atempo(&self) -> f64 {
        f64::from(self.atempo_centi) / 100.0
    }

    /// Magnitude key used to pick the least-perturbed duplicate:
    /// (alpha, |pitch|, |1 - atempo|) on the integer grid.
    pub fn magnitude_key(&self) -> (u8, u8, u8) {
        (
            self.alpha_centi,
            self.pitch_semitones.unsigned_abs(),
            self.atempo_centi.abs_diff(100),
        )
    }
}

impl fmt::Display for PerturbationDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={:.2} pitch={:+} atempo={:.2}",
            self.alpha(),
            self.pitch_semitones,
            self.atempo()
        )
    }
}

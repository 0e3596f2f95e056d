use std::fmt;

use crate::{Error, Result};

pub const LABEL_COUNT: usize = 14;

/// Observation columns of the public CheXpert manifests, in file order.
pub const CHEXPERT_OBSERVATIONS: [&str; LABEL_COUNT] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

/// One raw manifest cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Observation {
    Positive,
    Negative,
    Uncertain,
    Missing,
}

impl Observation {
    pub const ALL: [Observation; 4] = [
        Observation::Positive,
        Observation::Negative,
        Observation::Uncertain,
        Observation::Missing,
    ];

    /// Parses a manifest cell: `1.0`, `0.0`, `-1.0` or the empty string.
    pub fn from_token(token: &str) -> Option<Self> {
        match token.trim() {
            "1.0" => Some(Observation::Positive),
            "0.0" => Some(Observation::Negative),
            "-1.0" => Some(Observation::Uncertain),
            "" => Some(Observation::Missing),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Observation::Positive => "1.0",
            Observation::Negative => "0.0",
            Observation::Uncertain => "-1.0",
            Observation::Missing => "",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RawLabelVector(pub [Observation; LABEL_COUNT]);

impl RawLabelVector {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        if tokens.len() != LABEL_COUNT {
            return Err(Error::Parameter(format!(
                "expected {LABEL_COUNT} label cells, got {}",
                tokens.len()
            )));
        }
        let mut slots = [Observation::Missing; LABEL_COUNT];
        for (slot, tok) in slots.iter_mut().zip(tokens) {
            *slot = Observation::from_token(tok.as_ref())
                .ok_or_else(|| Error::Parameter(format!("unknown label token `{}`", tok.as_ref())))?;
        }
        Ok(Self(slots))
    }
}

/// Cleaned 0/1 targets, one per observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct CleanLabelVector(pub [u8; LABEL_COUNT]);

impl CleanLabelVector {
    pub fn as_f64(&self) -> [f64; LABEL_COUNT] {
        self.0.map(f64::from)
    }

    /// Reinterprets clean labels as raw cells (1 → positive, 0 → negative).
    pub fn to_raw(&self) -> RawLabelVector {
        RawLabelVector(self.0.map(|v| {
            if v == 1 {
                Observation::Positive
            } else {
                Observation::Negative
            }
        }))
    }
}

impl fmt::Display for CleanLabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in self.0 {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Positive stays 1; negative, uncertain and missing all become 0.
pub fn clean_labels(raw: &RawLabelVector) -> CleanLabelVector {
    CleanLabelVector(raw.0.map(|o| (o == Observation::Positive) as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Observation::*;

    #[test]
    fn all_positive_stays_positive() {
        assert_eq!(clean_labels(&RawLabelVector([Positive; 14])), CleanLabelVector([1; 14]));
    }

    #[test]
    fn uncertain_and_missing_become_zero() {
        let mut raw = [Missing; 14];
        raw[..4].copy_from_slice(&[Uncertain, Missing, Negative, Positive]);
        let clean = clean_labels(&RawLabelVector(raw));
        let mut want = [0u8; 14];
        want[3] = 1;
        assert_eq!(clean.0, want);
    }

    #[test]
    fn cleaning_is_idempotent() {
        let raw = RawLabelVector([
            Uncertain, Positive, Missing, Negative, Positive, Positive, Missing, Uncertain, Negative, Positive,
            Missing, Missing, Uncertain, Positive,
        ]);
        let once = clean_labels(&raw);
        assert_eq!(clean_labels(&once.to_raw()), once);
    }

    #[test]
    fn tokens_round_trip() {
        for o in Observation::ALL {
            assert_eq!(Observation::from_token(o.token()), Some(o));
        }
        assert_eq!(Observation::from_token("2.0"), None);
        assert_eq!(Observation::from_token("1"), None);
    }
}

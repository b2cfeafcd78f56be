use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// One input stream of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Acoustic,
    Visual,
    Language,
}

impl Modality {
    /// Storage order for per-modality arrays.
    pub const ALL: [Modality; 3] = [Modality::Acoustic, Modality::Visual, Modality::Language];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            Modality::Acoustic => "a",
            Modality::Visual => "v",
            Modality::Language => "l",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "acoustic" => Ok(Modality::Acoustic),
            "v" | "visual" => Ok(Modality::Visual),
            "l" | "language" => Ok(Modality::Language),
            _ => Err(Error::Config(format!("unknown modality `{s}`"))),
        }
    }
}

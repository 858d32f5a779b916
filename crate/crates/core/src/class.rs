//! Damage labels and disaster categories.

use core::fmt;
use core::str::FromStr;

use crate::error::Error;

/// Four-level ordinal damage label: no damage, minor, major, destroyed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DamageClass(u8);

impl DamageClass {
    pub const NO_DAMAGE: Self = Self(0);
    pub const MINOR: Self = Self(1);
    pub const MAJOR: Self = Self(2);
    pub const DESTROYED: Self = Self(3);

    pub const COUNT: usize = 4;
    pub const ALL: [Self; 4] = [Self::NO_DAMAGE, Self::MINOR, Self::MAJOR, Self::DESTROYED];

    pub fn new(ordinal: u8) -> Result<Self, Error> {
        if ordinal < 4 {
            Ok(Self(ordinal))
        } else {
            Err(Error::InvalidClass(ordinal as i64))
        }
    }

    pub fn ordinal(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Label name as it appears in label files.
    pub fn subtype(self) -> &'static str {
        match self.0 {
            0 => "no-damage",
            1 => "minor-damage",
            2 => "major-damage",
            _ => "destroyed",
        }
    }

    /// Maps a label-file subtype to a class. `"un-classified"` and anything
    /// else unknown yield `None`.
    pub fn from_subtype(s: &str) -> Option<Self> {
        match s {
            "no-damage" => Some(Self(0)),
            "minor-damage" => Some(Self(1)),
            "major-damage" => Some(Self(2)),
            "destroyed" => Some(Self(3)),
            _ => None,
        }
    }
}

impl fmt::Display for DamageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.subtype())
    }
}

/// Raw label kept for buildings whose damage was never assessed.
pub const UNCLASSIFIED: &str = "unclassified";

/// Closed set of disaster categories. Declaration order is alphabetical and
/// fixes the one-hot layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DisasterType {
    Earthquake,
    Fire,
    Flooding,
    Tsunami,
    Volcano,
    Wind,
}

impl DisasterType {
    pub const COUNT: usize = 6;
    pub const ALL: [Self; 6] = [Self::Earthquake, Self::Fire, Self::Flooding, Self::Tsunami, Self::Volcano, Self::Wind];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Earthquake => "earthquake",
            Self::Fire => "fire",
            Self::Flooding => "flooding",
            Self::Tsunami => "tsunami",
            Self::Volcano => "volcano",
            Self::Wind => "wind",
        }
    }

    pub fn one_hot(self) -> [f32; 6] {
        let mut v = [0.0; 6];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for DisasterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DisasterType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL.iter().copied().find(|t| t.tag() == s).ok_or_else(|| Error::UnknownDisasterType(s.into()))
    }
}

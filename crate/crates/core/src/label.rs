use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of vulnerability classes handled by every classifier.
pub const NUM_CLASSES: usize = 4;

/// Vulnerability class attached to a contract.
///
/// The discriminant is the fixed integer encoding used in dataset files,
/// confusion-matrix axes and model outputs (alphabetical order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VulnerabilityLabel {
    /// Dangerous delegatecall.
    DD = 0,
    /// Integer overflow.
    IO = 1,
    /// Reentrancy.
    RE = 2,
    /// Timestamp dependency.
    TD = 3,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown vulnerability label `{0}` (expected one of DD, IO, RE, TD)")]
pub struct UnknownLabel(pub String);

impl VulnerabilityLabel {
    /// All labels in encoding order.
    pub const ALL: [VulnerabilityLabel; NUM_CLASSES] = [Self::DD, Self::IO, Self::RE, Self::TD];

    pub fn encoding(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DD => "DD",
            Self::IO => "IO",
            Self::RE => "RE",
            Self::TD => "TD",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::DD => "Dangerous Delegatecall",
            Self::IO => "Integer Overflow",
            Self::RE => "Reentrancy",
            Self::TD => "Timestamp Dependency",
        }
    }
}

impl fmt::Display for VulnerabilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VulnerabilityLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DD" => Ok(Self::DD),
            "IO" => Ok(Self::IO),
            "RE" => Ok(Self::RE),
            "TD" => Ok(Self::TD),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

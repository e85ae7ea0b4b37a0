use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Gold or predicted class of a post.
///
/// The numeric labels 1, 2, 3 are the dataset labels; output-layer indices
/// are 0, 1, 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Class {
    /// Personal medication intake.
    Intake = 1,
    /// Possible medication intake.
    PossibleIntake = 2,
    /// Mentions a medication without intake.
    NonIntake = 3,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Intake, Class::PossibleIntake, Class::NonIntake];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Class> {
        Class::ALL.get(index).copied()
    }
}

impl TryFrom<u8> for Class {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Class::Intake),
            2 => Ok(Class::PossibleIntake),
            3 => Ok(Class::NonIntake),
            other => Err(format!("invalid label {other}")),
        }
    }
}

impl From<Class> for u8 {
    fn from(c: Class) -> u8 {
        c.label()
    }
}

impl FromStr for Class {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Class::Intake),
            "2" => Ok(Class::PossibleIntake),
            "3" => Ok(Class::NonIntake),
            other => Err(format!("invalid label {other}")),
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

//! Gesture-controlled drone pipeline: Haar-cascade gesture detection, a
//! safety-gated command planner with simulated kinematics, and an AT-command
//! UDP wire protocol with a loopback endpoint for integration testing.

pub mod boost;
pub mod cli;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod haar;
pub mod imaging;
pub mod pilot;
pub mod synth;
pub mod wire;

use std::fmt;
use std::str::FromStr;

pub use error::{Error, Result};

/// The five hand gestures the pipeline recognizes, plus the void outcome.
///
/// The declaration order is the canonical tie-break and reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GestureLabel {
    Fist,
    Palm,
    /// "Go" symbol.
    Gs,
    /// V-shape.
    Vs,
    /// Little finger.
    Lf,
    None,
}

/// The real gestures, in canonical order, excluding `None`.
pub const GESTURES: [GestureLabel; 5] = [
    GestureLabel::Fist,
    GestureLabel::Palm,
    GestureLabel::Gs,
    GestureLabel::Vs,
    GestureLabel::Lf,
];

impl GestureLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GestureLabel::Fist => "fist",
            GestureLabel::Palm => "palm",
            GestureLabel::Gs => "gs",
            GestureLabel::Vs => "vs",
            GestureLabel::Lf => "lf",
            GestureLabel::None => "none",
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GestureLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fist" => Ok(GestureLabel::Fist),
            "palm" => Ok(GestureLabel::Palm),
            "gs" => Ok(GestureLabel::Gs),
            "vs" => Ok(GestureLabel::Vs),
            "lf" => Ok(GestureLabel::Lf),
            "none" => Ok(GestureLabel::None),
            other => Err(Error::Input(format!("unknown gesture label {other:?}"))),
        }
    }
}

//! The six emotion categories and their tripolar grouping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category names in class-id order.
pub const EMOTIONS: [&str; 6] = ["Excitation", "Relaxation", "Neutral", "Fear", "Sadness", "Tension"];

pub const NEUTRAL: usize = 2;
pub const EXCITATION: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

/// Default polarity of each category in [`EMOTIONS`].
pub const DEFAULT_POLARITY: [Polarity; 6] = [
    Polarity::Positive,
    Polarity::Positive,
    Polarity::Neutral,
    Polarity::Negative,
    Polarity::Negative,
    Polarity::Negative,
];

/// Class id of a category name (case-insensitive) or a decimal id.
pub fn category_id(name: &str) -> Result<usize> {
    if let Ok(id) = name.parse::<usize>() {
        if id < EMOTIONS.len() {
            return Ok(id);
        }
    }
    EMOTIONS
        .iter()
        .position(|e| e.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Input(format!("unknown emotion category `{name}`")))
}

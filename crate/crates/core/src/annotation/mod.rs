//! Annotation-quality mathematics: annotator assignment scores, cross-check
//! consistency (`S_a`, `S_r`), Fleiss' kappa, staged vote resolution, and
//! the personnel-adjustment simulation.

pub mod adjust;
pub mod consistency;
pub mod kappa;
pub mod records;
pub mod report;
pub mod vote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjust::{
    adjust_personnel, planted_population, standard_items, AdjustConfig, AdjustOutcome, AdjustStep, CheckItem, Group,
    LabelOracle, Member, SkillOracle,
};
pub use consistency::{s_a, s_r, CrossCheckSet, SetBreakdown, STANDARD_SET_CATEGORIES};
pub use kappa::{count_matrix, fleiss_kappa, Kappa};
pub use records::{parse_records, read_records, AnnotationRecord, PriorLabel};
pub use report::AnnotationReport;
pub use vote::{resolve_label, Escalation, Resolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// Five screening scores on a common 0–100 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorProfile {
    pub id: String,
    /// Work experience.
    pub we: f64,
    /// Mental state.
    pub ms: f64,
    /// Emotion bias.
    pub eb: f64,
    /// Cultural background.
    pub cb: f64,
    /// Labeling proficiency.
    pub lp: f64,
    pub gender: Gender,
}

impl AnnotatorProfile {
    /// Parse from JSON; a missing or malformed field is an input error.
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Input(format!("annotator profile: {e}")))
    }
}

/// `p = 0.4·we + 0.3·ms + 0.1·(eb + cb + lp)`.
pub fn assignment_score(a: &AnnotatorProfile) -> Result<f64> {
    for (name, v) in [("we", a.we), ("ms", a.ms), ("eb", a.eb), ("cb", a.cb), ("lp", a.lp)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Input(format!(
                "annotator `{}`: score {name} = {v} must be finite and >= 0",
                a.id
            )));
        }
    }
    Ok(0.4 * a.we + 0.3 * a.ms + 0.1 * (a.eb + a.cb + a.lp))
}

//! Pseudo-label generation: per-pixel argmax of a soft prediction, used as
//! surrogate ground truth when self-training on the easy split.

use crate::maps::{LabelMap, ProbMap};

/// One-hot pseudo label at the per-pixel argmax; ties break toward the lowest
/// class index. No confidence threshold is applied — image-level filtering is
/// the ranking module's job.
pub fn to_pseudo_label(p: &ProbMap) -> LabelMap {
    p.argmax()
}

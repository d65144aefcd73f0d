//! Selection of the adjacent teeth that support a prediction.
//!
//! Missing teeth are located in the 2×14 teeth matrix. The support is every present tooth, in
//! either row, whose column lies within `t` columns of the missing column range. When the range
//! runs past a border of the matrix it continues from the opposite border, so missing second
//! molars borrow support from the molars of the other side.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tooth::{label_to_pos, pos_to_label, Row, TeethMatrixPos, ToothLabel, COLUMNS};

/// Candidate columns in resolver order: the in-range columns ascending, then any wrapped columns.
pub fn candidate_columns(missing_columns: &BTreeSet<u8>, t: u32) -> Vec<u8> {
    let (Some(&cr_min), Some(&cr_max)) = (missing_columns.first(), missing_columns.last()) else {
        return Vec::new();
    };
    let n = i64::from(COLUMNS);
    let lo = i64::from(cr_min) - i64::from(t);
    let hi = i64::from(cr_max) + i64::from(t);

    let mut columns: Vec<u8> = (lo.max(1)..=hi.min(n)).map(|c| c as u8).collect();
    let mut wrapped = Vec::new();
    if lo <= 0 {
        wrapped.extend(((lo + n).max(1)..=n).map(|c| c as u8));
    }
    if hi > n {
        wrapped.extend((1..=(hi - n).min(n)).map(|c| c as u8));
    }
    wrapped.sort_unstable();
    for c in wrapped {
        if !columns.contains(&c) {
            columns.push(c);
        }
    }
    columns
}

/// Resolves the ordered adjacent-teeth list for a set of missing teeth.
///
/// Teeth that are neither missing nor present are skipped silently.
pub fn resolve_adjacent(
    missing: &BTreeSet<ToothLabel>,
    present: &BTreeSet<ToothLabel>,
    t: u32,
) -> Result<Vec<ToothLabel>> {
    if missing.is_empty() {
        return Err(Error::InvalidInput("missing-teeth set is empty".into()));
    }
    if t == 0 {
        return Err(Error::InvalidConfig("adjacency radius t must be >= 1".into()));
    }
    if let Some(&overlap) = missing.intersection(present).next() {
        return Err(Error::InvalidInput(format!(
            "tooth {overlap} is listed as both missing and present"
        )));
    }
    let missing_columns: BTreeSet<u8> = missing.iter().map(|&l| label_to_pos(l).column).collect();

    let mut out = Vec::new();
    for column in candidate_columns(&missing_columns, t) {
        for row in [Row::Upper, Row::Lower] {
            let label = pos_to_label(TeethMatrixPos { row, column })?;
            if present.contains(&label) && !missing.contains(&label) {
                out.push(label);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoSupport);
    }
    Ok(out)
}

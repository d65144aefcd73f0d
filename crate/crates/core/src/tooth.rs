//! FDI tooth labels and the 2×14 teeth matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of columns of the teeth matrix.
pub const COLUMNS: u8 = 14;

const UPPER_ROW: [u8; 14] = [17, 16, 15, 14, 13, 12, 11, 21, 22, 23, 24, 25, 26, 27];
const LOWER_ROW: [u8; 14] = [47, 46, 45, 44, 43, 42, 41, 31, 32, 33, 34, 35, 36, 37];

/// FDI code of one of the 28 permanent teeth considered (third molars excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ToothLabel(u8);

impl ToothLabel {
    pub fn new(fdi: u8) -> Result<Self> {
        let quadrant = fdi / 10;
        let position = fdi % 10;
        if (1..=4).contains(&quadrant) && (1..=7).contains(&position) {
            Ok(Self(fdi))
        } else {
            Err(Error::InvalidLabel(fdi))
        }
    }

    pub fn fdi(self) -> u8 {
        self.0
    }

    /// 1 = upper right, 2 = upper left, 3 = lower left, 4 = lower right.
    pub fn quadrant(self) -> u8 {
        self.0 / 10
    }

    /// 1 (central incisor) to 7 (second molar).
    pub fn position(self) -> u8 {
        self.0 % 10
    }

    pub fn kind(self) -> ToothKind {
        match self.position() {
            1 | 2 => ToothKind::Incisor,
            3 => ToothKind::Canine,
            4 | 5 => ToothKind::Premolar,
            _ => ToothKind::Molar,
        }
    }

    pub fn is_upper(self) -> bool {
        self.quadrant() <= 2
    }

    /// All 28 labels in ascending FDI order.
    pub fn all() -> impl Iterator<Item = ToothLabel> {
        (1..=4u8).flat_map(|q| (1..=7u8).map(move |p| ToothLabel(q * 10 + p)))
    }

    /// Label at the mirror position across the midline (11 ↔ 21, 36 ↔ 46).
    pub fn mirrored(self) -> ToothLabel {
        let q = match self.quadrant() {
            1 => 2,
            2 => 1,
            3 => 4,
            _ => 3,
        };
        ToothLabel(q * 10 + self.position())
    }
}

impl fmt::Display for ToothLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<u8> for ToothLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ToothLabel> for u8 {
    fn from(value: ToothLabel) -> Self {
        value.0
    }
}

impl FromStr for ToothLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        s.parse::<u8>()
            .map_err(|_| Error::InvalidInput(format!("not a tooth number: {s:?}")))
            .and_then(Self::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToothKind {
    Incisor,
    Canine,
    Premolar,
    Molar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Row {
    Upper,
    Lower,
}

impl Row {
    fn name(self) -> &'static str {
        match self {
            Row::Upper => "upper",
            Row::Lower => "lower",
        }
    }
}

/// Slot of a tooth in the 2×14 teeth matrix; columns run 1..=14 from tooth 17/47 to 27/37.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TeethMatrixPos {
    pub row: Row,
    pub column: u8,
}

impl TeethMatrixPos {
    pub fn new(row: Row, column: u8) -> Result<Self> {
        if (1..=COLUMNS).contains(&column) {
            Ok(Self { row, column })
        } else {
            Err(Error::InvalidPosition {
                row: row.name(),
                column,
            })
        }
    }
}

pub fn label_to_pos(label: ToothLabel) -> TeethMatrixPos {
    let (row, table) = if label.is_upper() {
        (Row::Upper, &UPPER_ROW)
    } else {
        (Row::Lower, &LOWER_ROW)
    };
    let idx = table
        .iter()
        .position(|&l| l == label.fdi())
        .expect("every valid label sits in the teeth matrix");
    TeethMatrixPos {
        row,
        column: idx as u8 + 1,
    }
}

pub fn pos_to_label(pos: TeethMatrixPos) -> Result<ToothLabel> {
    let pos = TeethMatrixPos::new(pos.row, pos.column)?;
    let table = match pos.row {
        Row::Upper => &UPPER_ROW,
        Row::Lower => &LOWER_ROW,
    };
    ToothLabel::new(table[pos.column as usize - 1])
}

/// Parses a comma-separated FDI list such as `14,15`.
pub fn parse_label_list(s: &str) -> Result<Vec<ToothLabel>> {
    let labels: Vec<ToothLabel> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for &l in &labels {
        if !seen.insert(l) {
            return Err(Error::DuplicateLabel(l));
        }
    }
    Ok(labels)
}

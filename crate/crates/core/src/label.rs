use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One of the three competition classes, written as -1, 0, or 1.
///
/// Score vectors and probability vectors are indexed in fixed label order
/// (-1, 0, 1); [`ClassLabel::index`] and [`ClassLabel::from_index`] convert
/// between the class value and that index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(i8);

impl ClassLabel {
    pub const NEG: ClassLabel = ClassLabel(-1);
    pub const ZERO: ClassLabel = ClassLabel(0);
    pub const ONE: ClassLabel = ClassLabel(1);

    /// All classes in index order.
    pub const ALL: [ClassLabel; 3] = [Self::NEG, Self::ZERO, Self::ONE];

    pub fn new(value: i64) -> Result<Self> {
        match value {
            -1 => Ok(Self::NEG),
            0 => Ok(Self::ZERO),
            1 => Ok(Self::ONE),
            _ => Err(Error::Invalid(format!(
                "label {value} outside {{-1, 0, 1}}"
            ))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "-1" => Ok(Self::NEG),
            "0" => Ok(Self::ZERO),
            "1" => Ok(Self::ONE),
            other => Err(Error::Invalid(format!(
                "label {other:?} outside {{-1, 0, 1}}"
            ))),
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Score-vector index: -1 -> 0, 0 -> 1, 1 -> 2.
    pub fn index(self) -> usize {
        (self.0 + 1) as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("class index {index} out of range")))
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 10;
/// Regression slots: one per compound, `air` has none.
pub const N_SLOTS: usize = 9;

/// The ten target classes in frozen alphabetical order; index 1 is `air`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocClass {
    Acetone,
    Air,
    Benzene,
    Ethanol,
    Isopropanol,
    MXylene,
    OXylene,
    PXylene,
    Styrene,
    Toluene,
}

impl VocClass {
    pub const ALL: [VocClass; N_CLASSES] = [
        VocClass::Acetone,
        VocClass::Air,
        VocClass::Benzene,
        VocClass::Ethanol,
        VocClass::Isopropanol,
        VocClass::MXylene,
        VocClass::OXylene,
        VocClass::PXylene,
        VocClass::Styrene,
        VocClass::Toluene,
    ];

    /// The nine compound classes, in regression-slot order.
    pub const COMPOUNDS: [VocClass; N_SLOTS] = [
        VocClass::Acetone,
        VocClass::Benzene,
        VocClass::Ethanol,
        VocClass::Isopropanol,
        VocClass::MXylene,
        VocClass::OXylene,
        VocClass::PXylene,
        VocClass::Styrene,
        VocClass::Toluene,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<VocClass> {
        Self::ALL.get(i).copied()
    }

    /// Position in the 9-slot concentration vector; `None` for air.
    pub fn slot(self) -> Option<usize> {
        match self {
            VocClass::Air => None,
            c if c.index() == 0 => Some(0),
            c => Some(c.index() - 1),
        }
    }

    pub fn from_slot(slot: usize) -> Option<VocClass> {
        Self::COMPOUNDS.get(slot).copied()
    }

    pub fn is_air(self) -> bool {
        self == VocClass::Air
    }

    pub fn name(self) -> &'static str {
        match self {
            VocClass::Acetone => "acetone",
            VocClass::Air => "air",
            VocClass::Benzene => "benzene",
            VocClass::Ethanol => "ethanol",
            VocClass::Isopropanol => "isopropanol",
            VocClass::MXylene => "m_xylene",
            VocClass::OXylene => "o_xylene",
            VocClass::PXylene => "p_xylene",
            VocClass::Styrene => "styrene",
            VocClass::Toluene => "toluene",
        }
    }

    /// PID conversion factor from the styrene-referenced reading to this compound.
    pub fn conversion_factor(self) -> Result<f64> {
        Ok(match self {
            VocClass::Acetone => 2.75,
            VocClass::Benzene => 1.325,
            VocClass::Ethanol => 30.0,
            VocClass::Isopropanol => 15.0,
            VocClass::MXylene => 1.1,
            VocClass::OXylene => 1.15,
            VocClass::PXylene => 0.975,
            VocClass::Styrene => 1.0,
            VocClass::Toluene => 1.25,
            VocClass::Air => {
                return Err(Error::Domain("air has no PID conversion factor".into()));
            }
        })
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|c| c.name()).collect()
    }
}

impl fmt::Display for VocClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VocClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        VocClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::Domain(format!("unknown class `{s}`")))
    }
}

/// One-hot vector over the ten classes.
pub fn one_hot(class: VocClass) -> [f64; N_CLASSES] {
    let mut v = [0.0; N_CLASSES];
    v[class.index()] = 1.0;
    v
}

/// Nine-slot concentration target: `concentration` at the class slot, zero
/// elsewhere; all zeros for air.
pub fn regression_target(class: VocClass, concentration: f64) -> [f64; N_SLOTS] {
    let mut v = [0.0; N_SLOTS];
    if let Some(s) = class.slot() {
        v[s] = concentration;
    }
    v
}

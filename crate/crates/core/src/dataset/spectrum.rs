use serde::{Deserialize, Serialize};

use super::classes::VocClass;
use crate::error::{Error, Result};

/// Channels per spectrum.
pub const N_CHANNELS: usize = 622;
pub const WAVENUMBER_MIN: f64 = 700.0;
pub const WAVENUMBER_MAX: f64 = 1300.0;

/// Uniform wavenumber grid (cm^-1), 700 to 1300 inclusive.
pub fn channel_grid() -> Vec<f64> {
    let step = channel_spacing();
    (0..N_CHANNELS)
        .map(|i| {
            if i == N_CHANNELS - 1 {
                WAVENUMBER_MAX
            } else {
                WAVENUMBER_MIN + step * i as f64
            }
        })
        .collect()
}

pub fn channel_spacing() -> f64 {
    (WAVENUMBER_MAX - WAVENUMBER_MIN) / (N_CHANNELS - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Experimental,
    SyntheticCorpus,
    CvaeGenerated,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Experimental => "experimental",
            Provenance::SyntheticCorpus => "synthetic_corpus",
            Provenance::CvaeGenerated => "cvae_generated",
        }
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        match s.trim() {
            "experimental" => Some(Provenance::Experimental),
            "synthetic_corpus" => Some(Provenance::SyntheticCorpus),
            "cvae_generated" => Some(Provenance::CvaeGenerated),
            _ => None,
        }
    }
}

/// One 622-channel absorbance spectrum with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    absorbance: Vec<f64>,
    class: VocClass,
    concentration: f64,
    provenance: Provenance,
}

impl Spectrum {
    /// Validates length, finiteness, non-negative absorbance and the
    /// air-has-zero-concentration rule.
    pub fn new(
        absorbance: Vec<f64>,
        class: VocClass,
        concentration: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if absorbance.len() != N_CHANNELS {
            return Err(Error::Shape {
                op: "spectrum",
                left: vec![N_CHANNELS],
                right: vec![absorbance.len()],
            });
        }
        if let Some((i, v)) = absorbance
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Domain(format!(
                "absorbance at channel {i} is {v}; must be finite and non-negative"
            )));
        }
        if !concentration.is_finite() || concentration < 0.0 {
            return Err(Error::Domain(format!(
                "concentration {concentration} must be finite and non-negative"
            )));
        }
        if class.is_air() && concentration != 0.0 {
            return Err(Error::Domain(format!(
                "air spectra carry zero concentration, got {concentration}"
            )));
        }
        Ok(Spectrum {
            absorbance,
            class,
            concentration,
            provenance,
        })
    }

    pub fn absorbance(&self) -> &[f64] {
        &self.absorbance
    }

    pub fn class(&self) -> VocClass {
        self.class
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = channel_grid();
        assert_eq!(g.len(), 622);
        assert_eq!(g[0], 700.0);
        assert_eq!(g[621], 1300.0);
        assert!((channel_spacing() - 0.966_183_574_879_227).abs() < 1e-12);
        assert!((g[1] - g[0] - 600.0 / 621.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invariants_enforced() {
        let ok = Spectrum::new(vec![0.1; 622], VocClass::Styrene, 5.0, Provenance::SyntheticCorpus);
        assert!(ok.is_ok());
        assert!(Spectrum::new(vec![0.1; 621], VocClass::Styrene, 5.0, Provenance::SyntheticCorpus).is_err());
        assert!(Spectrum::new(vec![0.1; 622], VocClass::Air, 1.0, Provenance::SyntheticCorpus).is_err());
        assert!(Spectrum::new(vec![0.1; 622], VocClass::Styrene, -1.0, Provenance::SyntheticCorpus).is_err());
        let mut neg = vec![0.1; 622];
        neg[3] = -0.01;
        assert!(Spectrum::new(neg, VocClass::Styrene, 1.0, Provenance::SyntheticCorpus).is_err());
    }
}

//! Beer-Lambert stand-in spectra built from Lorentzian absorption bands.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::classes::VocClass;
use super::spectrum::{channel_grid, Provenance, Spectrum, WAVENUMBER_MAX, WAVENUMBER_MIN};
use crate::error::{Error, Result};

pub const TEMPLATE_FORMAT_VERSION: u32 = 1;

/// One absorption band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Band centre, cm^-1.
    pub center: f64,
    /// Half width at half maximum, cm^-1.
    pub width: f64,
    /// Peak absorbance per ppm.
    pub strength: f64,
}

impl Peak {
    const fn new(center: f64, width: f64, strength: f64) -> Self {
        Peak {
            center,
            width,
            strength,
        }
    }
}

/// Lorentzian with unit height at `center`.
pub fn lorentzian(nu: f64, center: f64, width: f64) -> f64 {
    let d = nu - center;
    width * width / (d * d + width * width)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakTemplate {
    pub format_version: u32,
    pub peaks: BTreeMap<VocClass, Vec<Peak>>,
    /// Baseline absorbance at 700 cm^-1; rises linearly by 30 % towards 1300 cm^-1.
    pub baseline_amplitude: f64,
    pub noise_sigma: f64,
}

impl Default for PeakTemplate {
    fn default() -> Self {
        use VocClass::*;
        let p = Peak::new;
        let peaks = BTreeMap::from([
            (Acetone, vec![p(1217.0, 9.0, 0.010), p(1091.0, 7.0, 0.004), p(901.0, 6.0, 0.002)]),
            (Air, vec![]),
            (Benzene, vec![p(1038.0, 5.0, 0.008), p(1178.0, 6.0, 0.003), p(850.0, 8.0, 0.002)]),
            (Ethanol, vec![p(1066.0, 10.0, 0.006), p(1240.0, 9.0, 0.002), p(885.0, 8.0, 0.003)]),
            (
                Isopropanol,
                vec![
                    p(953.0, 7.0, 0.006),
                    p(1155.0, 8.0, 0.004),
                    p(1130.0, 6.0, 0.003),
                    p(1073.0, 8.0, 0.003),
                    p(817.0, 6.0, 0.002),
                ],
            ),
            (MXylene, vec![p(768.0, 5.0, 0.010), p(876.0, 5.0, 0.004), p(1040.0, 6.0, 0.003)]),
            (OXylene, vec![p(742.0, 5.0, 0.012), p(1052.0, 6.0, 0.003), p(1120.0, 6.0, 0.002)]),
            (PXylene, vec![p(795.0, 5.0, 0.011), p(1040.0, 6.0, 0.003), p(1122.0, 6.0, 0.002)]),
            (
                Styrene,
                vec![p(776.0, 5.0, 0.009), p(909.0, 5.0, 0.008), p(992.0, 5.0, 0.004), p(1025.0, 6.0, 0.002)],
            ),
            (Toluene, vec![p(729.0, 5.0, 0.011), p(1038.0, 5.0, 0.004), p(1080.0, 6.0, 0.002)]),
        ]);
        PeakTemplate {
            format_version: TEMPLATE_FORMAT_VERSION,
            peaks,
            baseline_amplitude: 0.01,
            noise_sigma: 0.002,
        }
    }
}

impl PeakTemplate {
    /// Checks band geometry and that overlapping bands exist between classes.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != TEMPLATE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported template format_version {}",
                self.format_version
            )));
        }
        if !(self.baseline_amplitude >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("baseline and noise must be non-negative".into()));
        }
        for class in VocClass::ALL {
            let peaks = self.peaks(class);
            if !class.is_air() && peaks.len() < 2 {
                return Err(Error::Config(format!("{class} needs at least two peaks")));
            }
            for pk in peaks {
                let ok = (WAVENUMBER_MIN..=WAVENUMBER_MAX).contains(&pk.center)
                    && pk.width > 0.0
                    && pk.strength > 0.0;
                if !ok {
                    return Err(Error::Config(format!("{class}: invalid peak {pk:?}")));
                }
            }
        }
        if self.shared_centers().len() < 2 {
            return Err(Error::Config(
                "at least two class pairs must share an absorption band".into(),
            ));
        }
        Ok(())
    }

    pub fn peaks(&self, class: VocClass) -> &[Peak] {
        self.peaks.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Class pairs whose band centres coincide.
    pub fn shared_centers(&self) -> Vec<(VocClass, VocClass, f64)> {
        let mut out = Vec::new();
        for (i, a) in VocClass::ALL.iter().enumerate() {
            for b in &VocClass::ALL[i + 1..] {
                for pa in self.peaks(*a) {
                    if self.peaks(*b).iter().any(|pb| pb.center == pa.center) {
                        out.push((*a, *b, pa.center));
                    }
                }
            }
        }
        out
    }

    pub fn baseline(&self, nu: f64) -> f64 {
        self.baseline_amplitude * (1.0 + 0.3 * (nu - WAVENUMBER_MIN) / (WAVENUMBER_MAX - WAVENUMBER_MIN))
    }

    /// Absorbance of the compound alone (no baseline, no noise) per channel.
    pub fn band_profile(&self, class: VocClass, concentration: f64) -> Vec<f64> {
        let peaks = self.peaks(class);
        channel_grid()
            .iter()
            .map(|&nu| {
                concentration
                    * peaks
                        .iter()
                        .map(|p| p.strength * lorentzian(nu, p.center, p.width))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Noise-free spectrum: bands plus baseline.
    pub fn clean_spectrum(&self, class: VocClass, concentration: f64) -> Vec<f64> {
        self.band_profile(class, concentration)
            .into_iter()
            .zip(channel_grid())
            .map(|(a, nu)| a + self.baseline(nu))
            .collect()
    }

    /// Channels within two half-widths of any band centre of `class`.
    pub fn peak_support(&self, class: VocClass) -> Vec<bool> {
        let peaks = self.peaks(class);
        channel_grid()
            .iter()
            .map(|&nu| peaks.iter().any(|p| (nu - p.center).abs() <= 2.0 * p.width))
            .collect()
    }

    /// Index of the channel closest to the strongest band of `class`.
    pub fn strongest_peak_channel(&self, class: VocClass) -> Option<usize> {
        let p = self
            .peaks(class)
            .iter()
            .max_by(|a, b| a.strength.total_cmp(&b.strength))?;
        let grid = channel_grid();
        (0..grid.len()).min_by(|&i, &j| {
            (grid[i] - p.center).abs().total_cmp(&(grid[j] - p.center).abs())
        })
    }

    /// Bands scaled by concentration, plus baseline and Gaussian noise,
    /// clipped at zero.
    pub fn synth_spectrum<R: Rng + ?Sized>(
        &self,
        class: VocClass,
        concentration: f64,
        rng: &mut R,
    ) -> Result<Spectrum> {
        if !concentration.is_finite() || concentration < 0.0 {
            return Err(Error::Domain(format!("negative concentration {concentration}")));
        }
        if class.is_air() && concentration != 0.0 {
            return Err(Error::Domain("air spectra must have zero concentration".into()));
        }
        let mut spectrum = self.clean_spectrum(class, concentration);
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| Error::Config(format!("noise: {e}")))?;
            for v in &mut spectrum {
                *v += noise.sample(rng);
            }
        }
        for v in &mut spectrum {
            *v = v.max(0.0);
        }
        Spectrum::new(spectrum, class, concentration, Provenance::SyntheticCorpus)
    }
}

//! Conversion of raw instrument readings into corpus spectra.

use super::classes::VocClass;
use super::spectrum::{channel_grid, Provenance, Spectrum, WAVENUMBER_MAX, WAVENUMBER_MIN};
use crate::error::{Error, Result};

/// Evaporation-chamber volume, litres.
pub const DEFAULT_CHAMBER_VOLUME: f64 = 0.6;
/// Multipass gas-cell volume, litres.
pub const DEFAULT_CELL_VOLUME: f64 = 2.0;

/// Concentration in the gas cell after expansion from the evaporation
/// chamber, and its uncertainty, from a PID reading in styrene-equivalent ppm.
///
/// `c = ppm * cf * v1 / (v1 + v2)`, `err = cf * v1 / (v1 + v2)`.
pub fn cell_concentration(ppm_reading: f64, cf: f64, v1: f64, v2: f64) -> Result<(f64, f64)> {
    for (name, v) in [("PID reading", ppm_reading), ("conversion factor", cf), ("chamber volume", v1), ("cell volume", v2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let dilution = v1 / (v1 + v2);
    Ok((ppm_reading * cf * dilution, cf * dilution))
}

/// Linearly interpolates `(wavenumbers, values)` onto the 622-channel grid.
/// The native axis may be ascending or descending but must cover 700-1300 cm^-1.
pub fn regrid(wavenumbers: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if wavenumbers.len() != values.len() || wavenumbers.len() < 2 {
        return Err(Error::Shape {
            op: "regrid",
            left: vec![wavenumbers.len()],
            right: vec![values.len()],
        });
    }
    let mut pts: Vec<(f64, f64)> = wavenumbers.iter().copied().zip(values.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    if lo > WAVENUMBER_MIN || hi < WAVENUMBER_MAX {
        return Err(Error::Domain(format!(
            "native range [{lo}, {hi}] cm^-1 does not cover [{WAVENUMBER_MIN}, {WAVENUMBER_MAX}]"
        )));
    }
    let mut j = 0;
    Ok(channel_grid()
        .into_iter()
        .map(|nu| {
            while j + 2 < pts.len() && pts[j + 1].0 < nu {
                j += 1;
            }
            let (x0, y0) = pts[j];
            let (x1, y1) = pts[j + 1];
            if x1 == x0 {
                y0
            } else {
                y0 + (y1 - y0) * (nu - x0) / (x1 - x0)
            }
        })
        .collect())
}

/// Converts a raw measurement into a [`Spectrum`]. Negative absorbance
/// produced by interpolation or instrument noise is clipped to zero.
pub fn ingest_measurement(
    class: VocClass,
    pid_ppm: f64,
    wavenumbers: &[f64],
    absorbance: &[f64],
    chamber_volume: f64,
    cell_volume: f64,
) -> Result<Spectrum> {
    let concentration = if class.is_air() {
        0.0
    } else {
        cell_concentration(pid_ppm, class.conversion_factor()?, chamber_volume, cell_volume)?.0
    };
    let values = regrid(wavenumbers, absorbance)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Spectrum::new(values, class, concentration, Provenance::Experimental)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styrene_example() {
        let (c, err) = cell_concentration(100.0, 1.0, 0.6, 2.0).unwrap();
        assert!((c - 23.076_923_076_923).abs() < 1e-9);
        assert!((err - 0.230_769_230_769).abs() < 1e-9);
    }

    #[test]
    fn acetone_example() {
        let cf = VocClass::Acetone.conversion_factor().unwrap();
        let (c, _) = cell_concentration(10.0, cf, 0.6, 2.0).unwrap();
        assert!((c - 6.346_153_846).abs() < 1e-8);
    }

    #[test]
    fn vanishing_reading_gives_vanishing_concentration() {
        let (c, _) = cell_concentration(1e-12, 30.0, 0.6, 2.0).unwrap();
        assert!(c < 1e-10);
    }

    #[test]
    fn linear_and_homogeneous() {
        let (a, _) = cell_concentration(10.0, 1.5, 0.6, 2.0).unwrap();
        let (b, _) = cell_concentration(30.0, 1.5, 0.6, 2.0).unwrap();
        let (c, _) = cell_concentration(10.0, 4.5, 0.6, 2.0).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
        assert!((c - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn non_positive_inputs_rejected() {
        assert!(cell_concentration(10.0, 1.0, 0.0, 2.0).is_err());
        assert!(cell_concentration(10.0, 1.0, 0.6, -2.0).is_err());
        assert!(cell_concentration(0.0, 1.0, 0.6, 2.0).is_err());
    }

    #[test]
    fn regrid_linear_function_exactly() {
        let nu: Vec<f64> = (0..200).map(|i| 1400.0 - i as f64 * 4.0).collect();
        let y: Vec<f64> = nu.iter().map(|v| 0.5 + 0.001 * v).collect();
        let out = regrid(&nu, &y).unwrap();
        for (o, g) in out.iter().zip(channel_grid()) {
            assert!((o - (0.5 + 0.001 * g)).abs() < 1e-12);
        }
    }

    #[test]
    fn regrid_rejects_short_range() {
        let nu: Vec<f64> = (0..100).map(|i| 800.0 + i as f64 * 6.0).collect();
        assert!(regrid(&nu, &vec![0.0; 100]).is_err());
    }

    #[test]
    fn ingest_applies_factor() {
        let nu: Vec<f64> = (0..=130).map(|i| 650.0 + i as f64 * 5.0).collect();
        let a = vec![0.02; nu.len()];
        let s = ingest_measurement(VocClass::Ethanol, 10.0, &nu, &a, 0.6, 2.0).unwrap();
        assert!((s.concentration() - 10.0 * 30.0 * 0.6 / 2.6).abs() < 1e-12);
        let air = ingest_measurement(VocClass::Air, 10.0, &nu, &a, 0.6, 2.0).unwrap();
        assert_eq!(air.concentration(), 0.0);
    }
}

//! Spectra CSV and raw-instrument CSV formats.
//!
//! Spectra CSV: a `# format_version=1` line, a header
//! `class,concentration_ppm,a0,...,a621[,provenance]`, then one spectrum
//! per row. Floats are written in shortest round-trip form, so a
//! write/read cycle is exact and reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::classes::VocClass;
use super::ingest;
use super::spectrum::{Provenance, Spectrum, N_CHANNELS};
use crate::error::{Error, Result};

pub const CSV_FORMAT_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "# format_version=";

/// Writes via a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line() as u64,
        column: e.column() as u64,
        msg: e.to_string(),
    })
}

pub fn spectra_header(with_provenance: bool) -> Vec<String> {
    let mut h = vec!["class".to_string(), "concentration_ppm".to_string()];
    h.extend((0..N_CHANNELS).map(|i| format!("a{i}")));
    if with_provenance {
        h.push("provenance".into());
    }
    h
}

/// Serialises spectra to CSV text.
pub fn spectra_to_csv<'a>(
    spectra: impl IntoIterator<Item = &'a Spectrum>,
    with_provenance: bool,
) -> Result<String> {
    let mut out = format!("{VERSION_PREFIX}{CSV_FORMAT_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| Error::Config(format!("csv write: {e}"));
        w.write_record(spectra_header(with_provenance)).map_err(csv_err)?;
        for s in spectra {
            let mut rec = Vec::with_capacity(N_CHANNELS + 3);
            rec.push(s.class().name().to_string());
            rec.push(s.concentration().to_string());
            rec.extend(s.absorbance().iter().map(f64::to_string));
            if with_provenance {
                rec.push(s.provenance().name().to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<buffer>", e))?;
    }
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

pub fn write_spectra_csv(path: &Path, spectra: &[Spectrum], with_provenance: bool) -> Result<()> {
    atomic_write(path, spectra_to_csv(spectra, with_provenance)?.as_bytes())
}

fn parse_err(file: &Path, line: u64, column: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        column,
        msg: msg.into(),
    }
}

fn check_version(file: &Path, text: &str) -> Result<()> {
    let first = text.lines().next().unwrap_or("");
    let Some(v) = first.trim().strip_prefix(VERSION_PREFIX) else {
        return Err(parse_err(file, 1, 1, format!("expected `{VERSION_PREFIX}{CSV_FORMAT_VERSION}`")));
    };
    match v.trim().parse::<u32>() {
        Ok(CSV_FORMAT_VERSION) => Ok(()),
        _ => Err(parse_err(file, 1, VERSION_PREFIX.len() as u64 + 1, format!("unsupported format version `{v}`"))),
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn csv_error(file: &Path, e: csv::Error) -> Error {
    let (line, column) = match e.position() {
        Some(p) => (p.line(), 1),
        None => (0, 0),
    };
    parse_err(file, line, column, e.to_string())
}

fn parse_f64(file: &Path, line: u64, column: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(file, line, column as u64 + 1, format!("`{field}` is not a finite number")))
}

/// Parses spectra CSV text; `file` is used only for error messages.
pub fn parse_spectra_csv(file: &Path, text: &str) -> Result<Vec<Spectrum>> {
    check_version(file, text)?;
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| csv_error(file, e))?.clone();
    let with_prov = match header.len() {
        n if n == N_CHANNELS + 2 => false,
        n if n == N_CHANNELS + 3 => true,
        n => {
            return Err(parse_err(file, 2, 1, format!(
                "header has {n} fields, expected {} or {}",
                N_CHANNELS + 2,
                N_CHANNELS + 3
            )))
        }
    };
    let expected = spectra_header(with_prov);
    if let Some(i) = header.iter().zip(&expected).position(|(a, b)| a.trim() != b) {
        return Err(parse_err(file, 2, i as u64 + 1, format!("expected column `{}`, found `{}`", expected[i], &header[i])));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(file, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(file, line, rec.len().min(header.len()) as u64 + 1, format!(
                "row has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        let class: VocClass = rec[0]
            .parse()
            .map_err(|e: Error| parse_err(file, line, 1, e.to_string()))?;
        let conc = parse_f64(file, line, 1, &rec[1])?;
        let mut absorbance = Vec::with_capacity(N_CHANNELS);
        for c in 0..N_CHANNELS {
            let v = parse_f64(file, line, c + 2, &rec[c + 2])?;
            if v < 0.0 {
                return Err(parse_err(file, line, c as u64 + 3, format!("negative absorbance {v}")));
            }
            absorbance.push(v);
        }
        let provenance = if with_prov {
            let f = &rec[N_CHANNELS + 2];
            Provenance::parse(f).ok_or_else(|| parse_err(file, line, N_CHANNELS as u64 + 3, format!("unknown provenance `{f}`")))?
        } else {
            Provenance::SyntheticCorpus
        };
        let s = Spectrum::new(absorbance, class, conc, provenance)
            .map_err(|e| parse_err(file, line, 2, e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

pub fn read_spectra_csv(path: &Path) -> Result<Vec<Spectrum>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spectra_csv(path, &text)
}

/// Raw instrument CSV: a version line, a header `class,pid_ppm,<nu_1>,...,<nu_n>`
/// whose trailing columns are wavenumbers (cm^-1), then one measurement per row.
/// Air rows may leave `pid_ppm` empty.
pub fn parse_raw_csv(file: &Path, text: &str, chamber_volume: f64, cell_volume: f64) -> Result<Vec<Spectrum>> {
    check_version(file, text)?;
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| csv_error(file, e))?.clone();
    if header.len() < 4 || header[0].trim() != "class" || header[1].trim() != "pid_ppm" {
        return Err(parse_err(file, 2, 1, "header must start with `class,pid_ppm` followed by wavenumbers"));
    }
    let wavenumbers = header
        .iter()
        .enumerate()
        .skip(2)
        .map(|(i, h)| parse_f64(file, 2, i, h))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(file, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(file, line, 1, format!("row has {} fields, header has {}", rec.len(), header.len())));
        }
        let class: VocClass = rec[0]
            .parse()
            .map_err(|e: Error| parse_err(file, line, 1, e.to_string()))?;
        let pid = if class.is_air() && rec[1].trim().is_empty() {
            0.0
        } else {
            parse_f64(file, line, 1, &rec[1])?
        };
        let values = (2..rec.len())
            .map(|c| parse_f64(file, line, c, &rec[c]))
            .collect::<Result<Vec<_>>>()?;
        let s = ingest::ingest_measurement(class, pid, &wavenumbers, &values, chamber_volume, cell_volume)
            .map_err(|e| parse_err(file, line, 2, e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

//! Adapter mapping external CSI layouts onto the `CSIR` container.
//!
//! The mapping is a small TOML document describing where each field lives.
//! CSV sources are the common case; "csir" passes an existing file through
//! unchanged (identity mapping). Ill-formed rows are dropped and counted,
//! and a time-domain heuristic flags a likely I/Q swap (conjugated CSI):
//! physical channels are causal, so their energy sits at early virtual
//! delays, while conjugation mirrors it onto late ones.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csir::{CsirReader, CsirWriter};
use crate::signal::{CsiRecord, Subcarriers52};
use crate::spectrum::active_bins_to_virtual_taps;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportMapping {
    /// "csv" or "csir" (identity passthrough).
    pub format: String,
    pub has_header: bool,
    pub device_col: usize,
    /// Column holding the position id, or absent for constant 0.
    pub position_col: Option<usize>,
    pub rx_col: Option<usize>,
    pub snr_col: Option<usize>,
    /// First of the 104 CSI columns.
    pub csi_start_col: usize,
    /// "interleaved" (re,im,re,im,...) or "split" (52 re then 52 im).
    pub csi_order: String,
}

impl Default for ImportMapping {
    fn default() -> Self {
        ImportMapping {
            format: "csv".into(),
            has_header: true,
            device_col: 0,
            position_col: Some(1),
            rx_col: Some(2),
            snr_col: Some(3),
            csi_start_col: 4,
            csi_order: "interleaved".into(),
        }
    }
}

impl ImportMapping {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        ImportMapping::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    pub imported: u64,
    pub dropped: u64,
    /// Reasons keyed by a short label, with row counts.
    pub drop_reasons: Vec<(String, u64)>,
    /// Heuristic: late-delay energy dominates, suggesting swapped I/Q.
    pub conjugation_suspected: bool,
}

impl ImportReport {
    fn drop(&mut self, reason: &str) {
        self.dropped += 1;
        if let Some(slot) = self.drop_reasons.iter_mut().find(|(r, _)| r == reason) {
            slot.1 += 1;
        } else {
            self.drop_reasons.push((reason.to_string(), 1));
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "imported {} records, dropped {}{}",
            self.imported,
            self.dropped,
            if self.conjugation_suspected {
                " [warning: I/Q swap suspected]"
            } else {
                ""
            }
        );
        for (reason, n) in &self.drop_reasons {
            s.push_str(&format!("\n  {}: {}", reason, n));
        }
        s
    }
}

/// Import `input` into a fresh `CSIR` file at `output`.
pub fn import_external(
    input: &Path,
    output: &Path,
    mapping: &ImportMapping,
) -> Result<ImportReport> {
    match mapping.format.as_str() {
        "csir" => import_csir(input, output),
        "csv" => import_csv(input, output, mapping),
        other => Err(Error::Config(format!(
            "unmappable layout: unknown format {:?}",
            other
        ))),
    }
}

fn import_csir(input: &Path, output: &Path) -> Result<ImportReport> {
    let reader = CsirReader::open(input)?;
    let mut writer = CsirWriter::create(output)?;
    let mut report = ImportReport::default();
    let mut head_energy = 0.0f64;
    let mut tail_energy = 0.0f64;
    for rec in reader {
        let rec = rec?;
        accumulate_delay_energy(&rec.csi, &mut head_energy, &mut tail_energy);
        writer.write_record(&rec)?;
        report.imported += 1;
    }
    writer.finish()?;
    report.conjugation_suspected = tail_energy > head_energy;
    Ok(report)
}

fn import_csv(input: &Path, output: &Path, mapping: &ImportMapping) -> Result<ImportReport> {
    let interleaved = match mapping.csi_order.as_str() {
        "interleaved" => true,
        "split" => false,
        other => {
            return Err(Error::Config(format!(
                "unmappable layout: unknown csi_order {:?}",
                other
            )))
        }
    };
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(mapping.has_header)
        .flexible(true)
        .from_path(input)
        .map_err(|e| Error::Config(format!("csv open: {}", e)))?;
    let mut writer = CsirWriter::create(output)?;
    let mut report = ImportReport::default();
    let mut head_energy = 0.0f64;
    let mut tail_energy = 0.0f64;

    for row in csv_reader.records() {
        let row = row.map_err(|e| Error::Config(format!("csv parse: {}", e)))?;
        let field = |col: usize| -> Option<&str> { row.get(col).map(str::trim) };
        let parse_num = |col: usize| -> Option<f64> { field(col)?.parse::<f64>().ok() };

        let Some(device) = parse_num(mapping.device_col) else {
            report.drop("missing or non-numeric device id");
            continue;
        };
        if device < 0.0 || device > u16::MAX as f64 {
            report.drop("device id out of range");
            continue;
        }
        let position = mapping
            .position_col
            .and_then(parse_num)
            .unwrap_or(0.0)
            .clamp(0.0, u8::MAX as f64) as u8;
        let rx = mapping
            .rx_col
            .and_then(parse_num)
            .unwrap_or(0.0)
            .clamp(0.0, u8::MAX as f64) as u8;
        let snr = mapping
            .snr_col
            .and_then(parse_num)
            .map(|v| v as f32)
            .filter(|v| v.is_finite());

        if row.len() < mapping.csi_start_col + 104 {
            report.drop("short row: fewer than 52 subcarriers");
            continue;
        }
        let mut values = [Complex64::new(0.0, 0.0); 52];
        let mut ok = true;
        for (k, v) in values.iter_mut().enumerate() {
            let (re_col, im_col) = if interleaved {
                (
                    mapping.csi_start_col + 2 * k,
                    mapping.csi_start_col + 2 * k + 1,
                )
            } else {
                (mapping.csi_start_col + k, mapping.csi_start_col + 52 + k)
            };
            match (parse_num(re_col), parse_num(im_col)) {
                (Some(re), Some(im)) if re.is_finite() && im.is_finite() => {
                    *v = Complex64::new(re, im);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            report.drop("non-numeric subcarrier value");
            continue;
        }
        let Ok(csi) = Subcarriers52::new(values) else {
            report.drop("non-finite subcarrier value");
            continue;
        };
        accumulate_delay_energy(&csi, &mut head_energy, &mut tail_energy);
        writer.write_record(&CsiRecord {
            csi,
            device_id: device as u16,
            position_id: position,
            rx_index: rx,
            snr_db: snr,
            channel_tag: 255, // unknown provenance
        })?;
        report.imported += 1;
    }
    writer.finish()?;
    report.conjugation_suspected = report.imported > 0 && tail_energy > head_energy;
    Ok(report)
}

/// Energy at early (1..26) vs late (26..51) virtual delays; the DC tap is
/// direction-neutral and skipped.
fn accumulate_delay_energy(csi: &Subcarriers52, head: &mut f64, tail: &mut f64) {
    let taps = active_bins_to_virtual_taps(csi.values());
    for (i, t) in taps.iter().enumerate() {
        if i == 0 {
            continue;
        }
        if i <= 25 {
            *head += t.norm_sqr();
        } else {
            *tail += t.norm_sqr();
        }
    }
}

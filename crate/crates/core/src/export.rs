//! Attention-map and per-clip exports: CSV for numbers, binary PGM for a
//! quick look at a map.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use crate::error::{write_bytes, Error, Result};
use crate::head::ClipAssessment;
use crate::model::Assessment;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One row per line, comma-separated, shortest round-trip formatting.
pub fn map_csv<T: Scalar>(map: &Tensor<T>) -> Result<String> {
    let (rows, cols) = map.dims2()?;
    let mut s = String::with_capacity(rows * cols * 20);
    for r in 0..rows {
        for (j, v) in map.row(r).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{}", v.as_f64()).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_map_csv(text: &str) -> Result<Tensor<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(crate::data::csv_err)?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Data(format!(
                "map row {rows} has {} entries",
                rec.len()
            )));
        }
        for f in &rec {
            data.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("map row {rows}: {e}")))?,
            );
        }
        rows += 1;
    }
    Tensor::matrix(rows, cols.unwrap_or(0), data)
}

/// 8-bit binary PGM, one pixel per entry, `round(255 · v / max)`. An
/// all-zero map is black.
pub fn map_pgm<T: Scalar>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let (rows, cols) = map.dims2()?;
    let vals: Vec<f64> = map.data().iter().map(|v| v.as_f64()).collect();
    if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric(
            "map entries must be finite and nonnegative".into(),
        ));
    }
    let max = vals.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(vals.iter().map(|v| {
        if max > 0.0 {
            (255.0 * v / max).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Per-clip table: weight, score, their product and the running total,
/// closed by a totals row whose last column is the final score.
pub fn clips_csv<T: Scalar>(clips: &ClipAssessment<T>) -> String {
    let mut s = String::from("clip_index,weight,score,contribution,running_total\n");
    let mut running = 0.0;
    let mut weight_sum = 0.0;
    for (k, (w, sc)) in clips.weights.iter().zip(&clips.scores).enumerate() {
        let (w, sc) = (w.as_f64(), sc.as_f64());
        running += w * sc;
        weight_sum += w;
        writeln!(s, "{k},{w},{sc},{},{running}", w * sc).unwrap();
    }
    writeln!(s, "total,{weight_sum},,{running},{running}").unwrap();
    s
}

/// Writes `self_layer{n}` and `cross_layer{n}` maps as `.csv` and `.pgm`
/// under `dir`, layers numbered from 1. Returns the paths written.
pub fn write_attention_maps<T: Scalar>(dir: &Path, a: &Assessment<T>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (kind, maps) in [("self", &a.self_maps), ("cross", &a.cross_maps)] {
        for (i, m) in maps.iter().enumerate() {
            let stem = format!("{kind}_layer{}", i + 1);
            let csv = dir.join(format!("{stem}.csv"));
            write_bytes(&csv, map_csv(m)?)?;
            let pgm = dir.join(format!("{stem}.pgm"));
            write_bytes(&pgm, map_pgm(m)?)?;
            written.push(csv);
            written.push(pgm);
        }
    }
    Ok(written)
}

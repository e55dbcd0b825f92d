//! Binary clip-feature files and CSV import.
//!
//! Layout (little-endian): magic `TQDF`, `u32` version (1), `u32` clip
//! count `L`, `u32` width `d`, then `L·d` `f32` values row-major. An
//! optional trailing section holds the label: tag `LABL` and an `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"TQDF";
pub const FEATURE_VERSION: u32 = 1;
pub const LABEL_TAG: &[u8; 4] = b"LABL";

/// Contents of one feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    /// `L × d`.
    pub features: Tensor<f32>,
    pub label: Option<f64>,
}

pub fn encode_features(features: &Tensor<f32>, label: Option<f64>) -> Result<Vec<u8>> {
    let (l, d) = features.dims2()?;
    let mut out = Vec::with_capacity(16 + 4 * l * d + 12);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(l)
            .map_err(|_| Error::Data("too many clips".into()))?
            .to_le_bytes(),
    );
    out.extend_from_slice(
        &u32::try_from(d)
            .map_err(|_| Error::Data("width too large".into()))?
            .to_le_bytes(),
    );
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(y) = label {
        out.extend_from_slice(LABEL_TAG);
        out.extend_from_slice(&y.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.err(format!(
                "truncated: need {n} bytes for {what}, {} left",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != FEATURE_MAGIC {
        r.pos = 0;
        return r.err("bad magic, expected TQDF");
    }
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        r.pos -= 4;
        return r.err(format!("unsupported version {version}"));
    }
    let l = r.u32("clip count")? as usize;
    let d = r.u32("feature width")? as usize;
    if l == 0 || d == 0 {
        r.pos -= 8;
        return r.err(format!("empty shape {l} x {d}"));
    }
    let n = l
        .checked_mul(d)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Parse {
            offset: 8,
            message: format!("shape {l} x {d} overflows"),
        })?;
    let mut data = Vec::with_capacity(n.min(bytes.len() / 4));
    for i in 0..n {
        let v = f32::from_le_bytes(r.take(4, "feature payload")?.try_into().unwrap());
        if !v.is_finite() {
            r.pos -= 4;
            return r.err(format!("non-finite value at element {i}"));
        }
        data.push(v);
    }
    let mut label = None;
    if r.pos < bytes.len() {
        if r.take(4, "section tag")? != LABEL_TAG {
            r.pos -= 4;
            return r.err("unknown trailing section");
        }
        let y = f64::from_le_bytes(r.take(8, "label")?.try_into().unwrap());
        if !y.is_finite() {
            r.pos -= 8;
            return r.err("non-finite label");
        }
        label = Some(y);
        if r.pos != bytes.len() {
            return r.err("trailing bytes after label");
        }
    }
    Ok(FeatureFile {
        features: Tensor::matrix(l, d, data)?,
        label,
    })
}

pub fn write_features(path: &Path, features: &Tensor<f32>, label: Option<f64>) -> Result<()> {
    crate::error::write_bytes(path, encode_features(features, label)?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    decode_features(&crate::error::read_bytes(path)?)
}

/// Reads features from CSV: a header row naming the `d` columns, then one
/// row per clip.
pub fn read_features_csv(path: &Path) -> Result<Tensor<f32>> {
    let bytes = crate::error::read_bytes(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let d = rdr.headers().map_err(csv_err)?.len();
    if d == 0 {
        return Err(Error::Data(format!("{}: empty header", path.display())));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, header has {d}",
                path.display(),
                rows + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|e| Error::Data(format!("{}: {field:?}: {e}", path.display())))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: non-finite value", path.display())));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: no clip rows", path.display())));
    }
    Tensor::matrix(rows, d, data)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv: {other:?}")),
    }
}

//! Spearman rank correlation, relative L2 distance, and the diagonality
//! diagnostic for query-similarity maps.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 1-based ranks with ties given the mean of the positions they span.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean(i+1..=j+1)
        let r = T::of((i + j) as f64 / 2.0 + 1.0);
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<T: Scalar>(p: &[T], q: &[T]) -> T {
    let n = T::of_usize(p.len());
    let pm = p.iter().copied().sum::<T>() / n;
    let qm = q.iter().copied().sum::<T>() / n;
    let mut num = T::zero();
    let mut sp = T::zero();
    let mut sq = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        num += (a - pm) * (b - qm);
        sp += (a - pm) * (a - pm);
        sq += (b - qm) * (b - qm);
    }
    num / (sp * sq).sqrt()
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn srcc<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "srcc lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Contract("srcc needs at least two samples".into()));
    }
    if pred.iter().chain(target).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("srcc of non-finite values".into()));
    }
    let constant = |v: &[T]| v.iter().all(|&x| x == v[0]);
    if constant(pred) || constant(target) {
        return Err(Error::Numeric(
            "rank correlation is undefined for a constant vector".into(),
        ));
    }
    let rho = pearson(&average_ranks(pred), &average_ranks(target));
    Ok(rho.max(-T::one()).min(T::one()))
}

/// `(1/N) Σ (|y − ŷ| / (y_max − y_min))²`, unscaled.
pub fn relative_l2<T: Scalar>(pred: &[T], target: &[T], y_min: T, y_max: T) -> Result<T> {
    if y_max.is_nan() || y_min.is_nan() || y_max <= y_min {
        return Err(Error::Range(format!(
            "relative L2 needs y_max > y_min, got [{y_min}, {y_max}]"
        )));
    }
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "relative L2 needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let range = y_max - y_min;
    let total: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = (p - t).abs() / range;
            e * e
        })
        .sum();
    Ok(total / T::of_usize(pred.len()))
}

/// Tolerance on each row of a map summing to one.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Mean diagonal mass of a row-stochastic square map: `1/K` for the
/// uniform map, `1` for the identity.
pub fn diagonality<T: Scalar>(map: &Tensor<T>) -> Result<T> {
    let (k, c) = map.dims2()?;
    if k != c || k == 0 {
        return Err(Error::Contract(format!(
            "diagonality needs a non-empty square map, got {:?}",
            map.shape()
        )));
    }
    for r in 0..k {
        let row = map.row(r);
        let s: f64 = row.iter().map(|x| x.as_f64()).sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&x| x < T::zero()) {
            return Err(Error::Contract(format!(
                "row {r} is off the simplex (sum {s})"
            )));
        }
    }
    Ok((0..k).map(|i| map.at(i, i)).sum::<T>() / T::of_usize(k))
}

/// Evaluation summary over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub srcc: f64,
    /// Relative L2 distance times 100.
    pub rl2_x100: f64,
    pub diagonality_per_layer: Vec<f64>,
    pub n_samples: usize,
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "srcc={}", self.srcc).unwrap();
        writeln!(s, "rl2_x100={}", self.rl2_x100).unwrap();
        for (i, d) in self.diagonality_per_layer.iter().enumerate() {
            writeln!(s, "diag_layer{}={}", i + 1, d).unwrap();
        }
        writeln!(s, "n_samples={}", self.n_samples).unwrap();
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut srcc = None;
        let mut rl2 = None;
        let mut n = None;
        let mut diag: Vec<(usize, f64)> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad report line {line:?}")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("{k}: {e}")))
            };
            match k.trim() {
                "srcc" => srcc = Some(num(v)?),
                "rl2_x100" => rl2 = Some(num(v)?),
                "n_samples" => {
                    n = Some(
                        v.trim()
                            .parse()
                            .map_err(|e| Error::Data(format!("{k}: {e}")))?,
                    )
                }
                other => {
                    let idx = other
                        .strip_prefix("diag_layer")
                        .and_then(|i| i.parse::<usize>().ok())
                        .ok_or_else(|| Error::Data(format!("unknown report key {other}")))?;
                    diag.push((idx, num(v)?));
                }
            }
        }
        diag.sort_by_key(|&(i, _)| i);
        let missing = |k: &str| Error::Data(format!("report is missing {k}"));
        Ok(Self {
            srcc: srcc.ok_or_else(|| missing("srcc"))?,
            rl2_x100: rl2.ok_or_else(|| missing("rl2_x100"))?,
            diagonality_per_layer: diag.into_iter().map(|(_, d)| d).collect(),
            n_samples: n.ok_or_else(|| missing("n_samples"))?,
        })
    }

    pub fn csv_header(layers: usize) -> String {
        let mut h = String::from("srcc,rl2_x100");
        for i in 1..=layers {
            write!(h, ",diag_layer{i}").unwrap();
        }
        h.push_str(",n_samples");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{}", self.srcc, self.rl2_x100);
        for d in &self.diagonality_per_layer {
            write!(r, ",{d}").unwrap();
        }
        write!(r, ",{}", self.n_samples).unwrap();
        r
    }
}

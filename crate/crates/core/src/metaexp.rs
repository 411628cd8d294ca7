//! Meta-experiment arithmetic: how far an article-randomized estimate sits
//! from a cluster-randomized estimate of the same treatment.

use std::io::{Read, Write};
use std::path::Path;

use crate::csvfmt;
use crate::error::{LabError, Result};
use crate::scalar::Scalar;

/// Default divisor turning a 95% confidence half-width into a standard error.
pub const DEFAULT_HALFWIDTH_DIVISOR: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaExperimentInput<T> {
    pub label: String,
    pub est_clustered: T,
    /// Confidence half-width of the clustered estimate, in estimate units.
    pub ci_halfwidth: T,
    pub est_article: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaComparison<T> {
    pub label: String,
    /// `(est_article - est_clustered) / est_clustered`; `None` when the
    /// clustered estimate is zero.
    pub relative_bias: Option<T>,
    /// Gap in units of the clustered estimate's standard error.
    pub sigma_distance: T,
}

pub fn compare<T: Scalar>(input: &MetaExperimentInput<T>, halfwidth_divisor: T) -> Result<MetaComparison<T>> {
    let finite = [input.est_clustered, input.ci_halfwidth, input.est_article, halfwidth_divisor]
        .iter()
        .all(|x| x.is_finite());
    if !finite {
        return Err(LabError::input(format!("{}: inputs must be finite", input.label)));
    }
    if input.ci_halfwidth <= T::zero() {
        return Err(LabError::input(format!("{}: ci_halfwidth must be positive", input.label)));
    }
    if halfwidth_divisor <= T::zero() {
        return Err(LabError::input("halfwidth divisor must be positive"));
    }
    let gap = input.est_article - input.est_clustered;
    let relative_bias = if input.est_clustered == T::zero() {
        log::warn!("{}: clustered estimate is zero, relative bias undefined", input.label);
        None
    } else {
        Some(gap / input.est_clustered)
    };
    Ok(MetaComparison {
        label: input.label.clone(),
        relative_bias,
        sigma_distance: gap / (input.ci_halfwidth / halfwidth_divisor),
    })
}

pub const META_INPUT_HEADER: [&str; 4] = ["label", "est_clustered", "ci_halfwidth", "est_article"];

pub const META_OUTPUT_HEADER: [&str; 6] = [
    "label",
    "est_clustered",
    "ci_halfwidth",
    "est_article",
    "relative_bias",
    "sigma_distance",
];

pub fn read_meta_csv<T: Scalar, R: Read>(reader: R, origin: &Path) -> Result<Vec<MetaExperimentInput<T>>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().collect::<Vec<_>>() != META_INPUT_HEADER {
        return Err(LabError::Parse {
            path: origin.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", META_INPUT_HEADER.join(",")),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<T> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .map(T::lit)
                    .ok_or_else(|| LabError::Parse {
                        path: origin.to_path_buf(),
                        line,
                        message: format!("invalid {}", META_INPUT_HEADER[i]),
                    })
            };
            Ok(MetaExperimentInput {
                label: rec.get(0).unwrap_or_default().to_string(),
                est_clustered: num(1)?,
                ci_halfwidth: num(2)?,
                est_article: num(3)?,
            })
        })
        .collect()
}

pub fn write_meta_csv<T: Scalar, W: Write>(
    rows: &[(MetaExperimentInput<T>, MetaComparison<T>)],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(META_OUTPUT_HEADER)?;
    let f = |x: T| csvfmt::float(x.to_f64_lossy());
    for (input, cmp) in rows {
        w.write_record([
            input.label.clone(),
            f(input.est_clustered),
            f(input.ci_halfwidth),
            f(input.est_article),
            cmp.relative_bias.map_or_else(|| csvfmt::float(f64::NAN), f),
            f(cmp.sigma_distance),
        ])?;
    }
    w.flush().map_err(|e| LabError::io("<meta csv>", e))?;
    Ok(())
}

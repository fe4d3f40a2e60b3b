//! Fit tables (CSV) and metadata (JSON).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use crate::econometrics::ols::{coefficient, Contrast};
use crate::econometrics::specs::SpecResult;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Coefficients first (term as named in the design), then contrasts as `contrast:<label>`.
pub fn write_fit_csv<T: Scalar>(path: &Path, result: &SpecResult<T>, preamble: &str) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(preamble.as_bytes()).map_err(io)?;
    writeln!(w, "term,estimate,se,z,p,ci_lo,ci_hi").map_err(io)?;
    let line = |w: &mut BufWriter<File>, term: &str, c: &Contrast<T>| {
        writeln!(
            w,
            "{term},{:.10},{:.10},{:.6},{:.6},{:.10},{:.10}",
            c.estimate.as_f64(),
            c.se.as_f64(),
            c.z.as_f64(),
            c.p.as_f64(),
            c.ci_lo.as_f64(),
            c.ci_hi.as_f64()
        )
    };
    for name in &result.fit.names {
        match coefficient(&result.fit, name) {
            Ok(c) => line(&mut w, name, &c).map_err(io)?,
            Err(_) => writeln!(w, "{name},{:.10},,,,,", result.fit.coef(name).unwrap().as_f64()).map_err(io)?,
        }
    }
    for c in &result.contrasts {
        line(&mut w, &format!("contrast:{}", c.label), c).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn fit_metadata<T: Scalar>(result: &SpecResult<T>, fingerprint: &str) -> serde_json::Value {
    let f = &result.fit;
    json!({
        "spec": result.spec.as_str(),
        "n": f.n,
        "k": f.k,
        "g": f.g,
        "r2": f.r2.as_f64(),
        "adj_r2": f.adj_r2.as_f64(),
        "se_type": "CR1",
        "small_sample_factor": f.small_sample_factor.as_f64(),
        "ci_method": f.ci_method,
        "dropped_columns": result.dropped_columns,
        "skipped_contrasts": result.skipped_contrasts,
        "fingerprint": fingerprint,
    })
}

pub fn write_fit_json<T: Scalar>(path: &Path, result: &SpecResult<T>, fingerprint: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(&fit_metadata(result, fingerprint)).expect("json");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

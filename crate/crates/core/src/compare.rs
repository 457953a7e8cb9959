//! Runs every sharpening method on one scene and scores it against a
//! reference, producing one table row per method.

use std::fmt::Write as _;

use crate::baselines::{
    shared_pan, sharpen_bicubic, sharpen_gihs, sharpen_hpf, sharpen_pca, synth_pan, DEFAULT_BOX,
};
use crate::error::{Error, Result};
use crate::fusion::forward_sr;
use crate::metrics::{evaluate, MetricsConfig, MetricsReport};
use crate::net::FusionModel;
use crate::raster::RasterStack;
use crate::resample::SeparableKernel;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub report: MetricsReport,
}

/// Fused products of the classical methods, in table order.
pub fn baseline_products(z: &RasterStack, x: &RasterStack) -> Result<Vec<(String, RasterStack)>> {
    let up = sharpen_bicubic(x)?;
    let (pans, _) = synth_pan(z, &up)?;
    let (pan, _) = shared_pan(z, &up)?;
    Ok(vec![
        ("PCA".to_string(), sharpen_pca(&up, &pan)?),
        ("IHS".to_string(), sharpen_gihs(&up, &pan)?),
        ("HPF".to_string(), sharpen_hpf(&up, &pans, DEFAULT_BOX)?),
        ("bicubic".to_string(), up),
    ])
}

/// Scores the baselines and each labelled model on `(z, x)` against
/// `reference`. Model labels must be unique.
pub fn compare_methods(
    z: &RasterStack,
    x: &RasterStack,
    reference: &RasterStack,
    models: &[(String, FusionModel)],
    hpf_kernel: &SeparableKernel,
    metrics: &MetricsConfig,
) -> Result<Vec<MethodRow>> {
    let mut products = baseline_products(z, x)?;
    for (label, model) in models {
        if products.iter().any(|(m, _)| m == label) {
            return Err(Error::Config(format!("duplicate method label {:?}", label)));
        }
        products.push((label.clone(), forward_sr(model, Some(z), x, hpf_kernel)?));
    }
    products
        .into_iter()
        .map(|(method, fused)| {
            Ok(MethodRow {
                report: evaluate(&fused, reference, metrics)?,
                method,
            })
        })
        .collect()
}

/// CSV with the header of the first row's report.
pub fn rows_to_csv(rows: &[MethodRow]) -> String {
    let mut out = String::new();
    if let Some(first) = rows.first() {
        let _ = writeln!(out, "{}", first.report.csv_header());
    }
    for r in rows {
        let _ = writeln!(out, "{}", r.report.csv_row(&r.method));
    }
    out
}

pub fn find<'a>(rows: &'a [MethodRow], method: &str) -> Option<&'a MetricsReport> {
    rows.iter().find(|r| r.method == method).map(|r| &r.report)
}

//! Per-view PSNR/SSIM tables for a trained field.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalio::manifest::DatasetManifest;
use crate::evalio::metrics::{psnr, ssim, SsimParams};
use crate::field::FieldParams;
use crate::renderer::Image;
use crate::trainer::render_field;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub view_id: String,
    pub phi_deg: f64,
    pub theta_deg: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        Some(Self {
            mean: values.clone().sum::<f64>() / n as f64,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn psnr_summary(&self) -> Option<Summary> {
        Summary::of(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn ssim_summary(&self) -> Option<Summary> {
        Summary::of(self.rows.iter().map(|r| r.ssim))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("view_id,phi_deg,theta_deg,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.view_id, r.phi_deg, r.theta_deg, r.psnr_db, r.ssim
            ));
        }
        match (self.psnr_summary(), self.ssim_summary()) {
            (Some(p), Some(s)) => {
                out.push_str(&format!("# views={}\n", self.rows.len()));
                out.push_str(&format!(
                    "# psnr_db mean={:.6} min={:.6} max={:.6}\n",
                    p.mean, p.min, p.max
                ));
                out.push_str(&format!(
                    "# ssim mean={:.6} min={:.6} max={:.6}\n",
                    s.mean, s.min, s.max
                ));
            }
            _ => out.push_str("# views=0\n# aggregate undefined\n"),
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `(view_id, phi_deg, theta_deg, prediction, ground_truth)`.
pub type ScoredPair = (String, f64, f64, Image<f64>, Image<f64>);

/// Scores prediction/ground-truth pairs that are already normalised.
pub fn score_images(
    items: &[ScoredPair],
) -> Result<EvalTable> {
    let rows = items
        .iter()
        .map(|(id, phi, theta, pred, gt)| {
            Ok(EvalRow {
                view_id: id.clone(),
                phi_deg: *phi,
                theta_deg: *theta,
                psnr_db: psnr(pred, gt)?,
                ssim: ssim(pred, gt, SsimParams::default())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalTable { rows })
}

/// Renders every pose of `manifest` and scores it against the stored image
/// on the manifest's normalised scale. Rows keep manifest order.
pub fn evaluate_views(params: &FieldParams<f64>, manifest: &DatasetManifest) -> Result<EvalTable> {
    let rows = manifest
        .entries
        .par_iter()
        .map(|e| {
            let config = manifest.config_for(e)?;
            let gt = manifest.load_normalised(e)?;
            let pred = render_field(params, &e.pose, config)?;
            Ok(EvalRow {
                view_id: e
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                phi_deg: e.pose.phi_deg(),
                theta_deg: e.pose.theta_deg(),
                psnr_db: psnr(&pred, &gt)?,
                ssim: ssim(&pred, &gt, SsimParams::default())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTable { rows })
}

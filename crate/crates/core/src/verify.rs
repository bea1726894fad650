//! Scanning-robustness evaluation: success rates over corpora, error-module
//! overlays, and sweeps across levels, tilt angles and messages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::desk::blend_with_code;
use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::qr::decode::{sample_grid, sample_warped};
use crate::qr::{decode, decode_warped, encode, rasterize, CodeConfig, EcLevel, ModuleMatrix};
use crate::refine::{conform, repair, RefineConfig};
use crate::srl::Srl;
use crate::tilt::{simulate_tilt, TiltSpec};

/// How an item is presented to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScanOptions {
    pub code: CodeConfig,
    /// Warp before decoding; `None` decodes the raster as is.
    pub tilt: Option<TiltSpec>,
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub label: String,
    pub image: PixelImage,
    pub payload: Vec<u8>,
    /// Module pattern the image was made to show, for error-rate reporting.
    pub target: Option<ModuleMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub label: String,
    pub scannable: bool,
    /// Total repairs the decoder made (codewords, format, function, remainder).
    pub corrections: Option<usize>,
    /// Fraction of modules sampled differently from the target, as the decoder saw them.
    pub error_rate: Option<f64>,
    pub failure: Option<String>,
}

/// Decodes one image and compares the payload byte for byte.
pub fn scan(
    label: &str,
    image: &PixelImage,
    payload: &[u8],
    target: Option<&ModuleMatrix>,
    opts: &ScanOptions,
) -> ScanResult {
    let result = (|| -> Result<(Result<crate::qr::Decoded>, Option<f64>)> {
        let code = &opts.code;
        let side = code.image_side();
        if image.width() != side || image.height() != side {
            return Err(Error::ExtentMismatch(format!(
                "{}x{} image for a {side}px symbol",
                image.width(),
                image.height()
            )));
        }
        let grid = code.geometry();
        let (decoded, sampled) = match opts.tilt {
            Some(spec) => {
                let tilted = simulate_tilt(image, &spec)?;
                let warp = tilted.unwarp.inverse()?;
                (
                    decode_warped(&tilted.image, code, &tilted.unwarp),
                    sample_warped(&tilted.image, grid, &warp),
                )
            }
            None => (decode(image, code), sample_grid(image, grid)?),
        };
        let error_rate = target.map(|t| {
            let wrong = sampled.iter().zip(t.cells()).filter(|(a, b)| a != b).count();
            wrong as f64 / sampled.len() as f64
        });
        Ok((decoded, error_rate))
    })();
    match result {
        Ok((Ok(d), error_rate)) if d.payload == payload => ScanResult {
            label: label.to_string(),
            scannable: true,
            corrections: Some(d.report.total()),
            error_rate,
            failure: None,
        },
        Ok((Ok(_), error_rate)) => ScanResult {
            label: label.to_string(),
            scannable: false,
            corrections: None,
            error_rate,
            failure: Some("decoded a different payload".into()),
        },
        Ok((Err(e), error_rate)) => ScanResult {
            label: label.to_string(),
            scannable: false,
            corrections: None,
            error_rate,
            failure: Some(e.to_string()),
        },
        Err(e) => ScanResult {
            label: label.to_string(),
            scannable: false,
            corrections: None,
            error_rate: None,
            failure: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsrReport {
    pub corpus_size: usize,
    pub scannable: usize,
    pub ssr: f64,
    pub items: Vec<ScanResult>,
}

impl SsrReport {
    pub fn from_items(items: Vec<ScanResult>) -> Self {
        let scannable = items.iter().filter(|i| i.scannable).count();
        SsrReport {
            corpus_size: items.len(),
            scannable,
            ssr: if items.is_empty() {
                0.0
            } else {
                scannable as f64 / items.len() as f64
            },
            items,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .items
            .iter()
            .map(|i| {
                vec![
                    i.label.clone(),
                    if i.scannable { "yes".into() } else { "no".into() },
                    i.corrections.map_or("-".into(), |c| c.to_string()),
                    i.error_rate.map_or("-".into(), |e| format!("{e:.4}")),
                    i.failure.clone().unwrap_or_default(),
                ]
            })
            .collect();
        rows.push(vec![
            "SSR".into(),
            format!("{}/{}", self.scannable, self.corpus_size),
            String::new(),
            String::new(),
            format!("{:.4}", self.ssr),
        ]);
        format_table(&["item", "scannable", "corrections", "error_rate", "note"], &rows)
    }
}

/// Scanning success rate of a corpus; items are scanned independently.
pub fn ssr(corpus: &[CorpusItem], opts: &ScanOptions) -> Result<SsrReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("empty corpus".into()));
    }
    let items = corpus
        .par_iter()
        .map(|it| scan(&it.label, &it.image, &it.payload, it.target.as_ref(), opts))
        .collect();
    Ok(SsrReport::from_items(items))
}

/// Copy of `image` with every misread module (φ = 1) tinted red at 50%.
pub fn overlay_errors(image: &PixelImage, target: &ModuleMatrix) -> Result<PixelImage> {
    let srl = Srl::for_image(image, target)?;
    let phi = srl.report(image, target)?.phi();
    let grid = srl.grid();
    let mut out = image.to_rgb();
    let m = grid.modules;
    let s = grid.module_px;
    for (k, _) in phi.iter().enumerate().filter(|(_, &p)| p) {
        let (x0, y0) = grid.module_origin(k / m, k % m);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                for (c, red) in [1.0, 0.0, 0.0].into_iter().enumerate() {
                    let v = out.get(x, y, c);
                    out.set(x, y, c, 0.5 * v + 0.5 * red);
                }
            }
        }
    }
    Ok(out)
}

/// Cartesian sweep over levels, tilt angles and messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub ec_levels: Vec<EcLevel>,
    pub angles: Vec<f64>,
    pub messages: Vec<String>,
    /// Photo weight when blending inputs with the code; 1.0 repairs the inputs as given.
    pub blend_alpha: f64,
    pub focal: f64,
    pub code: CodeConfig,
    /// Refinement settings; `tau` is replaced by each level's nominal capacity.
    pub refine: RefineConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ec_levels: vec![EcLevel::M],
            angles: vec![0.0],
            messages: vec!["Thanks reviewer!".into()],
            blend_alpha: crate::desk::BLEND_ALPHA,
            focal: TiltSpec::DEFAULT_FOCAL,
            code: CodeConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ec_level: EcLevel,
    pub angle: f64,
    pub message: String,
    pub corpus_size: usize,
    pub scannable: usize,
    pub ssr: f64,
    /// Why the row was not run (e.g. the message does not fit).
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.ec_level.to_string(),
                    format!("{}", r.angle),
                    r.message.clone(),
                    r.corpus_size.to_string(),
                    r.scannable.to_string(),
                    match &r.skipped {
                        Some(why) => format!("skipped: {why}"),
                        None => format!("{:.4}", r.ssr),
                    },
                ]
            })
            .collect();
        format_table(&["ec", "angle", "message", "n", "scannable", "ssr"], &rows)
    }
}

/// Repairs every input for each (level, message) and scans the results at
/// every angle. Rows come out in level, message, angle order.
pub fn sweep(spec: &SweepSpec, inputs: &[PixelImage]) -> Result<SweepReport> {
    if !(0.0..=1.0).contains(&spec.blend_alpha) {
        return Err(Error::InvalidConfig(format!(
            "blend_alpha {} outside [0, 1]",
            spec.blend_alpha
        )));
    }
    let mut rows = Vec::new();
    for &ec in &spec.ec_levels {
        let code = spec.code.with_ec(ec);
        code.validate()?;
        let refine_cfg = RefineConfig {
            tau: ec.nominal_capacity(),
            ..spec.refine
        };
        for message in &spec.messages {
            let payload = message.as_bytes();
            let y = match encode(payload, &code) {
                Ok(y) => y,
                Err(e @ Error::CapacityExceeded { .. }) => {
                    rows.extend(spec.angles.iter().map(|&angle| SweepRow {
                        ec_level: ec,
                        angle,
                        message: message.clone(),
                        corpus_size: 0,
                        scannable: 0,
                        ssr: 0.0,
                        skipped: Some(e.to_string()),
                    }));
                    continue;
                }
                Err(e) => return Err(e),
            };
            if spec.angles.is_empty() {
                continue;
            }
            let raster = rasterize(&y, &code);
            let results: Vec<Vec<bool>> = inputs
                .par_iter()
                .map(|input| -> Result<Vec<bool>> {
                    let x0 = blend_with_code(&conform(input, &code)?, &raster, spec.blend_alpha)?;
                    let repaired = repair(&x0, payload, &code, &refine_cfg)?;
                    Ok(spec
                        .angles
                        .iter()
                        .map(|&angle| {
                            let opts = ScanOptions {
                                code,
                                tilt: (angle != 0.0).then_some(TiltSpec {
                                    degrees: angle,
                                    focal: spec.focal,
                                }),
                            };
                            scan("", &repaired.image, payload, None, &opts).scannable
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            for (a, &angle) in spec.angles.iter().enumerate() {
                let scannable = results.iter().filter(|r| r[a]).count();
                rows.push(SweepRow {
                    ec_level: ec,
                    angle,
                    message: message.clone(),
                    corpus_size: results.len(),
                    scannable,
                    ssr: if results.is_empty() {
                        0.0
                    } else {
                        scannable as f64 / results.len() as f64
                    },
                    skipped: None,
                });
            }
        }
    }
    Ok(SweepReport { rows })
}

/// Left-aligned columns separated by two spaces, with a rule under the header.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

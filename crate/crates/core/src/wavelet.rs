//! Orthonormal 2D Haar pyramid, MAD noise estimate, universal threshold and
//! hard thresholding.
//!
//! Layout after each analysis level on the current approximation region of
//! size `h1 x h2`: approximation in the top-left `h1/2 x h2/2` quadrant,
//! `DH` (high-pass along rows, low-pass along columns) top-right, `DV`
//! bottom-left, `DD` bottom-right. For a 2x2 block `(a, b; c, d)`:
//! `A = (a+b+c+d)/2`, `DH = (a-b+c-d)/2`, `DV = (a+b-c-d)/2`,
//! `DD = (a-b-c+d)/2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagio::{encode_csv_matrix, parse_csv_matrix, write_atomic, GrayImage};

pub const DEFAULT_LEVELS: u32 = 3;

/// Divisor turning the median absolute deviation into a Gaussian sigma.
pub const MAD_TO_SIGMA: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetailBand {
    Horizontal,
    Vertical,
    Diagonal,
}

/// Which level-1 detail coefficients feed the noise estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaBand {
    /// `DH1 ∪ DV1 ∪ DD1`.
    #[default]
    Pooled,
    /// `DD1` only.
    Dd1,
}

impl std::str::FromStr for SigmaBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pooled" => Ok(SigmaBand::Pooled),
            "dd1" => Ok(SigmaBand::Dd1),
            other => Err(Error::InvalidArgument(format!(
                "unknown sigma band `{other}` (expected pooled or dd1)"
            ))),
        }
    }
}

impl std::fmt::Display for SigmaBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SigmaBand::Pooled => "pooled",
            SigmaBand::Dd1 => "dd1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    n1: usize,
    n2: usize,
    levels: u32,
    coeffs: Vec<f64>,
}

impl WaveletPyramid {
    pub fn from_coeffs(n1: usize, n2: usize, levels: u32, coeffs: Vec<f64>) -> Result<Self> {
        GrayImage::new(n1, n2, coeffs.clone())?.require_dyadic(levels)?;
        Ok(Self {
            n1,
            n2,
            levels,
            coeffs,
        })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Rows and columns of the coarsest approximation band.
    pub fn approx_dims(&self) -> (usize, usize) {
        (self.n1 >> self.levels, self.n2 >> self.levels)
    }

    pub fn is_approximation(&self, row: usize, col: usize) -> bool {
        let (a1, a2) = self.approx_dims();
        row < a1 && col < a2
    }

    /// Row and column ranges of a detail sub-band at `level` (1 = finest).
    pub fn band_region(
        &self,
        level: u32,
        band: DetailBand,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        assert!(
            level >= 1 && level <= self.levels,
            "level {level} out of range"
        );
        let h1 = self.n1 >> level;
        let h2 = self.n2 >> level;
        match band {
            DetailBand::Horizontal => (0..h1, h2..2 * h2),
            DetailBand::Vertical => (h1..2 * h1, 0..h2),
            DetailBand::Diagonal => (h1..2 * h1, h2..2 * h2),
        }
    }

    pub fn band(&self, level: u32, band: DetailBand) -> Vec<f64> {
        let (rows, cols) = self.band_region(level, band);
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for r in rows {
            out.extend_from_slice(&self.coeffs[r * self.n2 + cols.start..r * self.n2 + cols.end]);
        }
        out
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// Three-level analysis.
pub fn dwt2(img: &GrayImage) -> Result<WaveletPyramid> {
    dwt2_levels(img, DEFAULT_LEVELS)
}

pub fn dwt2_levels(img: &GrayImage, levels: u32) -> Result<WaveletPyramid> {
    img.require_dyadic(levels)?;
    let (n1, n2) = (img.n1(), img.n2());
    let mut coeffs = img.data().to_vec();
    let mut scratch = vec![0.0; n1 * n2];
    for level in 0..levels {
        analyze_region(&mut coeffs, &mut scratch, n2, n1 >> level, n2 >> level);
    }
    Ok(WaveletPyramid {
        n1,
        n2,
        levels,
        coeffs,
    })
}

pub fn idwt2(pyr: &WaveletPyramid) -> GrayImage {
    let (n1, n2) = (pyr.n1, pyr.n2);
    let mut data = pyr.coeffs.clone();
    let mut scratch = vec![0.0; n1 * n2];
    for level in (0..pyr.levels).rev() {
        synthesize_region(&mut data, &mut scratch, n2, n1 >> level, n2 >> level);
    }
    GrayImage::new(n1, n2, data).expect("synthesis of finite coefficients is finite")
}

fn analyze_region(buf: &mut [f64], scratch: &mut [f64], stride: usize, h1: usize, h2: usize) {
    let (q1, q2) = (h1 / 2, h2 / 2);
    for i in 0..q1 {
        for j in 0..q2 {
            let a = buf[2 * i * stride + 2 * j];
            let b = buf[2 * i * stride + 2 * j + 1];
            let c = buf[(2 * i + 1) * stride + 2 * j];
            let d = buf[(2 * i + 1) * stride + 2 * j + 1];
            scratch[i * stride + j] = 0.5 * (a + b + c + d);
            scratch[i * stride + q2 + j] = 0.5 * (a - b + c - d);
            scratch[(q1 + i) * stride + j] = 0.5 * (a + b - c - d);
            scratch[(q1 + i) * stride + q2 + j] = 0.5 * (a - b - c + d);
        }
    }
    for r in 0..h1 {
        buf[r * stride..r * stride + h2].copy_from_slice(&scratch[r * stride..r * stride + h2]);
    }
}

fn synthesize_region(buf: &mut [f64], scratch: &mut [f64], stride: usize, h1: usize, h2: usize) {
    let (q1, q2) = (h1 / 2, h2 / 2);
    for i in 0..q1 {
        for j in 0..q2 {
            let ll = buf[i * stride + j];
            let dh = buf[i * stride + q2 + j];
            let dv = buf[(q1 + i) * stride + j];
            let dd = buf[(q1 + i) * stride + q2 + j];
            scratch[2 * i * stride + 2 * j] = 0.5 * (ll + dh + dv + dd);
            scratch[2 * i * stride + 2 * j + 1] = 0.5 * (ll - dh + dv - dd);
            scratch[(2 * i + 1) * stride + 2 * j] = 0.5 * (ll + dh - dv - dd);
            scratch[(2 * i + 1) * stride + 2 * j + 1] = 0.5 * (ll - dh - dv + dd);
        }
    }
    for r in 0..h1 {
        buf[r * stride..r * stride + h2].copy_from_slice(&scratch[r * stride..r * stride + h2]);
    }
}

/// Median with the even-length convention of averaging the two central values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// `median |c| / 0.6745` over the sample.
pub fn mad_sigma(details: &[f64]) -> f64 {
    let mut abs: Vec<f64> = details.iter().map(|c| c.abs()).collect();
    median(&mut abs).map_or(0.0, |m| m / MAD_TO_SIGMA)
}

pub fn estimate_noise_sigma(pyr: &WaveletPyramid, band: SigmaBand) -> f64 {
    let details = match band {
        SigmaBand::Dd1 => pyr.band(1, DetailBand::Diagonal),
        SigmaBand::Pooled => {
            let mut all = pyr.band(1, DetailBand::Horizontal);
            all.extend(pyr.band(1, DetailBand::Vertical));
            all.extend(pyr.band(1, DetailBand::Diagonal));
            all
        }
    };
    mad_sigma(&details)
}

/// `sigma * sqrt(2 ln n)`.
pub fn universal_threshold(sigma: f64, n: usize) -> f64 {
    assert!(n >= 2, "universal threshold needs at least two pixels");
    sigma * (2.0 * (n as f64).ln()).sqrt()
}

/// Thresholded coefficient lattice together with its non-zero indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoeffImage {
    n1: usize,
    n2: usize,
    coeffs: Vec<f64>,
    indicator: Vec<u8>,
    s: usize,
    threshold_used: f64,
}

impl SparseCoeffImage {
    /// Wraps an already-sparse coefficient lattice (for example one read back from disk).
    pub fn from_coeffs(
        n1: usize,
        n2: usize,
        coeffs: Vec<f64>,
        threshold_used: f64,
    ) -> Result<Self> {
        let img = GrayImage::new(n1, n2, coeffs)?;
        let coeffs = img.into_data();
        let indicator: Vec<u8> = coeffs.iter().map(|&c| u8::from(c != 0.0)).collect();
        let s = indicator.iter().map(|&o| o as usize).sum();
        Ok(Self {
            n1,
            n2,
            coeffs,
            indicator,
            s,
            threshold_used,
        })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn n_pixels(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn indicator(&self) -> &[u8] {
        &self.indicator
    }

    pub fn sparsity(&self) -> usize {
        self.s
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }
}

/// Zeroes detail coefficients with `|c| < t`; the approximation band passes through.
pub fn hard_threshold(pyr: &WaveletPyramid, t: f64) -> SparseCoeffImage {
    assert!(t >= 0.0, "threshold must be non-negative");
    let mut coeffs = pyr.coeffs.clone();
    for r in 0..pyr.n1 {
        for c in 0..pyr.n2 {
            if pyr.is_approximation(r, c) {
                continue;
            }
            let v = &mut coeffs[r * pyr.n2 + c];
            if v.abs() < t {
                *v = 0.0;
            }
        }
    }
    SparseCoeffImage::from_coeffs(pyr.n1, pyr.n2, coeffs, t)
        .expect("thresholding preserves dimensions and finiteness")
}

pub fn indicator_map(sci: &SparseCoeffImage) -> Vec<u8> {
    sci.coeffs.iter().map(|&c| u8::from(c != 0.0)).collect()
}

/// JSON sidecar written next to a sparse-coefficient CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSidecar {
    pub threshold_used: f64,
    pub s: usize,
    pub n1: usize,
    pub n2: usize,
    pub sigma_band: SigmaBand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

/// Sidecar location for a coefficient CSV: same stem, `.json` extension.
pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("json")
}

pub fn save_sparse(
    sci: &SparseCoeffImage,
    csv_path: &Path,
    sigma_band: SigmaBand,
    sigma_hat: Option<f64>,
) -> Result<SparseSidecar> {
    let sidecar = SparseSidecar {
        threshold_used: sci.threshold_used,
        s: sci.s,
        n1: sci.n1,
        n2: sci.n2,
        sigma_band,
        sigma_hat,
        n: Some(sci.n_pixels()),
    };
    let csv = encode_csv_matrix(sci.n1, sci.n2, &sci.coeffs);
    let json = serde_json::to_string_pretty(&sidecar)?;
    write_atomic(csv_path, csv.as_bytes())?;
    write_atomic(&sidecar_path(csv_path), json.as_bytes())?;
    Ok(sidecar)
}

/// Reads a coefficient CSV and its sidecar when one exists. The sidecar's
/// threshold is kept; its dimensions and `s` must agree with the CSV.
pub fn load_sparse(csv_path: &Path) -> Result<(SparseCoeffImage, Option<SparseSidecar>)> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let img = parse_csv_matrix(&text)?;
    let side_path = sidecar_path(csv_path);
    let sidecar: Option<SparseSidecar> = match std::fs::read_to_string(&side_path) {
        Ok(json) => Some(
            serde_json::from_str(&json)
                .map_err(|e| Error::Parse(format!("{}: {e}", side_path.display())))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(side_path, e)),
    };
    let (n1, n2) = (img.n1(), img.n2());
    let t = sidecar.as_ref().map_or(0.0, |s| s.threshold_used);
    let sci = SparseCoeffImage::from_coeffs(n1, n2, img.into_data(), t)?;
    if let Some(sc) = &sidecar {
        if sc.n1 != n1 || sc.n2 != n2 || sc.s != sci.s {
            return Err(Error::Parse(format!(
                "sidecar {} disagrees with the coefficient file ({}x{}, s = {} vs {}x{}, s = {})",
                side_path.display(),
                sc.n1,
                sc.n2,
                sc.s,
                n1,
                n2,
                sci.s
            )));
        }
    }
    Ok((sci, sidecar))
}

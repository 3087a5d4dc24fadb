//! Image and matrix I/O plus synthetic phantom generation.
//!
//! Two interchange formats are supported:
//! - PGM, both `P2` (ASCII) and `P5` (binary; 16-bit big-endian when
//!   `maxval > 255`). Integer levels load as `level / maxval`. Saving always
//!   writes `P5` with `maxval = 65535`.
//! - f64-matrix-csv: one image row per line, comma separated, with an
//!   optional `# n1 n2` header line.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const PGM_SAVE_MAXVAL: u32 = 65535;

/// Real-valued 2D pixel lattice stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    n1: usize,
    n2: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(n1: usize, n2: usize, data: Vec<f64>) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {n1}x{n2}"
            )));
        }
        if data.len() != n1 * n2 {
            return Err(Error::DimensionMismatch {
                expected: n1 * n2,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite pixel value at index {i}")));
        }
        Ok(Self { n1, n2, data })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            data: vec![0.0; n1 * n2],
        }
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n2 + col]
    }

    /// Checks that both sides are at least `2^levels` and divisible by it.
    pub fn require_dyadic(&self, levels: u32) -> Result<()> {
        let block = 1usize << levels;
        if self.n1 < block
            || self.n2 < block
            || !self.n1.is_multiple_of(block)
            || !self.n2.is_multiple_of(block)
        {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} is not divisible by {block} ({levels}-level dyadic transform)",
                self.n1, self.n2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    Pgm,
    #[serde(alias = "csv")]
    F64MatrixCsv,
}

impl ImageFormat {
    /// Guess from a file extension: `.pgm` or anything else as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::Pgm,
            _ => ImageFormat::F64MatrixCsv,
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "csv" | "f64-matrix-csv" => Ok(ImageFormat::F64MatrixCsv),
            other => Err(Error::InvalidArgument(format!(
                "unknown image format `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageFormat::Pgm => f.write_str("pgm"),
            ImageFormat::F64MatrixCsv => f.write_str("f64-matrix-csv"),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>, format: ImageFormat) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm => parse_pgm(&bytes),
        ImageFormat::F64MatrixCsv => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::Parse("csv matrix is not valid utf-8".into()))?;
            parse_csv_matrix(text)
        }
    }
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Pgm => encode_pgm(img)?,
        ImageFormat::F64MatrixCsv => encode_csv_matrix(img.n1, img.n2, &img.data).into_bytes(),
    };
    write_atomic(path, &bytes)
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Row-major matrix as CSV text with a `# n1 n2` header.
pub fn encode_csv_matrix(n1: usize, n2: usize, data: &[f64]) -> String {
    debug_assert_eq!(data.len(), n1 * n2);
    let mut out = String::with_capacity(data.len() * 12 + 16);
    out.push_str(&format!("# {n1} {n2}\n"));
    for row in data.chunks(n2) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            // Display for f64 is the shortest representation that round-trips.
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv_matrix(text: &str) -> Result<GrayImage> {
    let mut header: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    let mut n2: Option<usize> = None;
    let mut n1 = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_none() && n1 == 0 {
                let dims: Vec<&str> = rest.split_whitespace().collect();
                if dims.len() == 2 {
                    let a = dims[0].parse::<usize>();
                    let b = dims[1].parse::<usize>();
                    if let (Ok(a), Ok(b)) = (a, b) {
                        header = Some((a, b));
                        continue;
                    }
                }
                return Err(Error::Parse(format!(
                    "line {}: malformed header `{line}`, expected `# n1 n2`",
                    lineno + 1
                )));
            }
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: invalid number `{}`",
                    lineno + 1,
                    field.trim()
                ))
            })?;
            data.push(v);
        }
        let width = data.len() - before;
        match n2 {
            None => n2 = Some(width),
            Some(w) if w != width => {
                return Err(Error::Parse(format!(
                    "line {}: row has {width} columns, expected {w}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        n1 += 1;
    }
    let n2 = n2.ok_or_else(|| Error::Parse("csv matrix has no rows".into()))?;
    if let Some((h1, h2)) = header {
        if (h1, h2) != (n1, n2) {
            return Err(Error::Parse(format!(
                "header declares {h1}x{h2} but body is {n1}x{n2}"
            )));
        }
    }
    GrayImage::new(n1, n2, data)
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("unexpected end of PGM data".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Parse("non-ascii PGM header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Parse(format!("invalid PGM {what} `{tok}`")))
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = PgmCursor { bytes, pos: 0 };
    let magic = cur.token()?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => return Err(Error::Parse(format!("unsupported PGM magic `{other}`"))),
    };
    let n2 = cur.number("width")? as usize;
    let n1 = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!(
            "PGM maxval {maxval} out of range 1..=65535"
        )));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::Parse("PGM has zero dimension".into()));
    }
    let count = n1 * n2;
    let scale = f64::from(maxval);
    let mut data = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(Error::Parse("missing separator before PGM raster".into()));
        }
        let raster = &bytes[cur.pos + 1..];
        let width = if maxval > 255 { 2 } else { 1 };
        if raster.len() < count * width {
            return Err(Error::Parse(format!(
                "PGM raster truncated: need {} bytes, have {}",
                count * width,
                raster.len()
            )));
        }
        for i in 0..count {
            let level = if width == 2 {
                u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
            } else {
                u32::from(raster[i])
            };
            if level > maxval {
                return Err(Error::Parse(format!(
                    "PGM level {level} exceeds maxval {maxval}"
                )));
            }
            data.push(f64::from(level) / scale);
        }
    } else {
        for _ in 0..count {
            let level = cur.number("pixel")?;
            if level > maxval {
                return Err(Error::Parse(format!(
                    "PGM level {level} exceeds maxval {maxval}"
                )));
            }
            data.push(f64::from(level) / scale);
        }
    }
    GrayImage::new(n1, n2, data)
}

fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n{}\n", img.n2, img.n1, PGM_SAVE_MAXVAL).into_bytes();
    out.reserve(img.len() * 2);
    let scale = f64::from(PGM_SAVE_MAXVAL);
    for (i, &v) in img.data.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "pixel {i} = {v} is outside [0, 1]; PGM cannot represent it (use csv)"
            )));
        }
        let level = (v * scale).round() as u16;
        out.extend_from_slice(&level.to_be_bytes());
    }
    Ok(out)
}

/// One filled ellipse in pixel coordinates. `semi_a` runs along rows and
/// `semi_b` along columns before the counter-clockwise `rotation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_row: f64,
    pub center_col: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, row: f64, col: f64) -> bool {
        let dr = row - self.center_row;
        let dc = col - self.center_col;
        let (s, c) = self.rotation.sin_cos();
        let u = dr * c + dc * s;
        let v = -dr * s + dc * c;
        (u / self.semi_a).powi(2) + (v / self.semi_b).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n1: usize,
    pub n2: usize,
    pub ellipses: Vec<Ellipse>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Modified Shepp-Logan head phantom scaled to an `n1 x n2` lattice.
    pub fn shepp_logan(n1: usize, n2: usize, noise_sigma: f64, seed: u64) -> Self {
        // (x0, y0, a, b, phi in degrees, intensity) on [-1, 1]^2 with y up.
        const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
            (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
            (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
            (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
            (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
            (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
            (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
            (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
            (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
            (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
            (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
        ];
        let h1 = n1 as f64 / 2.0;
        let h2 = n2 as f64 / 2.0;
        let ellipses = TABLE
            .iter()
            .map(|&(x0, y0, a, b, phi, intensity)| Ellipse {
                center_row: (1.0 - y0) * h1,
                center_col: (1.0 + x0) * h2,
                semi_a: b * h1,
                semi_b: a * h2,
                rotation: phi.to_radians(),
                intensity,
            })
            .collect();
        Self {
            n1,
            n2,
            ellipses,
            noise_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::InvalidArgument(
                "phantom dimensions must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            let finite = [e.center_row, e.center_col, e.rotation, e.intensity]
                .iter()
                .all(|v| v.is_finite());
            if !finite || !(e.semi_a > 0.0 && e.semi_b > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "ellipse {i} is invalid: {e:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Renders the ellipses at pixel centres and adds seeded Gaussian noise.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<GrayImage> {
    spec.validate()?;
    let mut data = vec![0.0; spec.n1 * spec.n2];
    for r in 0..spec.n1 {
        let y = r as f64 + 0.5;
        for c in 0..spec.n2 {
            let x = c as f64 + 0.5;
            data[r * spec.n2 + c] = spec
                .ellipses
                .iter()
                .filter(|e| e.contains(y, x))
                .map(|e| e.intensity)
                .sum();
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = stream_rng(spec.seed, Stream::Phantom);
        for v in &mut data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sigma * z;
        }
    }
    GrayImage::new(spec.n1, spec.n2, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_ascii_normalizes_by_maxval() {
        let img = parse_pgm(b"P2\n2 2\n255\n255 0\n0 255\n").unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn pgm_comments_and_binary_8bit() {
        let mut bytes = b"P5 # comment\n# more\n2 1 10\n".to_vec();
        bytes.extend_from_slice(&[5, 10]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!((img.n1(), img.n2()), (1, 2));
        assert_eq!(img.data(), &[0.5, 1.0]);
    }

    #[test]
    fn pgm_rejects_bad_headers() {
        assert!(parse_pgm(b"P3\n2 2\n255\n").is_err());
        assert!(parse_pgm(b"P2\n2 2\n0\n0 0 0 0").is_err());
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2 3").is_err());
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2 3 300").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn csv_identity_parse() {
        let img = parse_csv_matrix("1.5,2.5\n3.5,4.5").unwrap();
        assert_eq!((img.n1(), img.n2()), (2, 2));
        assert_eq!(img.data(), &[1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn csv_header_checked() {
        assert!(parse_csv_matrix("# 2 2\n1,2\n3,4\n").is_ok());
        assert!(parse_csv_matrix("# 3 2\n1,2\n3,4\n").is_err());
        assert!(parse_csv_matrix("1,2\n3\n").is_err());
        assert!(parse_csv_matrix("1,nan\n").is_err());
        assert!(parse_csv_matrix("1,abc\n").is_err());
        assert!(parse_csv_matrix("").is_err());
    }

    #[test]
    fn dyadic_requirement() {
        assert!(GrayImage::zeros(16, 24).require_dyadic(3).is_ok());
        assert!(GrayImage::zeros(12, 16).require_dyadic(3).is_err());
        assert!(GrayImage::zeros(4, 4).require_dyadic(3).is_err());
    }

    #[test]
    fn pgm_save_rejects_out_of_range() {
        let img = GrayImage::new(1, 2, vec![0.5, 1.5]).unwrap();
        assert!(encode_pgm(&img).is_err());
    }

    #[test]
    fn empty_phantom_is_zero() {
        let spec = PhantomSpec {
            n1: 8,
            n2: 8,
            ellipses: vec![],
            noise_sigma: 0.0,
            seed: 1,
        };
        assert!(generate_phantom(&spec)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn covering_ellipse_is_all_one() {
        let spec = PhantomSpec {
            n1: 16,
            n2: 16,
            ellipses: vec![Ellipse {
                center_row: 8.0,
                center_col: 8.0,
                semi_a: 20.0,
                semi_b: 20.0,
                rotation: 0.0,
                intensity: 1.0,
            }],
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(generate_phantom(&spec)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec::shepp_logan(32, 32, 0.01, 99);
        assert_eq!(
            generate_phantom(&spec).unwrap(),
            generate_phantom(&spec).unwrap()
        );
        let other = PhantomSpec {
            seed: 100,
            ..spec.clone()
        };
        assert_ne!(
            generate_phantom(&spec).unwrap(),
            generate_phantom(&other).unwrap()
        );
    }

    #[test]
    fn noise_sd_within_bound() {
        let sigma = 0.3;
        let spec = PhantomSpec {
            n1: 64,
            n2: 64,
            ellipses: vec![],
            noise_sigma: sigma,
            seed: 7,
        };
        let img = generate_phantom(&spec).unwrap();
        let n = img.len() as f64;
        let mean = img.data().iter().sum::<f64>() / n;
        let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - sigma).abs() <= 5.0 * sigma / (2.0 * n).sqrt());
    }

    #[test]
    fn invalid_phantom_rejected() {
        let mut spec = PhantomSpec::shepp_logan(8, 8, -1.0, 0);
        assert!(generate_phantom(&spec).is_err());
        spec.noise_sigma = 0.0;
        spec.ellipses[0].semi_a = 0.0;
        assert!(generate_phantom(&spec).is_err());
    }
}

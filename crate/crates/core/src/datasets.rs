//! Random fields in `[0, 1]` that feed the coefficient map: uniform white
//! noise, multi-level noise and grayscale image corpora, plus weighted
//! mixtures of these.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{self, GridTensor};

pub const DEFAULT_INIT_SIZE: usize = 5;
const MIXTURE_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub enum DistributionSpec {
    WhiteNoise,
    /// `levels: None` picks the largest level count whose last doubling
    /// stays within the goal size.
    MlData {
        levels: Option<usize>,
        init_size: usize,
    },
    Images(Arc<ImageCorpus>),
    Mixture(Vec<(DistributionSpec, f64)>),
}

impl DistributionSpec {
    pub fn mldata(levels: Option<usize>) -> Self {
        DistributionSpec::MlData {
            levels,
            init_size: DEFAULT_INIT_SIZE,
        }
    }

    pub fn mixture(components: Vec<(DistributionSpec, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if components.iter().any(|(_, p)| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = components.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > MIXTURE_SUM_TOL {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(DistributionSpec::Mixture(components))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::WhiteNoise | DistributionSpec::Images(_) => Ok(()),
            DistributionSpec::MlData { init_size, .. } if *init_size < 2 => Err(Error::Config(format!(
                "mldata init_size {init_size} must be at least 2"
            ))),
            DistributionSpec::MlData { .. } => Ok(()),
            DistributionSpec::Mixture(c) => {
                Self::mixture(c.clone())?;
                c.iter().try_for_each(|(d, _)| d.validate())
            }
        }
    }

    /// Parses `white_noise`, `mldata`, `mldata:LEVELS`, `mldata:LEVELS:INIT`,
    /// `images:DIR`, or a mixture `W*DIST+W*DIST+...`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.contains('+') || text.contains('*') {
            let mut parts = Vec::new();
            for term in text.split('+') {
                let (w, d) = term
                    .split_once('*')
                    .ok_or_else(|| Error::Config(format!("mixture term '{term}' lacks 'WEIGHT*'")))?;
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad mixture weight '{w}'")))?;
                parts.push((Self::parse_single(d.trim())?, w));
            }
            return Self::mixture(parts);
        }
        Self::parse_single(text)
    }

    fn parse_single(text: &str) -> Result<Self> {
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad number '{s}' in distribution '{text}'")))
        };
        if text == "white_noise" {
            return Ok(DistributionSpec::WhiteNoise);
        }
        if let Some(dir) = text.strip_prefix("images:") {
            return Ok(DistributionSpec::Images(Arc::new(ImageCorpus::ingest(dir)?)));
        }
        let mut fields = text.split(':');
        if fields.next() == Some("mldata") {
            let levels = fields.next().map(num).transpose()?;
            let init_size = fields.next().map(num).transpose()?.unwrap_or(DEFAULT_INIT_SIZE);
            if fields.next().is_some() {
                return Err(Error::Config(format!("too many fields in '{text}'")));
            }
            let spec = DistributionSpec::MlData { levels, init_size };
            spec.validate()?;
            return Ok(spec);
        }
        Err(Error::Config(format!("unknown distribution '{text}'")))
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::WhiteNoise => f.write_str("white_noise"),
            DistributionSpec::MlData {
                levels: None,
                init_size,
            } if *init_size == DEFAULT_INIT_SIZE => f.write_str("mldata"),
            DistributionSpec::MlData { levels, init_size } => match levels {
                Some(l) => write!(f, "mldata:{l}:{init_size}"),
                None => write!(f, "mldata"),
            },
            DistributionSpec::Images(c) => write!(f, "images:{}", c.root().display()),
            DistributionSpec::Mixture(parts) => {
                for (k, (d, w)) in parts.iter().enumerate() {
                    if k > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{w}*{d}")?;
                }
                Ok(())
            }
        }
    }
}

/// Samples a `goal_size x goal_size` field in `[0, 1]`.
pub fn sample_random_tensor(spec: &DistributionSpec, goal_size: usize, seed: u64) -> Result<GridTensor<f64>> {
    sample_with_rng(spec, goal_size, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_with_rng(spec: &DistributionSpec, goal_size: usize, rng: &mut ChaCha8Rng) -> Result<GridTensor<f64>> {
    if goal_size == 0 {
        return Err(Error::InvalidGridSize {
            size: goal_size,
            reason: "goal size must be positive",
        });
    }
    match spec {
        DistributionSpec::WhiteNoise => Ok(white_noise(goal_size, rng)),
        DistributionSpec::MlData { levels, init_size } => {
            let levels = levels.unwrap_or_else(|| default_mldata_levels(goal_size, *init_size));
            let raw = gen_data_multi_level(goal_size, levels, *init_size, rng.next_u64())?;
            Ok(min_max_normalize(&raw))
        }
        DistributionSpec::Images(corpus) => corpus.sample(goal_size, rng),
        DistributionSpec::Mixture(parts) => {
            let u: f64 = rng.random();
            let sub_seed = rng.next_u64();
            let mut acc = 0.0;
            let chosen = parts
                .iter()
                .find(|(_, w)| {
                    acc += w;
                    u < acc
                })
                .or_else(|| parts.iter().rev().find(|(_, w)| *w > 0.0))
                .ok_or_else(|| Error::Config("empty mixture".into()))?;
            sample_random_tensor(&chosen.0, goal_size, sub_seed)
        }
    }
}

/// I.i.d. uniform `[0, 1)` entries.
pub fn white_noise(n: usize, rng: &mut impl Rng) -> GridTensor<f64> {
    GridTensor::from_fn(1, n, n, |_, _, _| rng.random::<f64>())
}

fn normal_noise(n: usize, rng: &mut impl Rng) -> GridTensor<f64> {
    GridTensor::from_fn(1, n, n, |_, _, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn default_mldata_levels(goal_size: usize, init_size: usize) -> usize {
    let mut levels = 0;
    let mut n = init_size;
    while 2 * n <= goal_size {
        n *= 2;
        levels += 1;
    }
    levels
}

/// Sizes and noise weights used by each refinement step of
/// [`gen_data_multi_level`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlDataTrace {
    pub sizes: Vec<usize>,
    pub noise_ratios: Vec<f64>,
}

/// Multi-level noise: start from `init_size` standard normal noise, then
/// `levels` times resize to twice the size and add `2^-i` times fresh noise,
/// finally resize to `goal_size`. The output is not normalized.
pub fn gen_data_multi_level(goal_size: usize, levels: usize, init_size: usize, seed: u64) -> Result<GridTensor<f64>> {
    gen_data_multi_level_traced(goal_size, levels, init_size, seed).map(|(t, _)| t)
}

pub fn gen_data_multi_level_traced(
    goal_size: usize,
    levels: usize,
    init_size: usize,
    seed: u64,
) -> Result<(GridTensor<f64>, MlDataTrace)> {
    if init_size < 2 {
        return Err(Error::OutOfRange(format!("init_size {init_size} must be at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = normal_noise(init_size, &mut rng);
    let mut trace = MlDataTrace {
        sizes: Vec::with_capacity(levels),
        noise_ratios: Vec::with_capacity(levels),
    };
    for i in 1..=levels {
        let size = 2 * data.height();
        let ratio = 0.5f64.powi(i as i32);
        data = tensor::bilinear_resize(&data, size, size)?;
        data.axpy_assign(ratio, &normal_noise(size, &mut rng))?;
        trace.sizes.push(size);
        trace.noise_ratios.push(ratio);
    }
    Ok((tensor::bilinear_resize(&data, goal_size, goal_size)?, trace))
}

/// Affine map onto `[0, 1]`; a constant field maps to 0.5.
pub fn min_max_normalize(t: &GridTensor<f64>) -> GridTensor<f64> {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return GridTensor::filled(t.channels(), t.height(), t.width(), 0.5);
    }
    t.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_tensor(&self) -> GridTensor<f64> {
        GridTensor::from_fn(1, self.height, self.width, |_, i, j| {
            f64::from(self.pixels[i * self.width + j])
        })
    }
}

/// Reads an 8-bit binary PGM (P5) file.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|reason| Error::Image {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5) file".into());
    }
    let mut dim =
        |what: &str| -> std::result::Result<usize, String> { token()?.parse().map_err(|_| format!("bad {what}")) };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("maxval")?;
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}, only 8-bit images are read"));
    }
    let start = pos + 1;
    let end = start + width * height;
    if end > bytes.len() {
        return Err(format!("pixel data truncated: need {} bytes", width * height));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[start..end].to_vec(),
    })
}

/// Writes a field in `[0, 1]` as an 8-bit binary PGM.
pub fn write_pgm(path: &Path, field: &GridTensor<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(field.height() * field.width() + 32);
    write!(out, "P5\n{} {}\n255\n", field.width(), field.height())?;
    out.extend(
        field
            .channel(0)
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    Ok(GrayImage {
        width,
        height,
        pixels: rgb.pixels().map(|p| p.0[0]).collect(),
    })
}

fn supported(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    matches!(ext.as_deref(), Some("pgm")) || (cfg!(feature = "png") && matches!(ext.as_deref(), Some("png")))
}

fn read_image(path: &Path) -> Result<GrayImage> {
    #[cfg(feature = "png")]
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return read_png(path);
    }
    read_pgm(path)
}

/// Decoded first channels of every readable image in one directory, in
/// file-name order.
#[derive(Clone, Debug)]
pub struct ImageCorpus {
    root: PathBuf,
    names: Vec<PathBuf>,
    images: Vec<GrayImage>,
    skipped: Vec<(PathBuf, String)>,
}

impl ImageCorpus {
    /// Unreadable files are skipped with a warning.
    pub fn ingest(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let entries = fs::read_dir(&root).map_err(|e| Error::Corpus {
            path: root.clone(),
            reason: e.to_string(),
        })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && supported(p))
            .collect();
        paths.sort();
        let mut corpus = ImageCorpus {
            root,
            names: Vec::new(),
            images: Vec::new(),
            skipped: Vec::new(),
        };
        for p in paths {
            match read_image(&p) {
                Ok(img) => {
                    corpus.names.push(p);
                    corpus.images.push(img);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", p.display());
                    corpus.skipped.push((p, e.to_string()));
                }
            }
        }
        if corpus.images.is_empty() {
            return Err(Error::Corpus {
                path: corpus.root,
                reason: "no readable images".into(),
            });
        }
        Ok(corpus)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.names
    }

    pub fn skipped(&self) -> &[(PathBuf, String)] {
        &self.skipped
    }

    pub fn image(&self, k: usize) -> &GrayImage {
        &self.images[k]
    }

    /// Image `k`, min-max normalized and resized to `goal_size`.
    pub fn field(&self, k: usize, goal_size: usize) -> Result<GridTensor<f64>> {
        let t = min_max_normalize(&self.images[k].to_tensor());
        let t = tensor::bilinear_resize(&t, goal_size, goal_size)?;
        Ok(t.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn sample(&self, goal_size: usize, rng: &mut impl Rng) -> Result<GridTensor<f64>> {
        let k = rng.random_range(0..self.images.len());
        self.field(k, goal_size)
    }
}

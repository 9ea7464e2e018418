//! Training pairs, crop/flip augmentation, the tab-separated dataset manifest
//! and a procedural stand-in corpus.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bicubic_downscale_x2, load_png, save_png, synthesize_grain, GrainConfig, Image, ImageError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub grainy_hr: Image,
    pub clean_hr: Image,
    /// Bicubic half-scale of `clean_hr`.
    pub clean_lr: Image,
}

impl TrainingPair {
    pub fn new(grainy_hr: Image, clean_hr: Image) -> Result<Self, ImageError> {
        let (gw, gh) = grainy_hr.dims();
        let (cw, ch) = clean_hr.dims();
        if (gw, gh) != (cw, ch) {
            return Err(ImageError::DimensionMismatch(gw, gh, cw, ch));
        }
        let clean_lr = bicubic_downscale_x2(&clean_hr)?;
        Ok(TrainingPair {
            grainy_hr,
            clean_hr,
            clean_lr,
        })
    }
}

/// Same random window and flips on both HR images; the LR target is
/// recomputed from the cropped clean image.
pub fn random_crop_flip(
    pair: &TrainingPair,
    size: usize,
    seed: u64,
) -> Result<TrainingPair, ImageError> {
    let (w, h) = pair.clean_hr.dims();
    if w < size || h < size {
        return Err(ImageError::TooSmall {
            width: w,
            height: h,
            size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    let flip_h: bool = rng.random();
    let flip_v: bool = rng.random();
    let apply = |img: &Image| {
        let mut out = img.crop(x0, y0, size, size);
        if flip_h {
            out = out.flip_horizontal();
        }
        if flip_v {
            out = out.flip_vertical();
        }
        out
    };
    TrainingPair::new(apply(&pair.grainy_hr), apply(&pair.clean_hr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub grainy: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<TrainingPair, ImageError> {
        TrainingPair::new(load_png(&self.grainy)?, load_png(&self.clean)?)
    }
}

/// Parse a manifest. Relative paths are resolved against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ImageError> {
    let text = std::fs::read_to_string(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |message: String| ImageError::Manifest {
            line: idx + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let split = fields[2].trim().parse().map_err(err)?;
        out.push(ManifestEntry {
            clean: base.join(fields[0]),
            grainy: base.join(fields[1]),
            split,
        });
    }
    Ok(out)
}

/// Write entries, making paths relative to the manifest directory when
/// possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), ImageError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            rel(&e.clean),
            rel(&e.grainy),
            e.split
        ));
    }
    std::fs::write(path, text).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Procedural clean image: a smooth colour gradient, a few oriented
/// sinusoidal textures and some flat discs, all in `[0, 1]`.
pub fn synthetic_clean_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = [[0f32; 3]; 3];
    for row in base.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(0.15..0.85);
        }
    }
    let waves: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f32::consts::PI);
            let freq = rng.random_range(0.05..0.6);
            let phase = rng.random_range(0.0..std::f32::consts::TAU);
            let amp = [
                rng.random_range(0.0..0.12),
                rng.random_range(0.0..0.12),
                rng.random_range(0.0..0.12),
            ];
            (angle, freq, phase, amp)
        })
        .collect();
    let discs: Vec<(f32, f32, f32, [f32; 3])> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..width as f32),
                rng.random_range(0.0..height as f32),
                rng.random_range(0.05..0.3) * width.min(height) as f32,
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    Image::from_fn(width, height, |c, y, x| {
        let u = x as f32 / width.max(2) as f32;
        let v = y as f32 / height.max(2) as f32;
        let mut val = base[0][c] * (1.0 - u) + base[1][c] * u + (base[2][c] - 0.5) * v;
        for (angle, freq, phase, amp) in &waves {
            let t = x as f32 * angle.cos() + y as f32 * angle.sin();
            val += amp[c] * (freq * t + phase).sin();
        }
        for (cx, cy, r, col) in &discs {
            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
            if d2 < r * r {
                val = 0.5 * val + 0.5 * col[c];
            }
        }
        val.clamp(0.0, 1.0)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Grain presets cycled over the corpus.
    pub grain_levels: Vec<usize>,
    /// Replaces the presets' AR coefficients when set.
    pub ar_coefficients: Option<Vec<f64>>,
    /// Every `test_every`-th image goes to the test split (0 = none).
    pub test_every: usize,
    pub seed: u64,
}

impl CorpusSpec {
    /// In-memory pairs with their split, in corpus order.
    pub fn pairs(&self) -> Result<Vec<(TrainingPair, Split)>, ImageError> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(ImageError::OddDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if self.grain_levels.is_empty() {
            return Err(ImageError::InvalidGrain("no grain levels given".into()));
        }
        (0..self.count)
            .map(|i| {
                let img_seed = self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let clean = synthetic_clean_image(self.width, self.height, img_seed);
                let level = self.grain_levels[i % self.grain_levels.len()];
                let mut grain = GrainConfig::preset(level, img_seed ^ 0x9e37_79b9);
                if let Some(ar) = &self.ar_coefficients {
                    grain.ar_coefficients = ar.clone();
                }
                let grainy = synthesize_grain(&clean, &grain)?;
                let split = if self.test_every > 0 && (i + 1) % self.test_every == 0 {
                    Split::Test
                } else {
                    Split::Train
                };
                Ok((TrainingPair::new(grainy, clean)?, split))
            })
            .collect()
    }
}

/// Write the corpus as PNGs plus `manifest.tsv` under `dir`.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<Vec<ManifestEntry>, ImageError> {
    std::fs::create_dir_all(dir).map_err(|source| ImageError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut entries = Vec::with_capacity(spec.count);
    for (i, (pair, split)) in spec.pairs()?.into_iter().enumerate() {
        let clean = dir.join(format!("{i:04}_clean.png"));
        let grainy = dir.join(format!("{i:04}_grainy.png"));
        save_png(&pair.clean_hr, &clean)?;
        save_png(&pair.grainy_hr, &grainy)?;
        entries.push(ManifestEntry {
            clean,
            grainy,
            split,
        });
    }
    write_manifest(&dir.join("manifest.tsv"), &entries)?;
    Ok(entries)
}

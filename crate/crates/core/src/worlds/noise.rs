use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Image;
use crate::error::{Error, Result};
use crate::pgm::read_pgm;

#[derive(Clone, Debug, PartialEq)]
pub enum TextureSource {
    /// Seeded value-noise textures.
    Procedural { seed: u64 },
    /// Directory of grayscale P5 images; random crops are taken per use.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum NoiseSpec {
    #[default]
    None,
    /// Additive `N(0, σ²)` then clipping to `[0, 1]`.
    Gaussian { sigma: f64 },
    /// Each pixel independently set to 1 w.p. p/2 and to 0 w.p. p/2.
    SaltPepper { p: f64 },
    /// Agent composited over a textured background.
    Background { source: TextureSource },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                Err(Error::Noise(format!("gaussian sigma must be finite and ≥ 0, got {sigma}")))
            }
            NoiseSpec::SaltPepper { p } if !(0.0..=1.0).contains(p) => {
                Err(Error::Noise(format!("salt-pepper p must lie in [0, 1], got {p}")))
            }
            NoiseSpec::Background { source: TextureSource::Directory(dir) } if !dir.is_dir() => {
                Err(Error::Noise(format!("background directory {} does not exist", dir.display())))
            }
            _ => Ok(()),
        }
    }

    /// Validates and loads anything the noise needs (background textures).
    pub fn prepare(&self) -> Result<Noise> {
        self.validate()?;
        let textures = match self {
            NoiseSpec::Background { source: TextureSource::Directory(dir) } => load_textures(dir)?,
            _ => Vec::new(),
        };
        Ok(Noise { spec: self.clone(), textures })
    }
}

/// A validated noise model ready to apply.
#[derive(Clone, Debug)]
pub struct Noise {
    spec: NoiseSpec,
    textures: Vec<Image>,
}

impl Noise {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        match &self.spec {
            NoiseSpec::Background { .. } => {
                let tex = self.texture(image.height, image.width, rng);
                composite(image, &tex)
            }
            _ => self.pixel_noise(image, rng),
        }
    }

    /// Noise for an observation pair. Backgrounds are shared by both frames
    /// (the scene stays put while the agent moves); pixel noise is independent.
    pub fn apply_pair<R: Rng + ?Sized>(&self, pre: &Image, post: &Image, rng: &mut R) -> (Image, Image) {
        let mut out = self.apply_group(&[pre, post], rng);
        let post = out.pop().expect("two images");
        (out.pop().expect("two images"), post)
    }

    /// Noise for frames of one scene: a single shared background, or
    /// independent pixel noise per frame.
    pub fn apply_group<R: Rng + ?Sized>(&self, images: &[&Image], rng: &mut R) -> Vec<Image> {
        match (&self.spec, images.first()) {
            (NoiseSpec::Background { .. }, Some(first)) => {
                let tex = self.texture(first.height, first.width, rng);
                images.iter().map(|im| composite(im, &tex)).collect()
            }
            _ => images.iter().map(|im| self.pixel_noise(im, rng)).collect(),
        }
    }

    fn pixel_noise<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        let mut out = image.clone();
        match self.spec {
            NoiseSpec::Gaussian { sigma } if sigma > 0.0 => {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                for p in &mut out.pixels {
                    *p = (*p as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
                }
            }
            NoiseSpec::SaltPepper { p } if p > 0.0 => {
                for px in &mut out.pixels {
                    let u: f64 = rng.random();
                    if u < p / 2.0 {
                        *px = 1.0;
                    } else if u < p {
                        *px = 0.0;
                    }
                }
            }
            _ => {}
        }
        out
    }

    fn texture<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> Image {
        match &self.spec {
            NoiseSpec::Background { source: TextureSource::Procedural { seed } } => {
                procedural_texture(seed ^ rng.next_u64(), height, width)
            }
            _ => {
                let src = &self.textures[rng.random_range(0..self.textures.len())];
                random_crop(src, height, width, rng)
            }
        }
    }
}

/// Validates `spec` and applies it to one image.
pub fn apply_noise<R: Rng + ?Sized>(image: &Image, spec: &NoiseSpec, rng: &mut R) -> Result<Image> {
    Ok(spec.prepare()?.apply(image, rng))
}

/// Validates `spec` and applies it to an observation pair.
pub fn apply_noise_pair<R: Rng + ?Sized>(pre: &Image, post: &Image, spec: &NoiseSpec, rng: &mut R) -> Result<(Image, Image)> {
    Ok(spec.prepare()?.apply_pair(pre, post, rng))
}

/// Agent pixels (value 1) stay 1; everything else shows the texture.
fn composite(image: &Image, texture: &Image) -> Image {
    let pixels = image.pixels.iter().zip(&texture.pixels).map(|(&a, &t)| if a >= 1.0 { 1.0 } else { t.max(a) }).collect();
    Image { height: image.height, width: image.width, pixels }
}

/// Multi-octave value noise in `[0, 0.85]`.
pub fn procedural_texture(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0f32; height * width];
    let mut total_amp = 0.0;
    for (cell, amp) in [(16usize, 0.5f32), (8, 0.3), (4, 0.2)] {
        let (gh, gw) = (height / cell + 2, width / cell + 2);
        let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.random()).collect();
        for r in 0..height {
            for c in 0..width {
                let (fy, fx) = (r as f32 / cell as f32, c as f32 / cell as f32);
                let (y0, x0) = (fy as usize, fx as usize);
                let (ty, tx) = (smooth(fy - y0 as f32), smooth(fx - x0 as f32));
                let at = |y: usize, x: usize| lattice[y * gw + x];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                pixels[r * width + c] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        total_amp += amp;
    }
    for p in &mut pixels {
        *p = *p / total_amp * 0.85;
    }
    Image { height, width, pixels }
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn load_textures(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let textures = paths.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    if textures.is_empty() {
        return Err(Error::Noise(format!("no .pgm textures in {}", dir.display())));
    }
    Ok(textures)
}

/// Random crop, nearest-neighbour resampled when the source is too small.
fn random_crop<R: Rng + ?Sized>(src: &Image, height: usize, width: usize, rng: &mut R) -> Image {
    let (ch, cw) = (src.height.min(height.max(1)), src.width.min(width.max(1)));
    let oy = rng.random_range(0..=src.height - ch);
    let ox = rng.random_range(0..=src.width - cw);
    let mut out = Image::zeros(height, width);
    for r in 0..height {
        for c in 0..width {
            let (sy, sx) = (oy + r * ch / height, ox + c * cw / width);
            out.pixels[r * width + c] = src.get(sy, sx) * 0.85;
        }
    }
    out
}

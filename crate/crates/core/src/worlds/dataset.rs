//! Raw image grids in the `SYMD` container.
//!
//! Layout (integers little-endian): `"SYMD"`, `u32` version = 1, `u32` N,
//! `u32` H, `u32` W, `u32` F, F × `u32` factor sizes, N·H·W `u8` pixels
//! (0 or 255, row-major, image-major), N × F `u16` factor indices.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{check_factors, ActionLabel, Image, Transition, World};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SYMD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct RawDataset {
    pub height: usize,
    pub width: usize,
    pub factor_sizes: Vec<usize>,
    /// `N·H·W` bytes.
    pub images: Vec<u8>,
    /// `N·F` factor indices, row per image.
    pub factor_indices: Vec<u16>,
    lookup: HashMap<Vec<usize>, usize>,
}

impl RawDataset {
    pub fn new(height: usize, width: usize, factor_sizes: Vec<usize>, images: Vec<u8>, factor_indices: Vec<u16>) -> Result<Self> {
        let f = factor_sizes.len();
        let n = if f == 0 { 0 } else { factor_indices.len() / f };
        if f == 0 || factor_indices.len() != n * f || images.len() != n * height * width {
            return Err(Error::InvalidArgument(format!(
                "inconsistent dataset: {} factors, {} indices, {} image bytes for {}×{} images",
                f,
                factor_indices.len(),
                images.len(),
                height,
                width
            )));
        }
        let mut lookup = HashMap::with_capacity(n);
        for (row, idx) in factor_indices.chunks(f).enumerate() {
            let tuple: Vec<usize> = idx.iter().map(|&v| v as usize).collect();
            check_factors(&factor_sizes, &tuple)?;
            lookup.entry(tuple).or_insert(row);
        }
        Ok(Self { height, width, factor_sizes, images, factor_indices, lookup })
    }

    pub fn len(&self) -> usize {
        self.images.len() / (self.height * self.width).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every factor tuple of the grid appears exactly once.
    pub fn is_complete(&self) -> bool {
        self.len() == self.factor_sizes.iter().product::<usize>() && self.lookup.len() == self.len()
    }

    pub fn image(&self, row: usize) -> Image {
        let px = self.height * self.width;
        let pixels = self.images[row * px..(row + 1) * px].iter().map(|&b| b as f32 / 255.0).collect();
        Image { height: self.height, width: self.width, pixels }
    }

    pub fn factors(&self, row: usize) -> Vec<usize> {
        let f = self.factor_sizes.len();
        self.factor_indices[row * f..(row + 1) * f].iter().map(|&v| v as usize).collect()
    }

    pub fn row_of(&self, factors: &[usize]) -> Option<usize> {
        self.lookup.get(factors).copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.factor_sizes.len() + self.images.len() + 2 * self.factor_indices.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.height as u32, self.width as u32, self.factor_sizes.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &s in &self.factor_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.images);
        for &i in &self.factor_indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if bytes.len() - pos < n {
                return Err(Error::Dataset {
                    offset: pos,
                    msg: format!("truncated while reading {what}: need {n} bytes, {} left", bytes.len() - pos),
                });
            }
            let at = pos;
            pos += n;
            Ok((at, &bytes[at..at + n]))
        };
        let (_, magic) = take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Dataset { offset: 0, msg: "bad magic, expected \"SYMD\"".into() });
        }
        let mut u32s = [0u32; 5];
        let names = ["version", "image count", "height", "width", "factor count"];
        for (slot, name) in u32s.iter_mut().zip(names) {
            *slot = u32::from_le_bytes(take(4, name)?.1.try_into().unwrap());
        }
        let [version, n, h, w, f] = u32s.map(|v| v as usize);
        if version != VERSION as usize {
            return Err(Error::Dataset { offset: 4, msg: format!("unsupported version {version}") });
        }
        let mut factor_sizes = Vec::with_capacity(f.min(64));
        for _ in 0..f {
            let (at, b) = take(4, "factor size")?;
            let s = u32::from_le_bytes(b.try_into().unwrap()) as usize;
            if s == 0 || s > u16::MAX as usize + 1 {
                return Err(Error::Dataset { offset: at, msg: format!("factor size {s} out of range") });
            }
            factor_sizes.push(s);
        }
        let images = take(n * h * w, "pixels")?.1.to_vec();
        let (idx_at, raw) = take(n * f * 2, "factor indices")?;
        let factor_indices: Vec<u16> = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        if pos != bytes.len() {
            return Err(Error::Dataset { offset: pos, msg: "trailing bytes after factor indices".into() });
        }
        for (k, &v) in factor_indices.iter().enumerate() {
            if v as usize >= factor_sizes[k % f] {
                return Err(Error::Dataset {
                    offset: idx_at + 2 * k,
                    msg: format!("factor {} index {} ≥ size {}", k % f, v, factor_sizes[k % f]),
                });
            }
        }
        Self::new(h, w, factor_sizes, images, factor_indices)
    }

    /// Builds a complete grid by rendering every factor tuple of `world`.
    pub fn from_world<W: World + ?Sized>(world: &W) -> Result<Self> {
        let states = world.all_states();
        let first = world.render(&states[0])?;
        let (h, w) = (first.height, first.width);
        let mut images = Vec::with_capacity(states.len() * h * w);
        let mut indices = Vec::with_capacity(states.len() * world.num_factors());
        for s in &states {
            let img = world.render(s)?;
            images.extend(img.pixels.iter().map(|&p| if p >= 0.5 { 255u8 } else { 0 }));
            indices.extend(s.iter().map(|&v| v as u16));
        }
        Self::new(h, w, world.factor_sizes().to_vec(), images, indices)
    }
}

impl World for RawDataset {
    fn factor_sizes(&self) -> &[usize] {
        &self.factor_sizes
    }

    fn render(&self, factors: &[usize]) -> Result<Image> {
        check_factors(&self.factor_sizes, factors)?;
        let row = self
            .row_of(factors)
            .ok_or_else(|| Error::InvalidArgument(format!("factor tuple {factors:?} not present in dataset")))?;
        Ok(self.image(row))
    }
}

pub fn load_raw_dataset(path: &Path) -> Result<RawDataset> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    RawDataset::from_bytes(&std::fs::read(path)?)
}

pub fn write_raw_dataset(path: &Path, dataset: &RawDataset) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&dataset.to_bytes())?;
    Ok(())
}

/// The supervised pair obtained by moving one factor of `factors` by ±1
/// (cyclic wrap on every factor).
pub fn grid_pair(dataset: &RawDataset, factors: &[usize], action: ActionLabel) -> Result<Transition> {
    let post = dataset.step(factors, action)?;
    Ok(Transition {
        x_pre: dataset.render(factors)?,
        x_post: dataset.render(&post)?,
        true_action: Some(action),
        steps: 1,
    })
}

//! Symmetry-structured environments and datasets.
//!
//! Every world exposes a grid of cyclic factors. A generator action moves one
//! factor by one step (with wrap-around), so the symmetry group of a world
//! with factor orders `n₁ … n_F` is `C_{n₁} × … × C_{n_F}`.

mod dataset;
mod flatland;
mod noise;

use rand::Rng;

pub use dataset::{grid_pair, load_raw_dataset, write_raw_dataset, RawDataset};
pub use flatland::{Flatland, FlatlandState, FLATLAND_AGENT_RADIUS, FLATLAND_CANVAS, FLATLAND_PERIOD, FLATLAND_STEP};
pub use noise::{apply_noise, apply_noise_pair, procedural_texture, Noise, NoiseSpec, TextureSource};

use crate::error::{Error, Result};

/// Single-channel image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn mass(&self) -> f32 {
        self.pixels.iter().sum()
    }

    /// Mean absolute pixel difference.
    pub fn l1_distance(&self, other: &Image) -> f32 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b).abs()).sum::<f32>() / self.len() as f32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// A cyclic generator (or its inverse) acting on one factor.
///
/// For Flatland, factor 0 is the x axis and factor 1 the y axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionLabel {
    pub factor: usize,
    pub direction: Direction,
}

impl ActionLabel {
    pub fn new(factor: usize, direction: Direction) -> Self {
        Self { factor, direction }
    }

    /// Dense index: `2·factor` for the generator, `2·factor + 1` for its inverse.
    pub fn index(self) -> usize {
        2 * self.factor + usize::from(self.direction == Direction::Backward)
    }

    pub fn from_index(index: usize) -> Self {
        let direction = if index % 2 == 0 { Direction::Forward } else { Direction::Backward };
        Self { factor: index / 2, direction }
    }

    pub fn inverse(self) -> Self {
        Self { factor: self.factor, direction: self.direction.inverse() }
    }

    /// All `2·num_factors` labels in index order.
    pub fn all(num_factors: usize) -> Vec<ActionLabel> {
        (0..2 * num_factors).map(Self::from_index).collect()
    }
}

/// Observation pair separated by `steps` actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x_pre: Image,
    pub x_post: Image,
    /// Present only for supervised single-step pairs.
    pub true_action: Option<ActionLabel>,
    pub steps: usize,
}

/// A world whose states are tuples of cyclic factor indices.
pub trait World {
    fn factor_sizes(&self) -> &[usize];

    /// Rendering of a factor tuple; must be deterministic.
    fn render(&self, factors: &[usize]) -> Result<Image>;

    fn num_factors(&self) -> usize {
        self.factor_sizes().len()
    }

    fn num_actions(&self) -> usize {
        2 * self.num_factors()
    }

    fn num_states(&self) -> usize {
        self.factor_sizes().iter().product()
    }

    /// Applies one action; factor indices wrap cyclically.
    fn step(&self, factors: &[usize], action: ActionLabel) -> Result<Vec<usize>> {
        let sizes = self.factor_sizes();
        check_factors(sizes, factors)?;
        if action.factor >= sizes.len() {
            return Err(Error::InvalidArgument(format!(
                "action on factor {} but world has {} factors",
                action.factor,
                sizes.len()
            )));
        }
        let mut out = factors.to_vec();
        let n = sizes[action.factor] as i64;
        out[action.factor] = (factors[action.factor] as i64 + action.direction.sign()).rem_euclid(n) as usize;
        Ok(out)
    }

    fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.factor_sizes().iter().map(|&n| rng.random_range(0..n)).collect()
    }

    /// Every factor tuple in row-major order (last factor fastest).
    fn all_states(&self) -> Vec<Vec<usize>> {
        let sizes = self.factor_sizes();
        let total: usize = sizes.iter().product();
        (0..total).map(|i| unflatten(i, sizes)).collect()
    }
}

pub(crate) fn check_factors(sizes: &[usize], factors: &[usize]) -> Result<()> {
    if factors.len() != sizes.len() || factors.iter().zip(sizes).any(|(f, n)| f >= n) {
        return Err(Error::InvalidArgument(format!("factor tuple {factors:?} outside grid {sizes:?}")));
    }
    Ok(())
}

pub(crate) fn unflatten(mut index: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (slot, &n) in out.iter_mut().zip(sizes).rev() {
        *slot = index % n;
        index /= n;
    }
    out
}

/// A sampled transition together with the ground truth that produced it.
#[derive(Clone, Debug)]
pub struct LabeledTransition {
    pub transition: Transition,
    pub start: Vec<usize>,
    pub end: Vec<usize>,
    pub actions: Vec<ActionLabel>,
}

/// Uniform start state, `k` iid uniform actions.
///
/// `true_action` is filled only when `k == 1` and `supervised` is set; the
/// ground truth is always returned alongside for evaluation.
pub fn sample_transition<W: World + ?Sized, R: Rng + ?Sized>(
    world: &W,
    rng: &mut R,
    k: usize,
    supervised: bool,
) -> Result<LabeledTransition> {
    if k == 0 {
        return Err(Error::InvalidArgument("transition needs at least one step".into()));
    }
    let start = world.random_state(rng);
    let mut state = start.clone();
    let mut actions = Vec::with_capacity(k);
    for _ in 0..k {
        let a = ActionLabel::from_index(rng.random_range(0..world.num_actions()));
        state = world.step(&state, a)?;
        actions.push(a);
    }
    let transition = Transition {
        x_pre: world.render(&start)?,
        x_post: world.render(&state)?,
        true_action: (k == 1 && supervised).then(|| actions[0]),
        steps: k,
    };
    Ok(LabeledTransition { transition, start, end: state, actions })
}

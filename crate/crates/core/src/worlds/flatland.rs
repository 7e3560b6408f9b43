use super::{check_factors, ActionLabel, Image, World};
use crate::error::{Error, Result};

pub const FLATLAND_CANVAS: usize = 64;
pub const FLATLAND_AGENT_RADIUS: usize = 15;
/// Circumference of each periodic axis: `64 − 2·15`.
pub const FLATLAND_PERIOD: usize = FLATLAND_CANVAS - 2 * FLATLAND_AGENT_RADIUS;
/// Pixels moved by one generator action.
pub const FLATLAND_STEP: usize = 5;

/// Agent position as a periodic coordinate per axis, each in `[0, 34)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlatlandState {
    pub x: usize,
    pub y: usize,
}

impl FlatlandState {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x: x % FLATLAND_PERIOD, y: y % FLATLAND_PERIOD }
    }

    /// Pixel coordinates of the rendered disk center.
    pub fn center(self) -> (usize, usize) {
        (FLATLAND_AGENT_RADIUS + self.x, FLATLAND_AGENT_RADIUS + self.y)
    }

    /// Moves the selected axis by ±5 px around the 34 px cycle.
    pub fn step(self, action: ActionLabel) -> Self {
        let shift = |u: usize| (u as i64 + action.direction.sign() * FLATLAND_STEP as i64).rem_euclid(FLATLAND_PERIOD as i64) as usize;
        match action.factor {
            0 => Self { x: shift(self.x), ..self },
            _ => Self { y: shift(self.y), ..self },
        }
    }

    /// Binary 64×64 rendering: a pixel is lit iff its center lies within
    /// distance 15 of the agent center.
    pub fn render(self) -> Image {
        let (cx, cy) = self.center();
        let r2 = (FLATLAND_AGENT_RADIUS * FLATLAND_AGENT_RADIUS) as i64;
        let mut img = Image::zeros(FLATLAND_CANVAS, FLATLAND_CANVAS);
        for row in cy - FLATLAND_AGENT_RADIUS..=cy + FLATLAND_AGENT_RADIUS {
            for col in cx - FLATLAND_AGENT_RADIUS..=cx + FLATLAND_AGENT_RADIUS {
                let (dx, dy) = (col as i64 - cx as i64, row as i64 - cy as i64);
                if dx * dx + dy * dy <= r2 {
                    img.pixels[row * FLATLAND_CANVAS + col] = 1.0;
                }
            }
        }
        img
    }
}

/// The Flatland grid world: a radius-15 disk translating on a 64×64 canvas
/// with periodic wrap. Symmetry structure `C₃₄ × C₃₄` acting by ±5 px.
#[derive(Clone, Debug, Default)]
pub struct Flatland;

const SIZES: [usize; 2] = [FLATLAND_PERIOD, FLATLAND_PERIOD];

impl Flatland {
    /// Rotation angle of a generator's irreducible representation: `2π·5/34`.
    pub fn phase_angle() -> f64 {
        2.0 * std::f64::consts::PI * FLATLAND_STEP as f64 / FLATLAND_PERIOD as f64
    }

    fn state(factors: &[usize]) -> Result<FlatlandState> {
        check_factors(&SIZES, factors)?;
        Ok(FlatlandState { x: factors[0], y: factors[1] })
    }
}

impl World for Flatland {
    fn factor_sizes(&self) -> &[usize] {
        &SIZES
    }

    fn render(&self, factors: &[usize]) -> Result<Image> {
        Ok(Self::state(factors)?.render())
    }

    fn step(&self, factors: &[usize], action: ActionLabel) -> Result<Vec<usize>> {
        if action.factor >= 2 {
            return Err(Error::InvalidArgument(format!("Flatland has no factor {}", action.factor)));
        }
        let s = Self::state(factors)?.step(action);
        Ok(vec![s.x, s.y])
    }
}

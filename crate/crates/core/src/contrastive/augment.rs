use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_SIZE};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// The crop window is `(64 - crop_margin)` pixels square.
    pub crop_margin: usize,
    pub flip_probability: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_margin: 10,
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_margin >= FRAME_SIZE {
            return Err(Error::config(format!(
                "crop_margin must be below {FRAME_SIZE}, got {}",
                self.crop_margin
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config(format!(
                "flip_probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

/// Random choices behind one augmented view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub x0: usize,
    pub y0: usize,
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let flip = rng.bernoulli(cfg.flip_probability);
        let x0 = rng.below(cfg.crop_margin + 1);
        let y0 = rng.below(cfg.crop_margin + 1);
        Self { flip, x0, y0 }
    }
}

/// Flip (optionally), crop the window at the drawn offset and resize back to
/// the input size.
pub fn augment_view(image: &Frame, cfg: &AugmentConfig, draw: AugmentDraw) -> Result<Frame> {
    image.require_size(FRAME_SIZE, FRAME_SIZE, "augmentation input")?;
    let side = FRAME_SIZE - cfg.crop_margin;
    let flipped;
    let src = if draw.flip {
        flipped = image.flipped_horizontally();
        &flipped
    } else {
        image
    };
    src.crop_resize(draw.x0, draw.y0, side, side, FRAME_SIZE, FRAME_SIZE)
}

/// Two independently augmented views of the same frame.
pub fn augment_pair(image: &Frame, cfg: &AugmentConfig, rng: &mut Rng) -> Result<(Frame, Frame)> {
    cfg.validate()?;
    let a = AugmentDraw::sample(cfg, rng);
    let b = AugmentDraw::sample(cfg, rng);
    Ok((augment_view(image, cfg, a)?, augment_view(image, cfg, b)?))
}

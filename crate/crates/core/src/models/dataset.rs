//! Synthetic 10-class dataset with a planted confuser in every image.
//!
//! The 32×32 canvas is split into a 4×4 grid of 8×8 cells. Class `k` owns one
//! cell and one color; a sample of class `k` shows a 6×6 patch of class `k` in
//! that cell over textured gray noise, plus a smaller 5×5 patch of some other
//! class `j` inside cell `j`. The confuser box is recorded so tests know where
//! the undesirable pixels are.
//!
//! A patch is a one-pixel checkerboard of the class color and its complement,
//! phased on absolute coordinates. Its local mean is the background gray, so
//! blurring a patch removes its evidence.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Number of classes.
pub const NUM_CLASSES: usize = 10;
/// Image height and width.
pub const IMAGE_SIZE: usize = 32;
/// Mean background intensity.
pub const BACKGROUND: f64 = 0.5;

const CELL: usize = 8;
const PATCH: usize = 6;
const CONFUSER: usize = 5;
const NOISE: f64 = 0.1;

/// (row, column) of each class cell in the 4×4 grid.
const CLASS_CELLS: [(usize, usize); NUM_CLASSES] = [
    (0, 0),
    (0, 2),
    (1, 1),
    (1, 3),
    (2, 0),
    (2, 2),
    (3, 1),
    (3, 3),
    (0, 3),
    (3, 0),
];

const CLASS_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 0.5, 0.0],
    [0.5, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 0.0, 0.0],
];

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxRegion {
    /// Top row.
    pub y0: usize,
    /// Left column.
    pub x0: usize,
    /// Height.
    pub h: usize,
    /// Width.
    pub w: usize,
}

impl BoxRegion {
    /// Whether pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y0 + self.h).contains(&y) && (self.x0..self.x0 + self.w).contains(&x)
    }
}

/// One generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// Image with the confuser.
    pub image: Tensor,
    /// Same image without the confuser.
    pub clean: Tensor,
    /// True class.
    pub label: usize,
    /// Class whose patch was planted as the confuser.
    pub confuser_class: usize,
    /// Where the confuser was planted.
    pub confuser: BoxRegion,
}

/// Color of a class.
pub fn class_color(class: usize) -> [f64; 3] {
    CLASS_COLORS[class]
}

/// Nominal (un-jittered) main patch box of a class.
pub fn class_region(class: usize) -> BoxRegion {
    let (r, c) = CLASS_CELLS[class];
    BoxRegion {
        y0: r * CELL + 1,
        x0: c * CELL + 1,
        h: PATCH,
        w: PATCH,
    }
}

/// Noise-free image of a class patch on flat background.
pub fn class_template(class: usize) -> Tensor {
    let mut t = Tensor::full(&[IMAGE_SIZE, IMAGE_SIZE, 3], BACKGROUND);
    paint(&mut t, class_region(class), class_color(class), 1.0);
    t
}

fn paint(img: &mut Tensor, b: BoxRegion, color: [f64; 3], alpha: f64) {
    let d = img.data_mut();
    for y in b.y0..b.y0 + b.h {
        for x in b.x0..b.x0 + b.w {
            let px = &mut d[(y * IMAGE_SIZE + x) * 3..][..3];
            let odd = (y + x) % 2 == 1;
            px.iter_mut().zip(color).for_each(|(v, c)| {
                let c = if odd { 1.0 - c } else { c };
                *v = (1.0 - alpha) * *v + alpha * c;
            });
        }
    }
}

/// Noise-free demonstration image: a faint class-7 patch plus a full-strength
/// class-0 confuser in the top-left cell, where the mask border is not averaged
/// with neighbouring cells.
pub fn demo_sample() -> SyntheticSample {
    const LABEL: usize = 7;
    const CONFUSER_CLASS: usize = 0;
    let mut clean = Tensor::full(&[IMAGE_SIZE, IMAGE_SIZE, 3], BACKGROUND);
    paint(&mut clean, class_region(LABEL), CLASS_COLORS[LABEL], 0.7);
    let r = class_region(CONFUSER_CLASS);
    let confuser = BoxRegion {
        y0: r.y0,
        x0: r.x0,
        h: CONFUSER,
        w: CONFUSER,
    };
    let mut image = clean.clone();
    paint(&mut image, confuser, CLASS_COLORS[CONFUSER_CLASS], 1.0);
    SyntheticSample {
        image,
        clean,
        label: LABEL,
        confuser_class: CONFUSER_CLASS,
        confuser,
    }
}

/// Confuser-free images and their labels. The reference CNN is fitted on these,
/// so a planted confuser is evidence the model never learned to discount.
pub fn clean_training_pairs(samples: &[SyntheticSample]) -> (Vec<Tensor>, Vec<usize>) {
    samples.iter().map(|s| (s.clean.clone(), s.label)).unzip()
}

/// Generates `n` samples with labels `i mod 10`. Deterministic given `seed`.
pub fn generate_synthetic_dataset(n: usize, seed: u64) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| sample(i % NUM_CLASSES, &mut rng)).collect()
}

fn sample(label: usize, rng: &mut ChaCha8Rng) -> SyntheticSample {
    let mut clean = Tensor::zeros(&[IMAGE_SIZE, IMAGE_SIZE, 3]);
    clean
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = BACKGROUND + rng.gen_range(-NOISE..NOISE));

    let (r, c) = CLASS_CELLS[label];
    let main = BoxRegion {
        y0: r * CELL + rng.gen_range(0..=CELL - PATCH),
        x0: c * CELL + rng.gen_range(0..=CELL - PATCH),
        h: PATCH,
        w: PATCH,
    };
    paint(
        &mut clean,
        main,
        CLASS_COLORS[label],
        rng.gen_range(0.7..1.0),
    );

    let confuser_class = (label + rng.gen_range(1..NUM_CLASSES)) % NUM_CLASSES;
    let (r, c) = CLASS_CELLS[confuser_class];
    let confuser = BoxRegion {
        y0: r * CELL + rng.gen_range(1..=CELL - CONFUSER - 1),
        x0: c * CELL + rng.gen_range(1..=CELL - CONFUSER - 1),
        h: CONFUSER,
        w: CONFUSER,
    };
    let mut image = clean.clone();
    paint(
        &mut image,
        confuser,
        CLASS_COLORS[confuser_class],
        rng.gen_range(0.8..1.0),
    );
    SyntheticSample {
        image,
        clean,
        label,
        confuser_class,
        confuser,
    }
}

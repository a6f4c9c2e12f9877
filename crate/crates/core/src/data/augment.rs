use super::triplet::SliceTriplet;
use rand::Rng;

/// Explicit augmentation draw, so a transform can be replayed or inverted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Row and column offsets; content moves by `+dy`, `+dx`.
    pub dy: i64,
    pub dx: i64,
    pub brightness: f32,
}

pub const FLIP_PROBABILITY: f64 = 0.5;
pub const MAX_SHIFT_FRACTION: f64 = 0.1;
pub const MAX_BRIGHTNESS: f32 = 0.1;

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            flip: false,
            dy: 0,
            dx: 0,
            brightness: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> Self {
        let flip = rng.random_bool(FLIP_PROBABILITY);
        let max_y = (height as f64 * MAX_SHIFT_FRACTION).floor() as i64;
        let max_x = (width as f64 * MAX_SHIFT_FRACTION).floor() as i64;
        AugmentParams {
            flip,
            dy: rng.random_range(-max_y..=max_y),
            dx: rng.random_range(-max_x..=max_x),
            brightness: rng.random_range(-MAX_BRIGHTNESS..=MAX_BRIGHTNESS),
        }
    }
}

pub fn flip_horizontal<T: Copy>(s: &[T], width: usize) -> Vec<T> {
    s.chunks(width)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// Moves content by `(dy, dx)`, filling uncovered pixels with `fill`.
pub fn translate<T: Copy>(s: &[T], height: usize, width: usize, dy: i64, dx: i64, fill: T) -> Vec<T> {
    let mut out = vec![fill; s.len()];
    for y in 0..height as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= height as i64 {
            continue;
        }
        for x in 0..width as i64 {
            let sx = x - dx;
            if sx >= 0 && sx < width as i64 {
                out[(y * width as i64 + x) as usize] = s[(sy * width as i64 + sx) as usize];
            }
        }
    }
    out
}

/// Flip, then translate with zero fill, then brightness shift and clamp.
/// The label follows the geometry but never the intensity change.
pub fn apply(t: &SliceTriplet, p: &AugmentParams) -> SliceTriplet {
    let (h, w) = (t.height, t.width);
    let geom = |s: &[f32]| {
        let s = if p.flip { flip_horizontal(s, w) } else { s.to_vec() };
        let mut s = translate(&s, h, w, p.dy, p.dx, 0.0);
        if p.brightness != 0.0 {
            for v in s.iter_mut() {
                *v = (*v + p.brightness).clamp(0.0, 1.0);
            }
        }
        s
    };
    let label = if p.flip { flip_horizontal(&t.label, w) } else { t.label.clone() };
    SliceTriplet {
        prev: geom(&t.prev),
        center: geom(&t.center),
        next: geom(&t.next),
        label: translate(&label, h, w, p.dy, p.dx, 0),
        ..t.clone()
    }
}

/// Draws parameters from `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(t: &SliceTriplet, rng: &mut R) -> SliceTriplet {
    apply(t, &AugmentParams::sample(rng, t.height, t.width))
}

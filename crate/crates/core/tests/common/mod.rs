//! Straight-loop reference implementations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct LoopMask {
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub on: Vec<bool>,
    pub spacing: [f64; 3],
}

impl LoopMask {
    pub fn at(&self, z: i64, y: i64, x: i64) -> bool {
        if z < 0 || y < 0 || x < 0 || z >= self.d as i64 || y >= self.h as i64 || x >= self.w as i64 {
            return false;
        }
        self.on[(z as usize * self.h + y as usize) * self.w + x as usize]
    }
}

pub fn random_mask(d: usize, h: usize, w: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..d * h * w).map(|_| rng.random_bool(p)).collect()
}

/// A random box-and-noise mask, denser than pure Bernoulli noise.
pub fn blobby_mask(d: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (z0, y0, x0) = (rng.random_range(0..d), rng.random_range(0..h), rng.random_range(0..w));
    let (z1, y1, x1) = (
        rng.random_range(z0..d) + 1,
        rng.random_range(y0..h) + 1,
        rng.random_range(x0..w) + 1,
    );
    let mut v = vec![false; d * h * w];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let inside = (z0..z1).contains(&z) && (y0..y1).contains(&y) && (x0..x1).contains(&x);
                v[(z * h + y) * w + x] = inside ^ rng.random_bool(0.05);
            }
        }
    }
    v
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn loop_dsc(g: &LoopMask, p: &LoopMask) -> f64 {
    let mut both = 0;
    let mut ng = 0;
    let mut np = 0;
    for i in 0..g.on.len() {
        if g.on[i] {
            ng += 1;
        }
        if p.on[i] {
            np += 1;
        }
        if g.on[i] && p.on[i] {
            both += 1;
        }
    }
    if ng + np == 0 {
        1.0
    } else {
        (2 * both) as f64 / (ng + np) as f64
    }
}

pub fn loop_boundary(m: &LoopMask) -> Vec<(i64, i64, i64)> {
    let mut out = Vec::new();
    for z in 0..m.d as i64 {
        for y in 0..m.h as i64 {
            for x in 0..m.w as i64 {
                if !m.at(z, y, x) {
                    continue;
                }
                let offsets = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
                if offsets.iter().any(|&(a, b, c)| !m.at(z + a, y + b, x + c)) {
                    out.push((z, y, x));
                }
            }
        }
    }
    out
}

fn loop_directed(a: &[(i64, i64, i64)], b: &[(i64, i64, i64)], s: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::new();
    for &(z, y, x) in a {
        let mut best = f64::MAX;
        for &(z2, y2, x2) in b {
            let dz = (z - z2) as f64 * s[0];
            let dy = (y - y2) as f64 * s[1];
            let dx = (x - x2) as f64 * s[2];
            let dist = (dz * dz + dy * dy + dx * dx).sqrt();
            if dist < best {
                best = dist;
            }
        }
        out.push(best);
    }
    out.sort_by(|p, q| p.partial_cmp(q).unwrap());
    out
}

pub fn loop_perc95(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let rank = (95 * n + 99) / 100;
    sorted[rank - 1]
}

pub fn loop_hd95(g: &LoopMask, p: &LoopMask) -> Option<f64> {
    let bg = loop_boundary(g);
    let bp = loop_boundary(p);
    if bg.is_empty() || bp.is_empty() {
        return None;
    }
    let a = loop_perc95(&loop_directed(&bg, &bp, g.spacing));
    let b = loop_perc95(&loop_directed(&bp, &bg, g.spacing));
    Some(if a > b { a } else { b })
}

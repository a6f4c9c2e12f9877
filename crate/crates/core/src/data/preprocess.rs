use super::volume::{LabelVolume, Volume};
use crate::error::Result;
use crate::metrics::nearest_rank;

/// Nearest-rank 1st and 99th percentiles of all voxels.
pub fn percentile_bounds(v: &Volume) -> (f64, f64) {
    let mut sorted: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    sorted.sort_by(f64::total_cmp);
    (nearest_rank(&sorted, 1), nearest_rank(&sorted, 99))
}

/// Maps the `[p1, p99]` intensity range onto `[0, 1]` and clamps.
/// A volume with `p1 == p99` becomes 0.5 everywhere.
pub fn normalize_percentile(v: &Volume) -> Volume {
    let (lo, hi) = percentile_bounds(v);
    let data = if hi > lo {
        v.data()
            .iter()
            .map(|&x| ((x as f64 - lo) / (hi - lo)).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.5; v.data().len()]
    };
    Volume::new(v.dims(), v.spacing(), data).expect("same geometry")
}

pub const CLAHE_TILES: usize = 8;
pub const CLAHE_BINS: usize = 256;
pub const CLAHE_CLIP: f64 = 2.0;

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) as f64 * CLAHE_BINS as f64) as usize).min(CLAHE_BINS - 1)
}

/// Tile `i` of `n` over an extent spans `[i·len/n, (i+1)·len/n)`.
fn tile_span(i: usize, n: usize, len: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

fn tile_lut(slice: &[f32], width: usize, rows: (usize, usize), cols: (usize, usize)) -> Vec<f64> {
    let mut hist = vec![0.0f64; CLAHE_BINS];
    for y in rows.0..rows.1 {
        for &v in &slice[y * width + cols.0..y * width + cols.1] {
            hist[bin_of(v)] += 1.0;
        }
    }
    let n = ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64;
    let limit = (CLAHE_CLIP * n / CLAHE_BINS as f64).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / CLAHE_BINS as f64;
    let mut cdf = 0.0;
    hist.iter()
        .map(|h| {
            cdf += h + share;
            (cdf / n).min(1.0)
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization of one `[0, 1]` slice:
/// an 8×8 tile grid (fewer on small slices), 256 bins, clip limit 2× the
/// uniform bin height with the excess spread evenly over all bins, and
/// bilinear blending of the four nearest tile mappings.
pub fn clahe(slice: &[f32], height: usize, width: usize) -> Vec<f32> {
    assert_eq!(slice.len(), height * width, "slice extent");
    let (ny, nx) = (CLAHE_TILES.min(height), CLAHE_TILES.min(width));
    let mut luts = Vec::with_capacity(ny * nx);
    for ty in 0..ny {
        for tx in 0..nx {
            luts.push(tile_lut(slice, width, tile_span(ty, ny, height), tile_span(tx, nx, width)));
        }
    }
    // Fractional tile coordinate of a pixel centre, split into the two
    // neighbouring tile indices and the weight of the second.
    let coord = |p: usize, n: usize, len: usize| {
        let t = ((p as f64 + 0.5) * n as f64 / len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let t0 = t.floor() as usize;
        let t1 = (t0 + 1).min(n - 1);
        (t0, t1, t - t0 as f64)
    };
    let mut out = Vec::with_capacity(slice.len());
    for y in 0..height {
        let (y0, y1, wy) = coord(y, ny, height);
        for x in 0..width {
            let (x0, x1, wx) = coord(x, nx, width);
            let b = bin_of(slice[y * width + x]);
            let at = |ty: usize, tx: usize| luts[ty * nx + tx][b];
            let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
            let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
            out.push(((top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0)) as f32);
        }
    }
    out
}

/// Source coordinate of an output pixel centre under half-pixel alignment.
fn source(o: usize, out_len: usize, in_len: usize) -> f64 {
    ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64)
}

pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w, "slice extent");
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let sy = source(oy, oh, h);
        let (y0, wy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for ox in 0..ow {
            let sx = source(ox, ow, w);
            let (x0, wx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let at = |y: usize, x: usize| src[y * w + x] as f64;
            let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
            let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
            out.push((top * (1.0 - wy) + bottom * wy) as f32);
        }
    }
    out
}

pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    assert_eq!(src.len(), h * w, "slice extent");
    let pick = |o: usize, out_len: usize, in_len: usize| ((o * in_len * 2 + in_len) / (2 * out_len)).min(in_len - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let sy = pick(oy, oh, h);
        for ox in 0..ow {
            out.push(src[sy * w + pick(ox, ow, w)]);
        }
    }
    out
}

fn rescaled(spacing: [f32; 3], h: usize, w: usize, oh: usize, ow: usize) -> [f32; 3] {
    [
        spacing[0],
        (spacing[1] as f64 * h as f64 / oh as f64) as f32,
        (spacing[2] as f64 * w as f64 / ow as f64) as f32,
    ]
}

/// Bilinear in-plane resize of every slice; spacing follows the scale.
pub fn resize_volume(v: &Volume, oh: usize, ow: usize) -> Result<Volume> {
    let [d, h, w] = v.dims();
    if (h, w) == (oh, ow) {
        return Ok(v.clone());
    }
    let mut data = Vec::with_capacity(d * oh * ow);
    for z in 0..d {
        data.extend(resize_bilinear(v.slice(z), h, w, oh, ow));
    }
    Volume::new([d, oh, ow], rescaled(v.spacing(), h, w, oh, ow), data)
}

/// Nearest-neighbor in-plane resize of every label slice.
pub fn resize_labels(l: &LabelVolume, oh: usize, ow: usize) -> Result<LabelVolume> {
    let [d, h, w] = l.dims();
    if (h, w) == (oh, ow) {
        return Ok(l.clone());
    }
    let mut data = Vec::with_capacity(d * oh * ow);
    for z in 0..d {
        data.extend(resize_nearest(l.slice(z), h, w, oh, ow));
    }
    LabelVolume::new([d, oh, ow], rescaled(l.spacing(), h, w, oh, ow), data)
}

/// Percentile normalization, optional per-slice CLAHE, then resize.
pub fn preprocess(v: &Volume, clahe_on: bool, size: usize) -> Result<Volume> {
    let mut out = normalize_percentile(v);
    if clahe_on {
        let [_, h, w] = out.dims();
        out.map_slices(|_, s| {
            let eq = clahe(s, h, w);
            s.copy_from_slice(&eq);
        });
    }
    resize_volume(&out, size, size)
}

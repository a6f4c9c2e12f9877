use super::volume::{LabelVolume, Volume};
use crate::error::{Error, Result};
use crate::model::TripletInput;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A center slice, its two neighbours, and the center's labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceTriplet {
    pub prev: Vec<f32>,
    pub center: Vec<f32>,
    pub next: Vec<f32>,
    pub label: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub volume_id: usize,
    pub index: usize,
}

impl SliceTriplet {
    fn to_tensor(&self, s: &[f32]) -> Tensor {
        Tensor::new(&[1, self.height, self.width], s.iter().map(|&v| v as f64).collect())
            .expect("triplet extent")
    }

    pub fn to_input(&self) -> TripletInput {
        TripletInput {
            prev: self.to_tensor(&self.prev),
            center: self.to_tensor(&self.center),
            next: self.to_tensor(&self.next),
        }
    }

    /// Adds Gaussian noise to the center slice only, seeded by
    /// `(seed, volume_id, index)`.
    pub fn add_center_noise(&mut self, sigma: f32, seed: u64) {
        if sigma <= 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((self.volume_id as u64) << 32) | self.index as u64);
        let noise = Normal::new(0.0, sigma).expect("positive sigma");
        for v in self.center.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
}

fn neighbours(i: usize, depth: usize) -> (usize, usize) {
    (i.saturating_sub(1), (i + 1).min(depth - 1))
}

/// One triplet per slice, replicating the edge slices as their own
/// missing neighbours.
pub fn extract_triplets(v: &Volume, l: &LabelVolume, volume_id: usize) -> Result<Vec<SliceTriplet>> {
    if v.dims() != l.dims() {
        return Err(Error::input(format!(
            "image dims {:?} differ from label dims {:?}",
            v.dims(),
            l.dims()
        )));
    }
    let [d, h, w] = v.dims();
    Ok((0..d)
        .map(|i| {
            let (p, n) = neighbours(i, d);
            SliceTriplet {
                prev: v.slice(p).to_vec(),
                center: v.slice(i).to_vec(),
                next: v.slice(n).to_vec(),
                label: l.slice(i).to_vec(),
                height: h,
                width: w,
                volume_id,
                index: i,
            }
        })
        .collect())
}

/// Model inputs for every slice of an unlabelled volume.
pub fn image_triplets(v: &Volume) -> Vec<TripletInput> {
    let [d, h, w] = v.dims();
    let t = |z: usize| {
        Tensor::new(&[1, h, w], v.slice(z).iter().map(|&x| x as f64).collect()).expect("slice extent")
    };
    (0..d)
        .map(|i| {
            let (p, n) = neighbours(i, d);
            TripletInput {
                prev: t(p),
                center: t(i),
                next: t(n),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(d: usize) -> (Volume, LabelVolume) {
        let data: Vec<f32> = (0..d * 4).map(|i| (i / 4) as f32).collect();
        let v = Volume::new([d, 2, 2], [3.0, 1.0, 1.0], data).unwrap();
        let l = LabelVolume::new([d, 2, 2], [3.0, 1.0, 1.0], (0..d * 4).map(|i| (i % 2) as u8).collect()).unwrap();
        (v, l)
    }

    #[test]
    fn single_slice_replicates() {
        let (v, l) = ramp(1);
        let t = extract_triplets(&v, &l, 0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].prev, t[0].center);
        assert_eq!(t[0].next, t[0].center);
    }

    #[test]
    fn interior_uses_true_neighbours() {
        let (v, l) = ramp(3);
        let t = extract_triplets(&v, &l, 4).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!((t[1].prev[0], t[1].center[0], t[1].next[0]), (0.0, 1.0, 2.0));
        assert_eq!((t[0].prev[0], t[2].next[0]), (0.0, 2.0));
        assert_eq!(t[2].volume_id, 4);
        assert_eq!(t[2].index, 2);
    }

    #[test]
    fn count_equals_depth() {
        for d in 1..7 {
            let (v, l) = ramp(d);
            assert_eq!(extract_triplets(&v, &l, 0).unwrap().len(), d);
            assert_eq!(image_triplets(&v).len(), d);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let (v, _) = ramp(2);
        let (_, l) = ramp(3);
        assert!(matches!(extract_triplets(&v, &l, 0), Err(Error::Input(_))));
    }

    #[test]
    fn center_noise_touches_center_only_and_is_seeded() {
        let (v, l) = ramp(3);
        let t = extract_triplets(&v, &l, 0).unwrap();
        let mut a = t[1].clone();
        let mut b = t[1].clone();
        a.add_center_noise(0.4, 9);
        b.add_center_noise(0.4, 9);
        assert_eq!(a, b);
        assert_ne!(a.center, t[1].center);
        assert_eq!((a.prev.clone(), a.next.clone(), a.label.clone()), (t[1].prev.clone(), t[1].next.clone(), t[1].label.clone()));
        let mut c = t[2].clone();
        c.add_center_noise(0.4, 9);
        let da: Vec<f32> = a.center.iter().zip(&t[1].center).map(|(x, y)| x - y).collect();
        let dc: Vec<f32> = c.center.iter().zip(&t[2].center).map(|(x, y)| x - y).collect();
        assert_ne!(da, dc);
    }
}

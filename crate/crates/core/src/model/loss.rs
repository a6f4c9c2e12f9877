use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// `L = ce_weight·CE + dice_weight·DiceLoss`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce_weight: f64,
    pub dice_weight: f64,
    pub dice_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ce_weight: 0.5,
            dice_weight: 0.5,
            dice_eps: 1e-5,
        }
    }
}

/// The differentiable total plus the value of each term.
#[derive(Clone, Copy, Debug)]
pub struct Loss<'t> {
    pub total: Var<'t>,
    pub ce: f64,
    pub dice: f64,
}

/// Builds the `[HW, K]` one-hot matrix of a label slice.
pub fn one_hot(labels: &[u8], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(Error::input(format!(
                "label {l} at pixel {i} is outside [0, {classes})"
            )));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(&[labels.len(), classes], data)
}

/// Cross-entropy plus soft Dice over `[K, H, W]` logits.
///
/// CE is the pixel mean of `−log softmax` at the true class. The Dice term
/// is `1 − mean_k (2·Σ p·g + ε) / (Σ p + Σ g + ε)` over all classes,
/// background included.
pub fn compute_loss<'t>(logits: Var<'t>, labels: &[u8], w: &LossWeights) -> Result<Loss<'t>> {
    if w.ce_weight < 0.0 || w.dice_weight < 0.0 {
        return Err(Error::config("loss weights must be non-negative"));
    }
    let shape = logits.shape();
    let [k, h, wd] = shape[..] else {
        return Err(Error::dim(format!("logits must be [K, H, W], got {shape:?}")));
    };
    let n = h * wd;
    if labels.len() != n {
        return Err(Error::dim(format!(
            "{} labels for {h}x{wd} logits",
            labels.len()
        )));
    }
    let tape = logits.tape();
    let onehot = tape.constant(one_hot(labels, k)?);
    let rows = logits.reshape(&[k, n])?.transpose()?;

    let picked = rows
        .log_softmax_rows()?
        .mul(onehot)?
        .matmul(tape.constant(Tensor::ones(&[k, 1])))?;
    let ce = picked.sum().mul_scalar(-1.0 / n as f64);

    let probs = rows.softmax_rows()?;
    let inter = probs.mul(onehot)?.sum_rows()?;
    let psum = probs.sum_rows()?;
    let gsum = onehot.value().transpose2().matmul(&Tensor::ones(&[n, 1]));
    let gsum = tape.constant(gsum.reshaped(&[1, k])?);
    let num = inter.mul_scalar(2.0).add_scalar(w.dice_eps);
    let den = psum.add(gsum)?.add_scalar(w.dice_eps);
    let dice = num
        .div(den)?
        .sum()
        .mul_scalar(-1.0 / k as f64)
        .add_scalar(1.0);

    let total = ce.mul_scalar(w.ce_weight).add(dice.mul_scalar(w.dice_weight))?;
    Ok(Loss {
        total,
        ce: ce.item(),
        dice: dice.item(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight-loop evaluation of the combined loss.
    fn loop_loss(logits: &Tensor, labels: &[u8], w: &LossWeights) -> (f64, f64, f64) {
        let (k, h, wd) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
        let n = h * wd;
        let mut ce = 0.0;
        let mut inter = vec![0.0; k];
        let mut psum = vec![0.0; k];
        let mut gsum = vec![0.0; k];
        for i in 0..n {
            let z: Vec<f64> = (0..k).map(|c| logits.data()[c * n + i]).collect();
            let max = z.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = z.iter().map(|v| (v - max).exp()).sum();
            for c in 0..k {
                let p = (z[c] - max).exp() / denom;
                let g = if labels[i] as usize == c { 1.0 } else { 0.0 };
                inter[c] += p * g;
                psum[c] += p;
                gsum[c] += g;
                if g == 1.0 {
                    ce -= (z[c] - max) - denom.ln();
                }
            }
        }
        ce /= n as f64;
        let mut mean_dice = 0.0;
        for c in 0..k {
            mean_dice += (2.0 * inter[c] + w.dice_eps) / (psum[c] + gsum[c] + w.dice_eps);
        }
        let dice = 1.0 - mean_dice / k as f64;
        (w.ce_weight * ce + w.dice_weight * dice, ce, dice)
    }

    fn random_case(k: usize, h: usize, w: usize, seed: u64) -> (Tensor, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::new(
            &[k, h, w],
            (0..k * h * w).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let labels = (0..h * w).map(|_| rng.random_range(0..k as u8)).collect();
        (logits, labels)
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 5] {
            let tape = Tape::new();
            let logits = tape.constant(Tensor::full(&[k, 4, 4], 0.3));
            let labels: Vec<u8> = (0..16).map(|i| (i % k) as u8).collect();
            let l = compute_loss(logits, &labels, &LossWeights::default()).unwrap();
            assert_eq!(l.ce, (k as f64).ln());
        }
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let (k, h, w) = (3, 4, 4);
        let labels: Vec<u8> = (0..h * w).map(|i| (i % 2) as u8).collect();
        let mut t = Tensor::full(&[k, h, w], -20.0);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[l as usize * h * w + i] = 20.0;
        }
        let tape = Tape::new();
        let l = compute_loss(tape.constant(t), &labels, &LossWeights::default()).unwrap();
        assert!(l.ce < 1e-12);
        assert!(l.dice < 1e-6);
        assert!(l.total.item() <= 1e-4);
        assert!(l.total.item() >= 0.0);
    }

    #[test]
    fn matches_loop_oracle() {
        for seed in 0..5 {
            let (logits, labels) = random_case(2, 4, 4, seed);
            let w = LossWeights::default();
            let tape = Tape::new();
            let l = compute_loss(tape.constant(logits.clone()), &labels, &w).unwrap();
            let (total, ce, dice) = loop_loss(&logits, &labels, &w);
            assert!((l.total.item() - total).abs() <= 1e-12);
            assert!((l.ce - ce).abs() <= 1e-12);
            assert!((l.dice - dice).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (logits, labels) = random_case(3, 4, 5, 9);
        let w = LossWeights::default();
        let tape = Tape::new();
        let x = tape.leaf(logits.clone());
        let g = compute_loss(x, &labels, &w)
            .unwrap()
            .total
            .backward()
            .unwrap();
        let num = finite_diff_grad(|t| loop_loss(t, &labels, &w).0, &logits, 1e-6);
        assert!(relative_error(g.get(x).unwrap(), &num) <= 1e-6);
    }

    #[test]
    fn per_pixel_shift_invariance() {
        let (logits, labels) = random_case(3, 3, 3, 4);
        let mut shifted = logits.clone();
        for i in 0..9 {
            let s = i as f64 * 0.7 - 2.0;
            for c in 0..3 {
                shifted.data_mut()[c * 9 + i] += s;
            }
        }
        let tape = Tape::new();
        let w = LossWeights::default();
        let a = compute_loss(tape.constant(logits), &labels, &w).unwrap();
        let b = compute_loss(tape.constant(shifted), &labels, &w).unwrap();
        assert!((a.ce - b.ce).abs() < 1e-12);
        assert!((a.dice - b.dice).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_input_error() {
        let tape = Tape::new();
        let r = compute_loss(tape.constant(Tensor::zeros(&[2, 2, 2])), &[0, 1, 2, 0], &LossWeights::default());
        assert!(matches!(r, Err(Error::Input(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn loss_is_non_negative(seed in 0u64..10_000, k in 2usize..5) {
                let (logits, labels) = random_case(k, 3, 4, seed);
                let tape = Tape::new();
                let l = compute_loss(tape.constant(logits), &labels, &LossWeights::default()).unwrap();
                prop_assert!(l.total.item() >= 0.0);
                prop_assert!(l.ce >= 0.0 && l.dice >= 0.0);
            }
        }
    }
}

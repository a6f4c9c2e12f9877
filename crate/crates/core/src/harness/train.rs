use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::data::{
    augment, extract_triplets, preprocess, read_image, read_labels, resize_labels, DatasetManifest,
    LabelVolume, SliceTriplet, Split, SyntheticSet, Volume,
};
use crate::error::{Error, Result};
use crate::model::{compute_loss, CsaNet, LossWeights};
use crate::nn::{AdamState, ParamStore};
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;

/// One volume ready for the network, plus its labels at source resolution.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: usize,
    pub name: String,
    /// Preprocessed intensities at the model's input extent.
    pub image: Volume,
    /// Labels at the model's input extent.
    pub label: LabelVolume,
    /// Labels at the source extent, used for evaluation.
    pub truth: LabelVolume,
}

impl Case {
    pub fn new(id: usize, name: impl Into<String>, image: &Volume, truth: LabelVolume, cfg: &RunConfig) -> Result<Self> {
        if image.dims() != truth.dims() {
            return Err(Error::input(format!(
                "image dims {:?} differ from label dims {:?}",
                image.dims(),
                truth.dims()
            )));
        }
        truth.check_classes(cfg.classes)?;
        Ok(Case {
            id,
            name: name.into(),
            image: preprocess(image, cfg.clahe, cfg.image_size)?,
            label: resize_labels(&truth, cfg.image_size, cfg.image_size)?,
            truth,
        })
    }

    pub fn triplets(&self) -> Result<Vec<SliceTriplet>> {
        extract_triplets(&self.image, &self.label, self.id)
    }

    /// Triplets with the configured center-slice noise applied. Evaluation
    /// and prediction use the clean ones.
    pub fn training_triplets(&self, cfg: &RunConfig) -> Result<Vec<SliceTriplet>> {
        let mut ts = self.triplets()?;
        for t in ts.iter_mut() {
            t.add_center_noise(cfg.center_noise, cfg.seed);
        }
        Ok(ts)
    }
}

/// Cases of one manifest split; ids are manifest line positions.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<Case>> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::config("no manifest configured"))?;
    let m = DatasetManifest::load(path)?;
    m.entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == split)
        .map(|(i, e)| {
            let name = e
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("volume{i}"));
            Case::new(i, name, &read_image(&e.image)?, read_labels(&e.label)?, cfg)
        })
        .collect()
}

/// Splits a synthetic set into the first `n_train` cases and the rest.
pub fn synthetic_cases(set: &SyntheticSet, n_train: usize, cfg: &RunConfig) -> Result<(Vec<Case>, Vec<Case>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, c) in set.cases.iter().enumerate() {
        let case = Case::new(i, format!("synth{i:03}"), &c.image, c.label.clone(), cfg)?;
        if i < n_train {
            train.push(case);
        } else {
            test.push(case);
        }
    }
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_ce: f64,
    pub mean_dice: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,mean_ce,mean_dice\n");
        for e in &self.epochs {
            writeln!(s, "{},{},{},{}", e.epoch, e.mean_loss, e.mean_ce, e.mean_dice).expect("string write");
        }
        s
    }
}

/// Called after every optimizer step with the step number, the updated
/// parameters and the batch gradients.
pub type StepObserver<'a> = dyn FnMut(u64, &ParamStore, &[Tensor]) + 'a;

/// Trains from scratch on `cases`.
pub fn train_cases(cfg: &RunConfig, cases: &[Case]) -> Result<TrainOutcome> {
    train_observed(cfg, cases, &mut |_, _, _| {})
}

pub fn train_observed(cfg: &RunConfig, cases: &[Case], observe: &mut StepObserver<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut triplets = Vec::new();
    for c in cases {
        triplets.extend(c.training_triplets(cfg)?);
    }
    if triplets.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let (net, mut store) = CsaNet::new(cfg.model(), cfg.seed)?;
    let mask = net.trainable_mask(&store);
    let mut adam = AdamState::new(store.values());
    let adam_cfg = cfg.adam();
    let weights = LossWeights::default();

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(2);

    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut epochs = Vec::new();
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut ce_sum, mut dice_sum, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Tensor> = store.values().iter().map(|v| Tensor::zeros(v.shape())).collect();
            for &i in batch {
                let t = if cfg.augment {
                    augment(&triplets[i], &mut aug_rng)
                } else {
                    triplets[i].clone()
                };
                let tape = Tape::new();
                let p = store.bind(&tape);
                let logits = net.forward(&tape, &p, &t.to_input())?;
                let loss = compute_loss(logits, &t.label, &weights)?;
                let value = loss.total.item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss became {value} at epoch {epoch}")));
                }
                loss_sum += value;
                ce_sum += loss.ce;
                dice_sum += loss.dice;
                seen += 1;
                let g = loss.total.mul_scalar(1.0 / batch.len() as f64).backward()?;
                for (acc, g) in grads.iter_mut().zip(p.gradients(&g)) {
                    acc.add_assign(&g);
                }
            }
            adam.step(&adam_cfg, store.values_mut(), &grads, Some(&mask))?;
            observe(adam.step, &store, &grads);
            if cfg.max_steps > 0 && adam.step as usize >= cfg.max_steps {
                epochs.push(stats(epoch, loss_sum, ce_sum, dice_sum, seen));
                break 'epochs;
            }
        }
        epochs.push(stats(epoch, loss_sum, ce_sum, dice_sum, seen));
    }
    let steps = adam.step;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            params: store,
            adam,
        },
        epochs,
        steps,
    })
}

fn stats(epoch: usize, loss: f64, ce: f64, dice: f64, n: usize) -> EpochStats {
    let n = n.max(1) as f64;
    EpochStats {
        epoch,
        mean_loss: loss / n,
        mean_ce: ce / n,
        mean_dice: dice / n,
    }
}

/// Trains on the manifest's train split, then writes the checkpoint and
/// loss log to the configured paths.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cases = load_split(cfg, Split::Train)?;
    if cases.is_empty() {
        return Err(Error::input("manifest has no train entries"));
    }
    let out = train_cases(cfg, &cases)?;
    if let Some(p) = &cfg.checkpoint {
        out.checkpoint.save(p)?;
    }
    if let Some(p) = &cfg.loss_log {
        fs::write(p, out.loss_csv())?;
    }
    Ok(out)
}

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::train::{load_split, Case};
use crate::data::{
    image_triplets, preprocess, read_image, resize_nearest, write_volume, LabelVolume, Split, SvolVolume,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_volume, MetricReport};
use crate::model::{argmax_labels, CsaNet, TripletInput};
use crate::nn::ParamStore;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Argmax label slices at the model extent, resized to `(h, w)` and
/// stacked with `spacing`.
fn stack_predictions(
    net: &CsaNet,
    store: &ParamStore,
    inputs: impl Iterator<Item = TripletInput>,
    dims: [usize; 3],
    spacing: [f32; 3],
) -> Result<LabelVolume> {
    let size = net.config.image_size;
    let mut data = Vec::with_capacity(dims.iter().product());
    for input in inputs {
        let labels = argmax_labels(&net.predict_logits(store, &input)?);
        data.extend(resize_nearest(&labels, size, size, dims[1], dims[2]));
    }
    LabelVolume::new(dims, spacing, data)
}

/// Segments a case slice by slice, at the resolution of its ground truth.
pub fn predict_case(net: &CsaNet, store: &ParamStore, case: &Case) -> Result<LabelVolume> {
    let triplets = case.triplets()?;
    let inputs = triplets.iter().map(|t| t.to_input());
    stack_predictions(net, store, inputs, case.truth.dims(), case.truth.spacing())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeMetrics {
    pub name: String,
    pub report: MetricReport,
}

pub fn evaluate_cases(net: &CsaNet, store: &ParamStore, cfg: &RunConfig, cases: &[Case]) -> Result<Vec<VolumeMetrics>> {
    cases
        .iter()
        .map(|c| {
            let pred = predict_case(net, store, c)?;
            Ok(VolumeMetrics {
                name: c.name.clone(),
                report: evaluate_volume(&pred, &c.truth, cfg.classes)?,
            })
        })
        .collect()
}

/// Mean DSC over every foreground class of every volume.
pub fn mean_foreground_dsc(results: &[VolumeMetrics]) -> f64 {
    let all: Vec<f64> = results
        .iter()
        .flat_map(|r| r.report.classes.iter().map(|c| c.dsc))
        .collect();
    all.iter().sum::<f64>() / all.len() as f64
}

fn hd_field(v: Option<f64>) -> (String, u8) {
    match v {
        Some(d) => (d.to_string(), 0),
        None => ("nan".to_string(), 1),
    }
}

/// `volume_id,class,dsc,hd95_mm,undefined_flag`, one row per volume and
/// foreground class, then one `mean` row per class. A mean row is flagged
/// when any of its volumes had an undefined distance; its distance averages
/// the defined ones.
pub fn metrics_csv(results: &[VolumeMetrics], classes: usize) -> String {
    let mut s = String::from("volume_id,class,dsc,hd95_mm,undefined_flag\n");
    for r in results {
        for c in &r.report.classes {
            let (hd, flag) = hd_field(c.hd95_mm);
            writeln!(s, "{},{},{},{},{}", r.name, c.class, c.dsc, hd, flag).expect("string write");
        }
    }
    for k in 1..classes {
        let rows: Vec<_> = results
            .iter()
            .filter_map(|r| r.report.classes.iter().find(|c| c.class as usize == k))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let dsc = rows.iter().map(|c| c.dsc).sum::<f64>() / rows.len() as f64;
        let defined: Vec<f64> = rows.iter().filter_map(|c| c.hd95_mm).collect();
        let hd = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let flag = (defined.len() < rows.len()) as u8;
        let (hd, _) = hd_field(hd);
        writeln!(s, "mean,{k},{dsc},{hd},{flag}").expect("string write");
    }
    s
}

/// Scores a checkpoint on the manifest's test split, writing the metrics
/// CSV when a path is configured. `cfg` must describe the checkpoint's
/// network.
pub fn evaluate(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Vec<VolumeMetrics>> {
    let (net, store) = ckpt.restore_for(cfg)?;
    let cases = load_split(cfg, Split::Test)?;
    if cases.is_empty() {
        return Err(Error::input("manifest has no test entries"));
    }
    let results = evaluate_cases(&net, &store, cfg, &cases)?;
    if let Some(p) = &cfg.metrics {
        fs::write(p, metrics_csv(&results, cfg.classes))?;
    }
    Ok(results)
}

/// Segments an image volume with the checkpoint's own preprocessing and
/// writes the labels, at the input's extent and spacing, as SVOL.
pub fn predict(ckpt: &Checkpoint, input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<LabelVolume> {
    let (net, store) = ckpt.restore()?;
    let image = read_image(input)?;
    let prepared = preprocess(&image, ckpt.config.clahe, ckpt.config.image_size)?;
    let labels = stack_predictions(
        &net,
        &store,
        image_triplets(&prepared).into_iter(),
        image.dims(),
        image.spacing(),
    )?;
    write_volume(&SvolVolume::Labels(labels.clone()), output)?;
    Ok(labels)
}

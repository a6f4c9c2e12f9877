//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use common::{blobby_mask, loop_dsc, loop_hd95, random_mask, seeded, LoopMask};
use csanet::attention::{AttentionAggregator, AttentionProjections, CrossSliceAttention, FeatureMap, InSliceAttention};
use csanet::data::{
    decode_svol, encode_svol, generate_synthetic, LabelVolume, SvolVolume, SyntheticMode, SyntheticSet, Volume,
};
use csanet::harness::{
    evaluate_cases, gradcheck, metrics_csv, synthetic_cases, tiny_config, train_cases, Checkpoint, RunConfig,
};
use csanet::harness::mean_foreground_dsc;
use csanet::metrics::{dsc, hd95, Mask};
use csanet::model::{
    compute_loss, Decoder, LossWeights, TransformerConfig, VisionTransformer,
};
use csanet::nn::{Bound, ConvTranspose2d, Conv2d, LayerNorm, ParamBuilder, ParamStore};
use csanet::tensor::{finite_diff_grad, relative_error};
use csanet::{Tape, Tensor, Var};
use rand::Rng;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
/// Entries probed per tensor; small tensors are checked in full.
const PROBES: usize = 24;

type Scalar<'a> = dyn for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Var<'t> + 'a;

fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
fn weigh<'t>(out: Var<'t>, seed: u64) -> Var<'t> {
    let r = out.tape().constant(random_tensor(&out.shape(), -1.0, 1.0, seed));
    out.mul(r).unwrap().sum()
}

fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = seeded(seed);
    for v in store.values_mut() {
        for x in v.data_mut() {
            *x += rng.random_range(-0.05..0.05);
        }
    }
}

/// Relative error between backward and central differences over the module's
/// whole gradient vector: sampled parameter entries followed by every input
/// entry.
fn grad_error(store: &ParamStore, inputs: &[Tensor], f: &Scalar<'_>) -> f64 {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let xs: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let g = f(&tape, &p, &xs).backward().unwrap();
    let param_grads = p.gradients(&g);
    let input_grads: Vec<Tensor> = xs.iter().map(|&x| g.get_or_zeros(x)).collect();

    let eval = |store: &ParamStore, inputs: &[Tensor]| {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let xs: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &p, &xs).item()
    };
    let mut rng = seeded(99);
    let mut probe = |len: usize| -> Vec<usize> {
        if len <= PROBES {
            (0..len).collect()
        } else {
            (0..PROBES).map(|_| rng.random_range(0..len)).collect()
        }
    };
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut s = store.clone();
    for i in 0..store.len() {
        for j in probe(store.values()[i].len()) {
            let orig = s.values()[i].data()[j];
            s.values_mut()[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&s, inputs);
            s.values_mut()[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&s, inputs);
            s.values_mut()[i].data_mut()[j] = orig;
            analytic.push(param_grads[i].data()[j]);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    for (k, x) in inputs.iter().enumerate() {
        let num = finite_diff_grad(
            |t| {
                let mut xs = inputs.to_vec();
                xs[k] = t.clone();
                eval(store, &xs)
            },
            x,
            FD_STEP,
        );
        analytic.extend_from_slice(input_grads[k].data());
        numeric.extend_from_slice(num.data());
    }
    let n = analytic.len();
    relative_error(&Tensor::new(&[n], analytic).unwrap(), &Tensor::new(&[n], numeric).unwrap())
}

fn check_gradients() -> (bool, String) {
    let mut results: Vec<(&str, f64)> = Vec::new();
    let none = ParamStore::new();

    let a = random_tensor(&[3, 4], -1.0, 1.0, 1);
    let b = random_tensor(&[4, 5], -1.0, 1.0, 2);
    let pos = random_tensor(&[3, 4], 0.5, 2.0, 3);
    let row = random_tensor(&[1, 4], -1.0, 1.0, 4);
    let primitives: [(&str, &Scalar<'_>, Vec<Tensor>); 8] = [
        ("matmul", &|_, _, x| weigh(x[0].matmul(x[1]).unwrap(), 10), vec![a.clone(), b.clone()]),
        (
            "add/sub/mul/div",
            &|_, _, x| weigh(x[0].add(x[1]).unwrap().mul(x[0]).unwrap().sub(x[1]).unwrap().div(x[1]).unwrap(), 11),
            vec![a.clone(), pos.clone()],
        ),
        ("exp/log", &|_, _, x| weigh(x[0].exp().add(x[1].log()).unwrap(), 12), vec![a.clone(), pos.clone()]),
        ("relu/gelu", &|_, _, x| weigh(x[0].relu().add(x[0].gelu()).unwrap(), 13), vec![a.clone()]),
        (
            "softmax/log-softmax",
            &|_, _, x| weigh(x[0].softmax_rows().unwrap().add(x[0].log_softmax_rows().unwrap()).unwrap(), 14),
            vec![a.clone()],
        ),
        (
            "transpose/reshape/concat/slice",
            &|_, _, x| {
                let c = Var::concat(&[x[0], x[1].transpose().unwrap().slice(0, 0..3).unwrap()], 1).unwrap();
                weigh(c.reshape(&[8, 3]).unwrap(), 15)
            },
            vec![a.clone(), random_tensor(&[4, 3], -1.0, 1.0, 5)],
        ),
        (
            "sum_rows/row bias/mean",
            &|_, _, x| {
                let s = x[0].add_row_bias(x[1]).unwrap().sum_rows().unwrap();
                weigh(s, 16).add(x[0].mean().mul_scalar(3.0)).unwrap()
            },
            vec![a.clone(), row.clone()],
        ),
        (
            "layer-norm rows",
            &|_, _, x| weigh(x[0].layer_norm_rows(x[1], x[2], 1e-5).unwrap(), 17),
            vec![a.clone(), row.clone(), random_tensor(&[1, 4], -1.0, 1.0, 6)],
        ),
    ];
    for (name, f, inputs) in primitives {
        results.push((name, grad_error(&none, &inputs, f)));
    }

    let img = random_tensor(&[2, 6, 6], -1.0, 1.0, 20);
    let mut b = ParamBuilder::new(21);
    let conv = Conv2d::new(&mut b, "conv", 2, 3, 3, 2, 1);
    let mut store = b.finish();
    jitter(&mut store, 1);
    results.push(("conv2d", grad_error(&store, &[img.clone()], &|_, p, x| weigh(conv.forward(p, x[0]).unwrap(), 22))));

    let mut b = ParamBuilder::new(23);
    let tconv = ConvTranspose2d::upsample2(&mut b, "up", 2, 3);
    let mut store = b.finish();
    jitter(&mut store, 2);
    results.push((
        "transposed conv",
        grad_error(&store, &[img.clone()], &|_, p, x| weigh(tconv.forward(p, x[0]).unwrap(), 24)),
    ));

    let mut b = ParamBuilder::new(25);
    let ln = LayerNorm::new(&mut b, "ln", 2);
    let mut store = b.finish();
    jitter(&mut store, 3);
    results.push((
        "layer norm",
        grad_error(&store, &[img.clone()], &|_, p, x| weigh(ln.forward_chw(p, x[0]).unwrap(), 26)),
    ));

    let (h, w, c) = (2, 3, 8);
    let f1 = random_tensor(&[h * w, c], -1.0, 1.0, 30);
    let f2 = random_tensor(&[h * w, c], -1.0, 1.0, 31);
    let f3 = random_tensor(&[h * w, c], -1.0, 1.0, 32);
    let f4 = random_tensor(&[h * w, c], -1.0, 1.0, 33);
    fn fm(v: Var<'_>) -> FeatureMap<'_> {
        FeatureMap::new(v, 2, 3).unwrap()
    }

    let mut b = ParamBuilder::new(34);
    let csa = CrossSliceAttention::new(&mut b, "csa", c, 2, false).unwrap();
    let store = b.finish();
    results.push((
        "cross-slice attention",
        grad_error(&store, &[f1.clone(), f2.clone()], &|_, p, x| {
            weigh(csa.forward(p, &fm(x[0]), &fm(x[1])).unwrap().tokens, 35)
        }),
    ));

    let mut b = ParamBuilder::new(36);
    let isa = InSliceAttention::new(&mut b, "isa", c, 2, false).unwrap();
    let store = b.finish();
    results.push((
        "in-slice attention",
        grad_error(&store, &[f1.clone()], &|_, p, x| weigh(isa.forward(p, &fm(x[0])).unwrap().tokens, 37)),
    ));

    let mut b = ParamBuilder::new(38);
    let agg = AttentionAggregator::new(&mut b, "agg", c);
    let mut store = b.finish();
    jitter(&mut store, 4);
    results.push((
        "aggregator",
        grad_error(&store, &[f1.clone(), f2.clone(), f3.clone(), f4.clone()], &|_, p, x| {
            weigh(agg.forward(p, &fm(x[0]), &fm(x[1]), &fm(x[2]), &fm(x[3])).unwrap().tokens, 39)
        }),
    ));

    let mut b = ParamBuilder::new(40);
    let vit = VisionTransformer::new(
        &mut b,
        "vit",
        TransformerConfig {
            layers: 1,
            heads: 2,
            mlp_ratio: 4,
            tokens: h * w,
            channels: c,
        },
    )
    .unwrap();
    let mut store = b.finish();
    jitter(&mut store, 5);
    results.push((
        "transformer block",
        grad_error(&store, &[f1.clone()], &|_, p, x| weigh(vit.forward(p, &fm(x[0])).unwrap().tokens, 41)),
    ));

    let mut b = ParamBuilder::new(42);
    let dec = Decoder::new(&mut b, "decoder", c, 2, 3);
    let mut store = b.finish();
    jitter(&mut store, 6);
    results.push((
        "decoder",
        grad_error(&store, &[f1.clone()], &|_, p, x| weigh(dec.forward(p, &fm(x[0])).unwrap(), 43)),
    ));

    let logits = random_tensor(&[3, 4, 4], -2.0, 2.0, 44);
    let mut rng = seeded(45);
    let labels: Vec<u8> = (0..16).map(|_| rng.random_range(0..3)).collect();
    results.push((
        "loss",
        grad_error(&none, &[logits], &|_, _, x| {
            compute_loss(x[0], &labels, &LossWeights::default()).unwrap().total
        }),
    ));

    let report = gradcheck(&tiny_config(), 6).unwrap();
    for g in &report.groups {
        results.push((g.group, g.max_rel_error));
    }

    let worst = results.iter().cloned().fold(("", 0.0), |acc, r| if r.1 > acc.1 { r } else { acc });
    let failed: Vec<&str> = results.iter().filter(|r| !(r.1 <= GRAD_TOL)).map(|r| r.0).collect();
    let detail = if failed.is_empty() {
        format!("{} checks, worst {:.2e} ({})", results.len(), worst.1, worst.0)
    } else {
        format!("over {GRAD_TOL:e}: {}", results.iter().filter(|r| !(r.1 <= GRAD_TOL)).map(|r| format!("{} {:.2e}", r.0, r.1)).collect::<Vec<_>>().join(", "))
    };
    (failed.is_empty() && report.passed(), detail)
}

/// Straight-loop multi-head attention with queries from `fq` and keys and
/// values from `fkv`.
fn loop_attention(fq: &Tensor, fkv: &Tensor, store: &ParamStore, proj: &AttentionProjections) -> Vec<f64> {
    let (n, c) = (fq.shape()[0], fq.shape()[1]);
    let half = c / 2;
    let d = half / proj.heads;
    let w = |id| store.get(id).data().to_vec();
    let (wq, wk, wv, wo) = (w(proj.query.weight), w(proj.key.weight), w(proj.value.weight), w(proj.output.weight));
    let x = |t: &Tensor, i: usize, a: usize| t.data()[i * c + a];
    let lin = |t: &Tensor, m: &[f64], i: usize, e: usize| {
        let mut s = 0.0;
        for a in 0..c {
            s += x(t, i, a) * m[a * half + e];
        }
        s
    };
    let mut heads_out = vec![0.0; n * half];
    for hd in 0..proj.heads {
        for i in 0..n {
            let mut scores = Vec::with_capacity(n);
            for j in 0..n {
                let mut s = 0.0;
                for e in hd * d..(hd + 1) * d {
                    s += lin(fq, &wq, i, e) * lin(fkv, &wk, j, e);
                }
                scores.push(if proj.scaled { s / (d as f64).sqrt() } else { s });
            }
            let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let total: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for e in hd * d..(hd + 1) * d {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += (scores[j] - m).exp() / total * lin(fkv, &wv, j, e);
                }
                heads_out[i * half + e] = acc;
            }
        }
    }
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        for j in 0..c {
            for e in 0..half {
                out[i * c + j] += heads_out[i * half + e] * wo[e * c + j];
            }
        }
    }
    out
}

fn check_attention() -> (bool, String) {
    let mut worst: f64 = 0.0;
    let mut exact = true;
    let mut cases = 0;
    for (h, w, c, heads) in [(2, 2, 4, 1), (2, 2, 4, 2), (3, 3, 8, 1), (3, 3, 8, 2), (3, 3, 8, 4)] {
        for scaled in [false, true] {
            let mut b = ParamBuilder::new(100 + cases);
            let csa = CrossSliceAttention::new(&mut b, "csa", c, heads, scaled).unwrap();
            let isa = InSliceAttention::new(&mut b, "isa", c, heads, scaled).unwrap();
            let store = b.finish();
            let center = random_tensor(&[h * w, c], -2.0, 2.0, 200 + cases);
            let neighbor = random_tensor(&[h * w, c], -2.0, 2.0, 300 + cases);
            let tape = Tape::new();
            let p = store.bind_frozen(&tape);
            let fc = FeatureMap::new(tape.constant(center.clone()), h, w).unwrap();
            let fnb = FeatureMap::new(tape.constant(neighbor.clone()), h, w).unwrap();

            let got = csa.forward(&p, &fc, &fnb).unwrap().tokens.value();
            let want = loop_attention(&neighbor, &center, &store, &csa.proj);
            let got_isa = isa.forward(&p, &fc).unwrap().tokens.value();
            let want_isa = loop_attention(&center, &center, &store, &isa.proj);
            for (g, e) in got.data().iter().zip(&want).chain(got_isa.data().iter().zip(&want_isa)) {
                worst = worst.max((g - e).abs());
            }

            let shared = InSliceAttention { proj: csa.proj.clone() };
            let same = csa.forward(&p, &fc, &fc).unwrap().tokens.value();
            exact &= same == shared.forward(&p, &fc).unwrap().tokens.value();
            cases += 1;
        }
    }
    (
        worst <= 1e-12 && exact,
        format!("{cases} configurations, max |Δ| {worst:.2e}, csa(f,f) == isa(f): {exact}"),
    )
}

fn check_metrics() -> (bool, String) {
    let dims = [8, 16, 16];
    let mut rng = seeded(7);
    let (mut dsc_exact, mut hd_worst) = (true, 0.0f64);
    let mut undefined_agree = true;
    for i in 0..100 {
        let spacing = [rng.random_range(1.0..4.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
        let (a, b) = if i % 2 == 0 {
            (blobby_mask(8, 16, 16, &mut rng), blobby_mask(8, 16, 16, &mut rng))
        } else {
            let p = rng.random_range(0.02..0.5);
            (random_mask(8, 16, 16, p, &mut rng), random_mask(8, 16, 16, p, &mut rng))
        };
        let g = Mask::new(dims, a.clone(), spacing).unwrap();
        let p = Mask::new(dims, b.clone(), spacing).unwrap();
        let lg = LoopMask { d: 8, h: 16, w: 16, on: a, spacing };
        let lp = LoopMask { d: 8, h: 16, w: 16, on: b, spacing };
        dsc_exact &= dsc(&g, &p).unwrap() == loop_dsc(&lg, &lp);
        match (hd95(&g, &p).unwrap(), loop_hd95(&lg, &lp)) {
            (Some(x), Some(y)) => hd_worst = hd_worst.max((x - y).abs()),
            (x, y) => undefined_agree &= x == y,
        }
    }
    let solid = Mask::new([2, 3, 3], vec![true; 18], [1.0; 3]).unwrap();
    let identical = (dsc(&solid, &solid).unwrap(), hd95(&solid, &solid).unwrap());
    let mut va = vec![false; 8];
    let mut vb = vec![false; 8];
    va[1] = true;
    vb[4] = true;
    let ga = Mask::new([1, 1, 8], va, [1.0, 1.0, 0.5]).unwrap();
    let gb = Mask::new([1, 1, 8], vb, [1.0, 1.0, 0.5]).unwrap();
    let apart = hd95(&ga, &gb).unwrap();
    let ok = dsc_exact && undefined_agree && hd_worst <= 1e-9 && identical == (1.0, Some(0.0)) && apart == Some(1.5);
    (
        ok,
        format!(
            "100 pairs: dsc exact {dsc_exact}, hd95 max |Δ| {hd_worst:.1e}; identical {identical:?}; 3 voxels at 0.5 mm {apart:?}"
        ),
    )
}

fn desk_config(seed: u64, center_noise: f32, no_csa: bool) -> RunConfig {
    RunConfig {
        seed,
        epochs: 10,
        batch_size: 8,
        max_steps: 200,
        image_size: 64,
        downsample: 3,
        channels: 32,
        heads: 4,
        layers: 1,
        classes: 2,
        center_noise,
        no_csa,
        ..RunConfig::default()
    }
}

fn train_and_score(cfg: &RunConfig, set: &SyntheticSet) -> (f64, Vec<f64>, u64) {
    let (train, test) = synthetic_cases(set, 20, cfg).unwrap();
    let out = train_cases(cfg, &train).unwrap();
    let (net, store) = out.checkpoint.restore().unwrap();
    let results = evaluate_cases(&net, &store, cfg, &test).unwrap();
    let losses = out.epochs.iter().map(|e| e.mean_loss).collect();
    (mean_foreground_dsc(&results), losses, out.steps)
}

fn check_learning() -> (bool, String) {
    let set = generate_synthetic(42, 28, [8, 64, 64], 2, SyntheticMode::Clean).unwrap();
    let cfg = desk_config(42, 0.0, false);
    let (dsc, losses, steps) = train_and_score(&cfg, &set);
    let ok = dsc >= 0.85 && losses.len() == 10 && losses[9] < losses[0] && steps <= 200;
    (
        ok,
        format!(
            "test dsc {dsc:.4} (>= 0.85), loss epoch 1 {:.4} -> epoch {} {:.4}, {steps} steps",
            losses[0],
            losses.len(),
            losses[losses.len() - 1]
        ),
    )
}

/// Model seeds averaged in the ablation; single runs at this scale vary by
/// several points of DSC.
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];

fn check_ablation() -> (bool, String) {
    let set = generate_synthetic(42, 28, [8, 64, 64], 2, SyntheticMode::NoisyCenter).unwrap();
    let noise = set.mode.center_noise();
    let budget = |seed, no_csa| RunConfig {
        epochs: 30,
        max_steps: 0,
        augment: false,
        ..desk_config(seed, noise, no_csa)
    };
    let (mut full, mut ablated) = (Vec::new(), Vec::new());
    for seed in ABLATION_SEEDS {
        full.push(train_and_score(&budget(seed, false), &set).0);
        ablated.push(train_and_score(&budget(seed, true), &set).0);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&full) - mean(&ablated);
    let runs: Vec<String> = full.iter().zip(&ablated).map(|(f, a)| format!("{f:.3}/{a:.3}")).collect();
    (
        gap >= 0.02,
        format!(
            "augmentation off, mean over seeds {ABLATION_SEEDS:?}: full {:.4}, without cross-slice {:.4}, gap {gap:+.4} (>= 0.02); per seed {}",
            mean(&full),
            mean(&ablated),
            runs.join(" ")
        ),
    )
}

fn check_determinism() -> (bool, String) {
    let cfg = RunConfig {
        seed: 5,
        epochs: 2,
        batch_size: 4,
        image_size: 32,
        downsample: 2,
        channels: 8,
        heads: 2,
        layers: 1,
        ..RunConfig::default()
    };
    let set = generate_synthetic(5, 4, [4, 32, 32], 2, SyntheticMode::Clean).unwrap();
    let (train, test) = synthetic_cases(&set, 3, &cfg).unwrap();
    let run = || {
        let out = train_cases(&cfg, &train).unwrap();
        let (net, store) = out.checkpoint.restore().unwrap();
        let metrics = metrics_csv(&evaluate_cases(&net, &store, &cfg, &test).unwrap(), cfg.classes);
        (out.checkpoint.encode(), out.loss_csv(), metrics)
    };
    let (a, b) = (run(), run());
    let runs_equal = a == b;

    let mut rng = seeded(6);
    let image = Volume::new(
        [3, 5, 7],
        [2.5, 0.7, 0.7],
        (0..105).map(|_| f32::from_bits(rng.random_range(0..0x7f00_0000u32))).collect(),
    )
    .unwrap();
    let labels = LabelVolume::new([3, 5, 7], [2.5, 0.7, 0.7], (0..105).map(|_| rng.random()).collect()).unwrap();
    let svol_ok = [SvolVolume::Image(image), SvolVolume::Labels(labels)].iter().all(|v| {
        let bytes = encode_svol(v);
        let back = decode_svol(&bytes).unwrap();
        &back == v && encode_svol(&back) == bytes
    });
    let ckpt = Checkpoint::decode(&a.0).unwrap();
    let ckpt_ok = ckpt.encode() == a.0;
    (
        runs_equal && svol_ok && ckpt_ok,
        format!("repeat run identical {runs_equal}, svol round trip {svol_ok}, ckpt round trip {ckpt_ok}"),
    )
}

fn check_loss_forms() -> (bool, String) {
    let mut exact = true;
    for k in [2usize, 3, 4, 7] {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::full(&[k, 8, 8], -0.7));
        let labels: Vec<u8> = (0..64).map(|i| (i % k) as u8).collect();
        let l = compute_loss(logits, &labels, &LossWeights::default()).unwrap();
        exact &= l.ce == (k as f64).ln();
    }
    let labels: Vec<u8> = (0..64).map(|i| ((i / 3) % 3) as u8).collect();
    let mut t = Tensor::full(&[3, 8, 8], -30.0);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[l as usize * 64 + i] = 30.0;
    }
    let tape = Tape::new();
    let total = compute_loss(tape.constant(t), &labels, &LossWeights::default())
        .unwrap()
        .total
        .item();
    (
        exact && (0.0..=1e-4).contains(&total),
        format!("uniform CE == ln K exactly: {exact}; one-hot total {total:.2e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> (bool, String)); 7] = [
        ("gradient suite", check_gradients),
        ("attention oracle", check_attention),
        ("metrics oracle", check_metrics),
        ("learning check", check_learning),
        ("ablation direction", check_ablation),
        ("determinism", check_determinism),
        ("loss closed forms", check_loss_forms),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let (ok, detail) = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failures += !ok as usize;
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

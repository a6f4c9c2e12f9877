use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{compute_loss, param_group, CsaNet, LossWeights, TripletInput, PARAM_GROUPS};
use crate::nn::{Bound, ParamStore};
use crate::tensor::{relative_error, Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Half-width of the uniform jitter added to every parameter so that no
/// ReLU input sits exactly on its kink.
const JITTER: f64 = 0.05;

/// Builds the scalar under test from a bound network.
pub type LossFn = dyn for<'t> Fn(&CsaNet, &'t Tape, &Bound<'t>, &TripletInput, &[u8]) -> Result<Var<'t>>;

/// Default objective: the training loss.
pub fn training_loss<'t>(
    net: &CsaNet,
    tape: &'t Tape,
    p: &Bound<'t>,
    input: &TripletInput,
    labels: &[u8],
) -> Result<Var<'t>> {
    let logits = net.forward(tape, p, input)?;
    Ok(compute_loss(logits, labels, &LossWeights::default())?.total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub group: &'static str,
    pub sampled: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            writeln!(
                s,
                "{:<10} {:>3} sampled  max rel err {:.3e}  {}",
                g.group,
                g.sampled,
                g.max_rel_error,
                if g.passed { "PASS" } else { "FAIL" }
            )
            .expect("string write");
        }
        s
    }
}

/// The small network gradient checks run on.
pub fn tiny_config() -> RunConfig {
    RunConfig {
        image_size: 32,
        downsample: 2,
        channels: 8,
        heads: 2,
        layers: 1,
        classes: 3,
        ..RunConfig::default()
    }
}

pub fn gradcheck(cfg: &RunConfig, per_group: usize) -> Result<GradcheckReport> {
    gradcheck_with(cfg, per_group, &training_loss)
}

/// Compares backward gradients of `loss` against central differences for
/// `per_group` sampled scalars of every parameter group.
pub fn gradcheck_with(cfg: &RunConfig, per_group: usize, loss: &LossFn) -> Result<GradcheckReport> {
    if cfg.image_size > 64 || cfg.channels > 16 {
        return Err(Error::config(format!(
            "gradcheck needs a tiny network (image ≤ 64, channels ≤ 16), got {} / {}",
            cfg.image_size, cfg.channels
        )));
    }
    let mut model = cfg.model();
    model.use_csa = true;
    model.use_isa = true;
    let (net, mut store) = CsaNet::new(model, cfg.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    for v in store.values_mut() {
        for x in v.data_mut() {
            *x += rng.random_range(-JITTER..JITTER);
        }
    }
    let size = cfg.image_size;
    let mut slice = || {
        Tensor::new(&[1, size, size], (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect())
            .expect("slice extent")
    };
    let input = TripletInput {
        prev: slice(),
        center: slice(),
        next: slice(),
    };
    let labels: Vec<u8> = (0..size * size)
        .map(|_| rng.random_range(0..cfg.classes as u8))
        .collect();

    let analytic = {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let g = loss(&net, &tape, &p, &input, &labels)?.backward()?;
        p.gradients(&g)
    };
    let value = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(loss(&net, &tape, &p, &input, &labels)?.item())
    };

    let mut groups = Vec::with_capacity(PARAM_GROUPS.len());
    for group in PARAM_GROUPS {
        let members: Vec<(usize, usize)> = store
            .names()
            .iter()
            .enumerate()
            .filter(|(_, n)| param_group(n) == Some(group))
            .flat_map(|(i, _)| (0..store.values()[i].len()).map(move |j| (i, j)))
            .collect();
        let picks = sample(&mut rng, members.len(), per_group.min(members.len()));
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for k in picks.iter() {
            let (i, j) = members[k];
            let orig = store.values()[i].data()[j];
            store.values_mut()[i].data_mut()[j] = orig + GRADCHECK_STEP;
            let up = value(&store)?;
            store.values_mut()[i].data_mut()[j] = orig - GRADCHECK_STEP;
            let down = value(&store)?;
            store.values_mut()[i].data_mut()[j] = orig;
            a.push(analytic[i].data()[j]);
            b.push((up - down) / (2.0 * GRADCHECK_STEP));
        }
        let n = a.len();
        let err = if n == 0 {
            0.0
        } else {
            relative_error(&Tensor::new(&[n], a)?, &Tensor::new(&[n], b)?)
        };
        groups.push(GroupResult {
            group,
            sampled: n,
            max_rel_error: err,
            passed: n > 0 && err <= GRADCHECK_TOLERANCE,
        });
    }
    Ok(GradcheckReport { groups })
}

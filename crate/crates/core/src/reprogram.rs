//! Reprogramming a frozen segmentation network: a trainable elementwise affine
//! transform on the input and a trainable 1×1 convolution on the output. The base
//! parameters enter every tape as constants and are never updated.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::synthetic::brightness_bands;
use crate::dataio::ImagePair;
use crate::error::{Error, Result};
use crate::model::{Container, ContainerKind, Model, ModelSpec, Variant};
use crate::nn::{conv2d, glorot_bound};
use crate::optim::{Adam, AdamConfig};
use crate::real::{FloatWidth, Real};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::{self, LossKind, Sample, TrainConfig};

/// `X̃ = W ⊙ X + B`. `w` and `b` are `m×n` (shared by all channels) or `C×m×n`.
pub fn input_transform<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if xs.len() != 3 || ws != tape.shape(b) {
        return Err(Error::shape("input_transform", &xs, &ws));
    }
    let (w, b) = match ws.len() {
        2 if ws[..] == xs[1..] => {
            let w1 = tape.reshape(w, &[1, ws[0], ws[1]])?;
            let b1 = tape.reshape(b, &[1, ws[0], ws[1]])?;
            (
                tape.concat(&vec![w1; xs[0]], 0)?,
                tape.concat(&vec![b1; xs[0]], 0)?,
            )
        }
        3 if ws == xs => (w, b),
        _ => return Err(Error::shape("input_transform", &xs, &ws)),
    };
    let scaled = tape.mul(w, x)?;
    tape.add(scaled, b)
}

/// Per-pixel linear map `C_old → C_new` (`kernel: C_new×C_old×1×1`), then a
/// sigmoid when `sigmoid` is set.
pub fn output_map<T: Real>(
    tape: &mut Tape<T>,
    base_out: Var,
    kernel: Var,
    bias: Var,
    sigmoid: bool,
) -> Result<Var> {
    let (xs, ks) = (tape.shape(base_out).to_vec(), tape.shape(kernel).to_vec());
    if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2..] != [1, 1] {
        return Err(Error::shape("output_map", &xs, &ks));
    }
    let y = conv2d(tape, base_out, kernel, Some(bias))?;
    if sigmoid {
        tape.sigmoid(y)
    } else {
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformMode {
    /// One `m×n` pair applied to every channel.
    #[default]
    Shared,
    /// A separate `m×n` pair per input channel.
    PerChannel,
}

impl fmt::Display for TransformMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformMode::Shared => "shared",
            TransformMode::PerChannel => "per-channel",
        })
    }
}

impl FromStr for TransformMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(TransformMode::Shared),
            "per-channel" => Ok(TransformMode::PerChannel),
            other => Err(Error::Config(format!(
                "unknown transform mode {other:?} (shared | per-channel)"
            ))),
        }
    }
}

/// Trainable input transform and output map around a frozen base model.
#[derive(Debug, Clone)]
pub struct ReprogramWrapper<T: Real> {
    pub mode: TransformMode,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub map_kernel: Tensor<T>,
    pub map_bias: Tensor<T>,
    pub sigmoid: bool,
    base: Model<T>,
    base_checksum: String,
}

impl<T: Real> ReprogramWrapper<T> {
    /// `W ≡ 1`, `B ≡ 0`; Glorot-uniform output kernel with zero bias drawn from `seed`.
    /// The sigmoid is applied only for a single output channel.
    pub fn new(base: Model<T>, mode: TransformMode, c_new: usize, seed: u64) -> Result<Self> {
        if c_new == 0 {
            return Err(Error::Config(
                "reprogram output channels must be positive".into(),
            ));
        }
        let spec = base.spec();
        let n = spec.input_size;
        let shape = match mode {
            TransformMode::Shared => vec![n, n],
            TransformMode::PerChannel => vec![spec.in_channels, n, n],
        };
        let c_old = spec.out_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = glorot_bound(c_old, c_new);
        Ok(ReprogramWrapper {
            mode,
            weight: Tensor::ones(shape.clone()),
            bias: Tensor::zeros(shape),
            map_kernel: Tensor::uniform(vec![c_new, c_old, 1, 1], -bound, bound, &mut rng),
            map_bias: Tensor::zeros(vec![c_new]),
            sigmoid: c_new == 1,
            base_checksum: base.checksum(),
            base,
        })
    }

    pub fn base(&self) -> &Model<T> {
        &self.base
    }

    pub fn base_checksum(&self) -> &str {
        &self.base_checksum
    }

    /// Fails with [`Error::ChecksumDrift`] if the base no longer hashes to the recorded value.
    pub fn verify_base(&self) -> Result<()> {
        let now = self.base.checksum();
        if now != self.base_checksum {
            return Err(Error::ChecksumDrift {
                before: self.base_checksum.clone(),
                after: now,
            });
        }
        Ok(())
    }

    pub fn c_new(&self) -> usize {
        self.map_kernel.shape()[0]
    }

    /// Trainable tensors in order: W, B, output kernel, output bias.
    pub fn trainable(&self) -> [&Tensor<T>; 4] {
        [&self.weight, &self.bias, &self.map_kernel, &self.map_bias]
    }

    fn set_trainable(&mut self, values: Vec<Tensor<T>>) {
        let [w, b, k, c]: [Tensor<T>; 4] = values.try_into().expect("four tensors");
        (self.weight, self.bias, self.map_kernel, self.map_bias) = (w, b, k, c);
    }

    /// Records the base as constants and the wrapper tensors as trainable leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> ([Var; 4], Vec<Var>) {
        let base = self.base.bind(tape, |_| true);
        let own = self.trainable().map(|t| tape.param(t.clone()));
        (own, base)
    }

    pub fn forward(&self, tape: &mut Tape<T>, own: &[Var; 4], base: &[Var], x: Var) -> Result<Var> {
        let xt = input_transform(tape, x, own[0], own[1])?;
        let inner = self.base.forward(tape, base, xt)?.output;
        output_map(tape, inner, own[2], own[3], self.sigmoid)
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (own, base) = self.bind(&mut tape);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &own, &base, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_container(&self) -> Container {
        let text = format!(
            "base_checksum={}\nmode={}\nc_new={}\nsigmoid={}\n",
            self.base_checksum,
            self.mode,
            self.c_new(),
            self.sigmoid
        );
        let mut payload = Vec::new();
        for t in self.trainable() {
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        Container {
            kind: ContainerKind::Wrapper,
            width: FloatWidth::of::<T>(),
            text,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    /// Rebuilds a wrapper around `base`, which must hash to the stored checksum.
    pub fn from_container(c: &Container, base: Model<T>, path: &str) -> Result<Self> {
        let fail = |msg: String| Error::ModelFile {
            path: path.to_string(),
            msg,
        };
        if c.kind != ContainerKind::Wrapper {
            return Err(fail(
                "file holds a model, not a reprogramming wrapper".into(),
            ));
        }
        let mut fields = std::collections::BTreeMap::new();
        for line in c.text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("bad header line {line:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| fail(format!("missing header field {k}")))
        };
        let mode: TransformMode = get("mode")?.parse()?;
        let c_new: usize = get("c_new")?
            .parse()
            .map_err(|_| fail("bad c_new".into()))?;
        let sigmoid: bool = get("sigmoid")?
            .parse()
            .map_err(|_| fail("bad sigmoid flag".into()))?;
        let mut w = Self::new(base, mode, c_new, 0)?;
        if get("base_checksum")? != w.base_checksum {
            return Err(fail(format!(
                "base checksum {} does not match the supplied base {}",
                get("base_checksum")?,
                w.base_checksum
            )));
        }
        let values = c.scalars::<T>(path)?;
        let need: usize = w.trainable().iter().map(|t| t.len()).sum();
        if values.len() != need {
            return Err(fail(format!(
                "wrapper needs {need} values, file stores {}",
                values.len()
            )));
        }
        let mut at = 0;
        let tensors = w
            .trainable()
            .map(|t| {
                let n = t.len();
                at += n;
                Tensor::new(t.shape().to_vec(), values[at - n..at].to_vec()).expect("sizes")
            })
            .to_vec();
        w.set_trainable(tensors);
        w.sigmoid = sigmoid;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprogramConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ReprogramConfig {
    fn default() -> Self {
        ReprogramConfig {
            steps: 100,
            batch_size: 4,
            loss: LossKind::Dice,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Trains only the wrapper tensors. Returns the per-step loss trajectory. The base
/// checksum is verified before and after; any drift is a hard error.
pub fn reprogram_train<T: Real>(
    wrapper: &mut ReprogramWrapper<T>,
    samples: &[Sample<T>],
    config: &ReprogramConfig,
) -> Result<Vec<f64>> {
    wrapper.verify_base()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no reprogramming samples".into()));
    }
    let batch = config.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = Vec::new();
    let mut trajectory = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        if order.len() < batch {
            let mut next: Vec<usize> = (0..samples.len()).collect();
            next.shuffle(&mut rng);
            order.extend(next);
        }
        let picked: Vec<usize> = order.drain(..batch.min(order.len())).collect();
        let mut tape = Tape::new();
        let (own, base) = wrapper.bind(&mut tape);
        let mut total = None;
        for &i in &picked {
            let x = tape.constant(samples[i].image.clone());
            let y = tape.constant(samples[i].mask.clone());
            let pred = wrapper.forward(&mut tape, &own, &base, x)?;
            let l = config.loss.apply(&mut tape, pred, y)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.expect("nonempty batch");
        let loss = tape.scale(total, T::of(1.0 / picked.len() as f64))?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                batch: step,
            });
        }
        let grads = tape.backward(loss)?;
        let mut values: Vec<Tensor<T>> = wrapper.trainable().iter().map(|&t| t.clone()).collect();
        let g: Vec<Option<&Tensor<T>>> = own.iter().map(|&v| grads.get(v)).collect();
        adam.step(&mut values, &g)?;
        wrapper.set_trainable(values);
        trajectory.push(value);
    }
    wrapper.verify_base()?;
    Ok(trajectory)
}

/// Mean loss of the wrapper over `samples` without updating anything.
pub fn wrapper_loss<T: Real>(
    wrapper: &ReprogramWrapper<T>,
    samples: &[Sample<T>],
    loss: LossKind,
) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let (own, base) = wrapper.bind(&mut tape);
        let x = tape.constant(s.image.clone());
        let y = tape.constant(s.mask.clone());
        let pred = wrapper.forward(&mut tape, &own, &base, x)?;
        let l = loss.apply(&mut tape, pred, y)?;
        sum += tape.value(l).item().as_f64();
    }
    Ok(sum / samples.len() as f64)
}

/// Samples of the multi-class base task: brightness-band one-hot targets.
pub fn base_task_samples<T: Real>(pairs: &[ImagePair], channels: usize) -> Vec<Sample<T>> {
    pairs
        .iter()
        .map(|p| Sample {
            image: p.image.to_chw(),
            mask: brightness_bands(&p.image, channels).to_chw(),
        })
        .collect()
}

/// Small plain U-Net with a `channels`-way head trained on the brightness-band task.
pub fn pretrain_base<T: Real>(
    pairs: &[ImagePair],
    channels: usize,
    widths: Vec<usize>,
    epochs: usize,
    seed: u64,
) -> Result<Model<T>> {
    let size = pairs
        .first()
        .ok_or_else(|| Error::Dataset("no base-task images".into()))?
        .height();
    let mut spec = ModelSpec::new(Variant::PlainUnet, size, widths).with_seed(seed);
    spec.out_channels = channels;
    let model = Model::build(spec)?;
    let cfg = TrainConfig {
        epochs,
        loss: LossKind::Bce,
        seed,
        ..Default::default()
    };
    Ok(train::train(
        model,
        &base_task_samples(pairs, channels),
        &[],
        &cfg,
        |_| {},
    )?
    .best)
}

use std::fmt::Display;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ConvGeometry;
use crate::odconv::{
    AttentionFlags, AttentionParams, LayerVars, ODConvConfig, ODConvLayer, SpatialActivation,
};
use crate::tensor::Tensor;

mod as_str {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> std::result::Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dynamic-layer settings shared by every convolution of a [`Model`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicSpec {
    pub n: usize,
    pub r: f64,
    pub hidden_floor: usize,
    #[serde(with = "as_str")]
    pub flags: AttentionFlags,
    pub share: bool,
    #[serde(with = "as_str")]
    pub spatial_activation: SpatialActivation,
}

impl DynamicSpec {
    pub fn new(n: usize) -> Self {
        DynamicSpec {
            n,
            r: 0.25,
            hidden_floor: 4,
            flags: AttentionFlags::ALL,
            share: true,
            spatial_activation: SpatialActivation::Sigmoid,
        }
    }
}

/// `conv → [sample norm] → relu → 2×2 average pool` for every layer but the
/// last, which is followed by global average pooling and a bias-free linear
/// classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub k: usize,
    pub num_classes: usize,
    /// `None` builds regular convolutions.
    pub dynamic: Option<DynamicSpec>,
    /// Standardise each sample after every convolution (no learned affine).
    #[serde(default)]
    pub normalize: bool,
}

/// Variance floor of the per-sample normalisation.
pub const NORM_EPS: f64 = 1e-5;

impl ModelSpec {
    pub fn toy(in_channels: usize, num_classes: usize, dynamic: Option<DynamicSpec>) -> Self {
        ModelSpec {
            in_channels,
            widths: vec![8, 16, 16],
            k: 3,
            num_classes,
            dynamic,
            normalize: true,
        }
    }

    pub fn layer_config(&self, i: usize) -> ODConvConfig {
        let c_in = if i == 0 { self.in_channels } else { self.widths[i - 1] };
        let base = ODConvConfig::new(c_in, self.widths[i], ConvGeometry::same(self.k));
        match self.dynamic {
            None => base.with_flags(AttentionFlags::NONE),
            Some(d) => base
                .with_kernels(d.n)
                .with_reduction(d.r)
                .with_hidden_floor(d.hidden_floor)
                .with_flags(d.flags)
                .with_sharing(d.share)
                .with_spatial_activation(d.spatial_activation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.in_channels == 0 || self.num_classes < 2 {
            return Err(Error::param("model needs >= 1 layer, positive widths and >= 2 classes"));
        }
        if self.k % 2 == 0 {
            return Err(Error::param(format!("kernel size must be odd, got {}", self.k)));
        }
        (0..self.widths.len()).try_for_each(|i| self.layer_config(i).validate())
    }
}

fn layer_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// Tape handles of a model's parameters.
pub struct ModelVars<'t> {
    pub layers: Vec<LayerVars<'t>>,
    pub fc: Var<'t>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<ODConvLayer>,
    /// `[num_classes, widths.last]`
    pub fc: Tensor,
}

impl Model {
    /// Layer `i` draws from a seed derived from `(seed, i)`, so a static and a
    /// dynamic model built from one seed share their first kernel of every layer
    /// and the classifier.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.widths.len())
            .map(|i| ODConvLayer::init(spec.layer_config(i), layer_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        let last = *spec.widths.last().expect("validated");
        let bound = 1.0 / (last as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(seed, usize::MAX - 1));
        let fc = Tensor::uniform(&[spec.num_classes, last], -bound, bound, &mut rng)?;
        Ok(Model { spec, layers, fc })
    }

    /// Parameter names in storage order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            names.push(format!("layer{i}.kernels"));
            for (slot, name) in l.attention.slots().iter().zip(AttentionParams::SLOT_NAMES) {
                if slot.is_some() {
                    names.push(format!("layer{i}.attention.{name}"));
                }
            }
        }
        names.push("fc.weight".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.kernels.weights());
            out.extend(l.attention.slots().into_iter().flatten());
        }
        out.push(&self.fc);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.kernels.weights_mut());
            out.extend(l.attention.slots_mut().into_iter().filter_map(|s| s.as_mut()));
        }
        out.push(&mut self.fc);
        out
    }

    /// Whether each parameter (in storage order) is updated when attention is frozen.
    pub fn trainable_mask(&self, freeze_attention: bool) -> Vec<bool> {
        self.param_names()
            .iter()
            .map(|n| !(freeze_attention && n.contains(".attention.")))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Ordered `(name, shape)` list plus the model description; the basis of
    /// the checkpoint digest.
    pub fn topology(&self) -> String {
        let mut s = format!(
            "spec {}\n",
            serde_json::to_string(&self.spec).expect("model spec serialises")
        );
        for (name, t) in self.param_names().iter().zip(self.params()) {
            s.push_str(&format!("{name} {:?}\n", t.dims()));
        }
        s
    }

    pub fn register<'t>(&self, tape: &'t Tape, freeze_attention: bool) -> ModelVars<'t> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut v = l.register(tape, true);
                if freeze_attention {
                    v.slots = l.attention.slots().map(|s| s.map(|t| tape.constant(t.clone())));
                }
                v
            })
            .collect();
        ModelVars {
            layers,
            fc: tape.leaf(self.fc.clone()),
        }
    }

    pub fn forward_on_tape<'t>(&self, tape: &'t Tape, x: Var<'t>, vars: &ModelVars<'t>, temperature: f64) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (layer, v)) in self.layers.iter().zip(&vars.layers).enumerate() {
            h = layer.forward_on_tape(tape, h, v, temperature)?;
            if self.spec.normalize {
                h = h.sample_norm(NORM_EPS)?;
            }
            h = h.relu()?;
            if i < last {
                h = h.avg_pool2d(2, 2)?;
            }
        }
        h.global_average_pool()?.fully_connected(vars.fc)
    }

    /// Logits `[b, num_classes]` outside any training graph.
    pub fn predict(&self, x: &Tensor, temperature: f64) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.register(&tape, true);
        let xv = tape.constant(x.clone());
        Ok(self.forward_on_tape(&tape, xv, &vars, temperature)?.value().as_ref().clone())
    }

    /// Mean cross-entropy, number of correct predictions and the gradients of
    /// every trainable parameter (storage order, frozen ones skipped).
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        labels: &[usize],
        temperature: f64,
        freeze_attention: bool,
    ) -> Result<(f64, usize, Vec<Tensor>)> {
        let tape = Tape::new();
        let vars = self.register(&tape, freeze_attention);
        let xv = tape.constant(x.clone());
        let logits = self.forward_on_tape(&tape, xv, &vars, temperature)?;
        let loss = logits.cross_entropy(labels)?;
        let grads = tape.backward(loss)?;
        let correct = correct_predictions(&logits.value(), labels);
        let mut out = Vec::new();
        for lv in &vars.layers {
            out.push(grads.wrt(lv.kernels));
            if !freeze_attention {
                out.extend(lv.slots.iter().flatten().map(|v| grads.wrt(*v)));
            }
        }
        out.push(grads.wrt(vars.fc));
        Ok((loss.value().item()?, correct, out))
    }
}

pub(crate) fn correct_predictions(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.dims()[1];
    logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
            best.0 == l
        })
        .count()
}

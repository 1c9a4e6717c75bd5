use serde::Serialize;

use super::data::SyntheticDataset;
use super::model::Model;
use crate::error::Result;
use crate::tensor::Tensor;

pub const HISTOGRAM_BINS: usize = 10;

/// Distribution of one attention type in one layer over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionStats {
    pub kind: &'static str,
    /// False when the head is disabled or degenerate (constant 1).
    pub enabled: bool,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Equal-width bins over `[0, 1]`; the last bin is closed.
    pub histogram: [u64; HISTOGRAM_BINS],
    /// Mean per attention index (spatial position, channel, filter or kernel)
    /// averaged over samples and attention copies.
    pub per_index_mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerAttentionStats {
    pub layer: usize,
    pub spatial: AttentionStats,
    pub in_channel: AttentionStats,
    pub filter: AttentionStats,
    pub kernel: AttentionStats,
}

impl LayerAttentionStats {
    pub fn all(&self) -> [&AttentionStats; 4] {
        [&self.spatial, &self.in_channel, &self.filter, &self.kernel]
    }
}

struct Accumulator {
    values: Vec<f64>,
    index_sums: Vec<f64>,
    index_counts: Vec<usize>,
}

impl Accumulator {
    fn new(width: usize) -> Self {
        Accumulator {
            values: Vec::new(),
            index_sums: vec![0.0; width],
            index_counts: vec![0; width],
        }
    }

    fn add(&mut self, t: &Tensor) {
        let width = self.index_sums.len();
        for (i, &v) in t.data().iter().enumerate() {
            self.values.push(v);
            self.index_sums[i % width] += v;
            self.index_counts[i % width] += 1;
        }
    }

    fn finish(self, kind: &'static str, enabled: bool) -> AttentionStats {
        let count = self.values.len();
        let n = count.max(1) as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut histogram = [0u64; HISTOGRAM_BINS];
        for &v in &self.values {
            let bin = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
        }
        AttentionStats {
            kind,
            enabled,
            count,
            mean,
            std: var.sqrt(),
            min: self.values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            histogram,
            per_index_mean: self
                .index_sums
                .iter()
                .zip(&self.index_counts)
                .map(|(s, &c)| s / c.max(1) as f64)
                .collect(),
        }
    }
}

/// Runs the model over `data` at `temperature` and summarises every
/// layer's attentions. Samples are processed in batches of `batch_size`.
pub fn collect_attention_stats(
    model: &Model,
    data: &SyntheticDataset,
    temperature: f64,
    batch_size: usize,
) -> Result<Vec<LayerAttentionStats>> {
    let mut accs: Vec<[Accumulator; 4]> = model
        .layers
        .iter()
        .map(|l| {
            let c = &l.cfg;
            [
                Accumulator::new(c.kernel_area()),
                Accumulator::new(c.c_in_per_filter()),
                Accumulator::new(c.c_out),
                Accumulator::new(c.n),
            ]
        })
        .collect();
    let idx: Vec<usize> = (0..data.len()).collect();
    let last = model.layers.len() - 1;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (mut h, _) = data.batch(chunk)?;
        for (i, layer) in model.layers.iter().enumerate() {
            let att = layer.attention(&h, temperature)?;
            for (acc, t) in accs[i]
                .iter_mut()
                .zip([&att.alpha_s, &att.alpha_c, &att.alpha_f, &att.alpha_w])
            {
                acc.add(t);
            }
            h = layer.forward(&h, temperature)?;
            if model.spec.normalize {
                h = crate::nn::sample_norm(&h, super::model::NORM_EPS)?;
            }
            h = h.relu();
            if i < last {
                h = crate::nn::avg_pool2d(&h, 2, 2)?;
            }
        }
    }
    Ok(accs
        .into_iter()
        .zip(&model.layers)
        .enumerate()
        .map(|(i, ([s, c, f, w], l))| {
            let cfg = &l.cfg;
            LayerAttentionStats {
                layer: i,
                spatial: s.finish("spatial", cfg.has_spatial_head()),
                in_channel: c.finish("in_channel", cfg.has_in_channel_head()),
                filter: f.finish("filter", cfg.has_filter_head()),
                kernel: w.finish("kernel", cfg.has_kernel_head()),
            }
        })
        .collect())
}

use super::data::{SyntheticConfig, SyntheticDataset};
use super::model::{DynamicSpec, Model, ModelSpec};
use super::train::TrainOptions;
use crate::error::{Error, Result};
use crate::odconv::parse_ratio;

/// A complete toy run: model, data and optimiser settings. Parsed from the
/// line-oriented format described in `docs/formats.md`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub data: SyntheticConfig,
    pub eval_samples_per_class: usize,
    pub options: TrainOptions,
    /// Seeds model initialisation, data generation and shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let data = SyntheticConfig::default();
        TrainConfig {
            model: ModelSpec::toy(data.channels, data.num_classes, Some(DynamicSpec::new(4))),
            data,
            eval_samples_per_class: 32,
            options: TrainOptions::default(),
            seed: 0,
        }
    }
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Spec { line, msg: msg.into() }
}

fn one<T: std::str::FromStr>(line: usize, key: &str, args: &[&str]) -> Result<T> {
    match args {
        [v] => v.parse().map_err(|_| err(line, format!("`{key}` cannot parse `{v}`"))),
        _ => Err(err(line, format!("`{key}` expects exactly one value"))),
    }
}

fn parse_dynamic(line: usize, args: &[&str]) -> Result<Option<DynamicSpec>> {
    let Some((kind, rest)) = args.split_first() else {
        return Err(err(line, "`conv` expects `static` or `odconv ...`"));
    };
    match *kind {
        "static" if rest.is_empty() => Ok(None),
        "odconv" => {
            let mut d = DynamicSpec::new(1);
            for kv in rest {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| err(line, format!("expected key=value, got `{kv}`")))?;
                let bad = || err(line, format!("cannot parse `{kv}`"));
                match k {
                    "n" => d.n = v.parse().map_err(|_| bad())?,
                    "r" => d.r = parse_ratio(v).map_err(|e| err(line, e.to_string()))?,
                    "floor" => d.hidden_floor = v.parse().map_err(|_| bad())?,
                    "flags" => d.flags = v.parse().map_err(|e: Error| err(line, e.to_string()))?,
                    "share" => d.share = v.parse().map_err(|_| bad())?,
                    "spatial" => d.spatial_activation = v.parse().map_err(|e: Error| err(line, e.to_string()))?,
                    _ => return Err(err(line, format!("unknown odconv key `{k}`"))),
                }
            }
            Ok(Some(d))
        }
        other => Err(err(line, format!("unknown conv kind `{other}`"))),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let (key, args) = (words[0], &words[1..]);
            let o = &mut c.options;
            match key {
                "layers" => {
                    c.model.widths = args
                        .iter()
                        .map(|w| w.parse().map_err(|_| err(line, format!("bad width `{w}`"))))
                        .collect::<Result<_>>()?;
                }
                "kernel" => c.model.k = one(line, key, args)?,
                "conv" => c.model.dynamic = parse_dynamic(line, args)?,
                "classes" => c.data.num_classes = one(line, key, args)?,
                "image" => match args {
                    [ch, h, w] => {
                        let p = |v: &str| v.parse::<usize>().map_err(|_| err(line, format!("bad extent `{v}`")));
                        let (ch, h, w) = (p(ch)?, p(h)?, p(w)?);
                        if h != w {
                            return Err(err(line, "images must be square"));
                        }
                        c.data.channels = ch;
                        c.data.size = h;
                    }
                    _ => return Err(err(line, "`image` expects `image C H W`")),
                },
                "train_samples" => c.data.samples_per_class = one(line, key, args)?,
                "eval_samples" => c.eval_samples_per_class = one(line, key, args)?,
                "noise" => c.data.noise = one(line, key, args)?,
                "epochs" => o.epochs = one(line, key, args)?,
                "batch" => o.batch_size = one(line, key, args)?,
                "lr" => o.learning_rate = one(line, key, args)?,
                "momentum" => o.momentum = one(line, key, args)?,
                "weight_decay" => o.weight_decay = one(line, key, args)?,
                "freeze_attention" => o.freeze_attention = one(line, key, args)?,
                "seed" => c.seed = one(line, key, args)?,
                "temperature" => {
                    for kv in args {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| err(line, format!("expected key=value, got `{kv}`")))?;
                        let bad = || err(line, format!("cannot parse `{kv}`"));
                        match k {
                            "start" => o.t_start = v.parse().map_err(|_| bad())?,
                            "end" => o.t_end = v.parse().map_err(|_| bad())?,
                            "warmup" => o.warmup_epochs = v.parse().map_err(|_| bad())?,
                            _ => return Err(err(line, format!("unknown temperature key `{k}`"))),
                        }
                    }
                }
                _ => return Err(err(line, format!("unknown key `{key}`"))),
            }
        }
        c.model.in_channels = c.data.channels;
        c.model.num_classes = c.data.num_classes;
        c.options.seed = c.seed;
        c.model.validate()?;
        c.options.schedule().validate()?;
        c.options.optimizer()?;
        Ok(c)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.options.seed = seed;
        self
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::new(self.model.clone(), self.seed)
    }

    /// `(train, eval)` sets; both depend only on the seed and the data settings.
    pub fn datasets(&self) -> Result<(SyntheticDataset, SyntheticDataset)> {
        let train = SyntheticDataset::generate(self.data, self.seed.wrapping_mul(2).wrapping_add(1))?;
        let eval_cfg = SyntheticConfig {
            samples_per_class: self.eval_samples_per_class,
            ..self.data
        };
        let eval = SyntheticDataset::generate(eval_cfg, self.seed.wrapping_mul(2).wrapping_add(2))?;
        Ok((train, eval))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let c = TrainConfig::parse(
            "layers 4 8\nkernel 3\nconv odconv n=2 r=1/2 floor=2 flags=sf share=false spatial=softmax\n\
             classes 3\nimage 2 12 12\ntrain_samples 5\neval_samples 4\nnoise 0.1\nepochs 2\nbatch 4\n\
             lr 0.01\nmomentum 0.5\nweight_decay 0\nfreeze_attention true\nseed 9\n\
             temperature start=10 end=2 warmup=3 # annealing\n",
        )
        .unwrap();
        assert_eq!(c.model.widths, vec![4, 8]);
        assert_eq!(c.model.in_channels, 2);
        let d = c.model.dynamic.unwrap();
        assert_eq!((d.n, d.r, d.hidden_floor, d.share), (2, 0.5, 2, false));
        assert_eq!(d.flags.to_string(), "sf");
        assert_eq!(c.options.schedule().at(3), 2.0);
        assert!(c.options.freeze_attention);
        assert_eq!((c.seed, c.options.seed), (9, 9));
    }

    #[test]
    fn rejects_unknown_keys_with_line() {
        let e = TrainConfig::parse("epochs 2\nwarp 9\n").unwrap_err();
        assert!(matches!(e, Error::Spec { line: 2, .. }));
        assert!(TrainConfig::parse("conv odconv r=2\n").is_err());
    }
}

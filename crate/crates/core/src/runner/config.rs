use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::optim::AdamWConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, FusionSet};
use crate::loss::{LossWeights, LovaszReduction};
use crate::model::{ModelConfig, Preset};
use crate::ssm::SsmConfig;

/// Flat `key = value` settings. Later layers override earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blank lines and `#` comments are ignored; keys may use `-` or `_`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            map.set(key, v.trim());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.replace('-', "_"), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// `other` wins on conflicts.
    pub fn merged(&self, other: &ConfigMap) -> ConfigMap {
        let mut out = self.clone();
        out.0.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

fn parse_list<T: FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let items = v
        .split(',')
        .map(|p| parse::<T>(key, p.trim()))
        .collect::<Result<Vec<T>>>()?;
    let got = items.len();
    items
        .try_into()
        .map_err(|_| Error::Config(format!("`{key}`: expected {N} comma-separated values, got {got}")))
}

fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn set_ssm(ssm: &mut SsmConfig, field: &str, key: &str, v: &str) -> Result<bool> {
    match field {
        "d_state" => ssm.d_state = parse(key, v)?,
        "expand" => ssm.expand = parse(key, v)?,
        "dt_rank" => ssm.dt_rank = if v == "auto" { None } else { Some(parse(key, v)?) },
        "dt_min" => ssm.dt_min = parse(key, v)?,
        "dt_max" => ssm.dt_max = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn write_ssm(out: &mut String, prefix: &str, ssm: &SsmConfig) {
    let rank = ssm.dt_rank.map_or("auto".to_string(), |r| r.to_string());
    let _ = writeln!(out, "{prefix}.d_state = {}", ssm.d_state);
    let _ = writeln!(out, "{prefix}.expand = {}", ssm.expand);
    let _ = writeln!(out, "{prefix}.dt_rank = {rank}");
    let _ = writeln!(out, "{prefix}.dt_min = {:?}", ssm.dt_min);
    let _ = writeln!(out, "{prefix}.dt_max = {:?}", ssm.dt_max);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub batch_size: usize,
    pub iterations: usize,
    /// Held-out evaluation period in iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Side of the random training crop.
    pub crop: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub lovasz: LovaszReduction,
    /// Random horizontal and vertical flips of training crops.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Tiny)
    }
}

impl TrainConfig {
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            preset,
            model: ModelConfig::preset(preset),
            optim: AdamWConfig::default(),
            batch_size: 4,
            iterations: 2000,
            eval_every: 200,
            crop: 256,
            seed: 0,
            loss_weights: LossWeights::default(),
            lovasz: LovaszReduction::PerImage,
            augment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.model.validate()?;
        self.loss_weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.crop == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        Ok(())
    }

    /// Builds a config from layered settings: `preset` is applied first,
    /// then every other key, then the `no_*` ablation switches.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let preset = match map.get("preset") {
            Some(p) => p.parse()?,
            None => Preset::Tiny,
        };
        let mut cfg = Self::for_preset(preset);
        let mut switches = Vec::new();
        for (key, v) in map.iter() {
            match key {
                "preset" => {}
                "lr" => cfg.optim.lr = parse(key, v)?,
                "weight_decay" | "wd" => cfg.optim.weight_decay = parse(key, v)?,
                "beta1" => cfg.optim.beta1 = parse(key, v)?,
                "beta2" => cfg.optim.beta2 = parse(key, v)?,
                "eps" => cfg.optim.eps = parse(key, v)?,
                "batch_size" | "batch" => cfg.batch_size = parse(key, v)?,
                "iterations" | "iters" => cfg.iterations = parse(key, v)?,
                "eval_every" => cfg.eval_every = parse(key, v)?,
                "crop" => cfg.crop = parse(key, v)?,
                "seed" => cfg.seed = parse(key, v)?,
                "augment" => cfg.augment = parse_bool(key, v)?,
                "loss_weights" => {
                    let [ce, lovasz, dice] = parse_list::<f64, 3>(key, v)?;
                    cfg.loss_weights = LossWeights { ce, lovasz, dice };
                }
                "lovasz" => {
                    cfg.lovasz = match v {
                        "per_image" => LovaszReduction::PerImage,
                        "batch" => LovaszReduction::Batch,
                        _ => return Err(Error::Config(format!("`lovasz`: expected per_image|batch, got `{v}`"))),
                    }
                }
                "encoder.channels" => cfg.model.encoder.channels = parse_list(key, v)?,
                "encoder.depths" => cfg.model.encoder.depths = parse_list(key, v)?,
                "decoder.width" => cfg.model.decoder.width = parse(key, v)?,
                "decoder.fusions" => cfg.model.decoder.fusions = v.parse()?,
                "decoder.ecr" => cfg.model.decoder.ecr = parse_bool(key, v)?,
                "decoder.cbam_reduction" => cfg.model.decoder.cbam_reduction = parse(key, v)?,
                "decoder.cbam_kernel" => cfg.model.decoder.cbam_kernel = parse(key, v)?,
                "no_diff" | "no_chn" | "no_dice" | "no_ecr" => {
                    if parse_bool(key, v)? {
                        switches.push(key);
                    }
                }
                _ => {
                    let handled = if let Some(f) = key.strip_prefix("encoder.ssm.") {
                        set_ssm(&mut cfg.model.encoder.ssm, f, key, v)?
                    } else if let Some(f) = key.strip_prefix("decoder.ssm.") {
                        set_ssm(&mut cfg.model.decoder.ssm, f, key, v)?
                    } else {
                        false
                    };
                    if !handled {
                        return Err(Error::Config(format!("unknown setting `{key}`")));
                    }
                }
            }
        }
        for s in switches {
            match s {
                "no_diff" => cfg.model.decoder.fusions = cfg.model.decoder.fusions.without(FusionKind::Difference)?,
                "no_chn" => cfg.model.decoder.fusions = cfg.model.decoder.fusions.without(FusionKind::ChannelCross)?,
                "no_dice" => cfg.loss_weights.dice = 0.0,
                "no_ecr" => cfg.model.decoder.ecr = false,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Complete flat rendering; `from_map(parse(to_text()))` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let o = &self.optim;
        let e = &self.model.encoder;
        let d = &self.model.decoder;
        let w = &self.loss_weights;
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "lr = {:?}", o.lr);
        let _ = writeln!(s, "weight_decay = {:?}", o.weight_decay);
        let _ = writeln!(s, "beta1 = {:?}", o.beta1);
        let _ = writeln!(s, "beta2 = {:?}", o.beta2);
        let _ = writeln!(s, "eps = {:?}", o.eps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "crop = {}", self.crop);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "loss_weights = {:?},{:?},{:?}", w.ce, w.lovasz, w.dice);
        let _ = writeln!(
            s,
            "lovasz = {}",
            match self.lovasz {
                LovaszReduction::PerImage => "per_image",
                LovaszReduction::Batch => "batch",
            }
        );
        let _ = writeln!(s, "encoder.channels = {}", join_list(&e.channels));
        let _ = writeln!(s, "encoder.depths = {}", join_list(&e.depths));
        write_ssm(&mut s, "encoder.ssm", &e.ssm);
        let _ = writeln!(s, "decoder.width = {}", d.width);
        let _ = writeln!(s, "decoder.fusions = {}", d.fusions);
        let _ = writeln!(s, "decoder.ecr = {}", d.ecr);
        let _ = writeln!(s, "decoder.cbam_reduction = {}", d.cbam_reduction);
        let _ = writeln!(s, "decoder.cbam_kernel = {}", d.cbam_kernel);
        write_ssm(&mut s, "decoder.ssm", &d.ssm);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }
}

/// Fusion set with the given mechanisms removed (for building ablation rows).
pub fn fusions_without(kinds: &[FusionKind]) -> Result<FusionSet> {
    kinds.iter().try_fold(FusionSet::all(), |set, &k| set.without(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut cfg = TrainConfig::for_preset(Preset::Small);
        cfg.optim.lr = 3.3e-4;
        cfg.seed = 77;
        cfg.model.decoder.ssm.dt_rank = Some(3);
        cfg.model.decoder.fusions = fusions_without(&[FusionKind::Cross]).unwrap();
        cfg.loss_weights.dice = 0.1;
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn layering_and_switches() {
        let file = ConfigMap::parse("# desk run\nlr = 0.001\nbatch = 2\nno-dice = true\n").unwrap();
        let mut cli = ConfigMap::new();
        cli.set("lr", "0.005");
        cli.set("no-diff", "true");
        let cfg = TrainConfig::from_map(&file.merged(&cli)).unwrap();
        assert_eq!(cfg.optim.lr, 0.005);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.loss_weights.dice, 0.0);
        assert!(!cfg.model.decoder.fusions.contains(FusionKind::Difference));
        assert_eq!(cfg.model.decoder.fusions.len(), 4);
    }

    #[test]
    fn preset_is_applied_before_overrides() {
        let map = ConfigMap::parse("decoder.width = 48\npreset = small").unwrap();
        let cfg = TrainConfig::from_map(&map).unwrap();
        assert_eq!(cfg.model.decoder.width, 48);
        assert_eq!(cfg.model.encoder.channels, [32, 64, 128, 256]);
    }

    #[test]
    fn bad_settings_are_config_errors() {
        for text in [
            "lr = -1",
            "bogus = 3",
            "batch = 0",
            "loss_weights = 1,2",
            "decoder.ecr = maybe",
            "novalue",
        ] {
            let r = ConfigMap::parse(text).and_then(|m| TrainConfig::from_map(&m));
            assert!(matches!(r, Err(Error::Config(_))), "{text}: {r:?}");
        }
    }
}

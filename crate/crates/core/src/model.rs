use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::decoder::{Decoder, DecoderConfig};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::ssm::SsmConfig;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Small,
    Base,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Base => "base",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            "base" => Ok(Preset::Base),
            _ => Err(Error::Config(format!("unknown preset `{s}` (tiny|small|base)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => {
                let ssm = SsmConfig {
                    d_state: 4,
                    ..Default::default()
                };
                Self {
                    encoder: EncoderConfig {
                        ssm,
                        ..EncoderConfig::tiny()
                    },
                    decoder: DecoderConfig {
                        width: 32,
                        cbam_reduction: 4,
                        cbam_kernel: 3,
                        ssm,
                        ..Default::default()
                    },
                }
            }
            Preset::Small => Self {
                encoder: EncoderConfig::small(),
                decoder: DecoderConfig {
                    width: 64,
                    cbam_reduction: 8,
                    ..Default::default()
                },
            },
            Preset::Base => Self {
                encoder: EncoderConfig::base(),
                decoder: DecoderConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }
}

/// Siamese encoder and change decoder producing `(N, 2, H, W)` logits.
#[derive(Clone, Debug)]
pub struct ChangeDetector {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl ChangeDetector {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::init(&config.encoder, rng)?;
        let decoder = Decoder::init(config.encoder.channels, &config.decoder, rng)?;
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn forward(&self, pre: &Tensor, post: &Tensor) -> Result<Tensor> {
        let (p1, p2) = self.encoder.encode_pair(pre, post)?;
        self.decoder.decode(&p1, &p2)
    }
}

impl Module for ChangeDetector {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }
}

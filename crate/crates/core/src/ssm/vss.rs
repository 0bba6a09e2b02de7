use rand::Rng;

use super::scan::{cross_scan_2d, ScanParams, SsmConfig};
use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::nn::{Conv2dParams, ConvSpec, LayerNorm};
use crate::tensor::Tensor;

/// Visual state-space block:
///
/// ```text
/// x + out(silu(gate(LN x)) * cross_scan(silu(dwconv(expand(LN x)))))
/// ```
#[derive(Clone, Debug)]
pub struct VssBlock {
    pub norm: LayerNorm,
    pub expand: Conv2dParams,
    pub dwconv: Conv2dParams,
    pub gate: Conv2dParams,
    pub scans: Vec<ScanParams>,
    pub out: Conv2dParams,
}

impl VssBlock {
    pub fn init<R: Rng + ?Sized>(channels: usize, cfg: &SsmConfig, rng: &mut R) -> Result<Self> {
        if channels == 0 || cfg.expand == 0 || cfg.d_state == 0 {
            return Err(Error::Config(format!(
                "vss block needs positive channels/expand/state, got {channels}/{}/{}",
                cfg.expand, cfg.d_state
            )));
        }
        let inner = channels * cfg.expand;
        let dw_spec = ConvSpec {
            stride: 1,
            padding: 1,
            groups: inner,
        };
        Ok(Self {
            norm: LayerNorm::new(channels),
            expand: Conv2dParams::pointwise(channels, inner, false, rng)?,
            dwconv: Conv2dParams::init(inner, inner, 3, dw_spec, true, rng)?,
            gate: Conv2dParams::pointwise(channels, inner, false, rng)?,
            scans: (0..4).map(|_| ScanParams::init(inner, cfg, rng)).collect(),
            out: Conv2dParams::pointwise(inner, channels, false, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.expand.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::dim(format!(
                "vss block built for {} channels, got {c}",
                self.channels()
            )));
        }
        let h = self.norm.forward(x)?;
        let u = self.dwconv.forward(&self.expand.forward(&h)?)?.silu()?;
        let y = cross_scan_2d(&u, &self.scans)?;
        let g = self.gate.forward(&h)?.silu()?;
        x.add(&self.out.forward(&y.mul(&g)?)?)
    }
}

impl Module for VssBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.expand.visit_params(&join(prefix, "expand"), f);
        self.dwconv.visit_params(&join(prefix, "dwconv"), f);
        self.gate.visit_params(&join(prefix, "gate"), f);
        self.scans.visit_params(&join(prefix, "scan"), f);
        self.out.visit_params(&join(prefix, "out"), f);
    }
}

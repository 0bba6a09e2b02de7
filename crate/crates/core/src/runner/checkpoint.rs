use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::AdamW;
use crate::error::{Error, Result};
use crate::model::ChangeDetector;
use crate::module::Module;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MCD1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Model weights, optimizer moments and training position. Values are
/// stored as little-endian `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub best_f1: Option<f64>,
    pub params: Vec<ParamBlob>,
    pub optimizer: Option<OptimizerState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        model: &ChangeDetector,
        optimizer: Option<&AdamW>,
        iteration: u64,
        best_f1: Option<f64>,
    ) -> Self {
        let params = model
            .named_params()
            .into_iter()
            .map(|(name, t, _)| ParamBlob {
                name,
                dims: t.dims().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        Self {
            config: *config,
            iteration,
            best_f1,
            params,
            optimizer: optimizer.map(|o| OptimizerState {
                step: o.step,
                m: o.m.clone(),
                v: o.v.clone(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.push(u8::from(self.best_f1.is_some()));
        out.extend_from_slice(&self.best_f1.unwrap_or(0.0).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            put_str(&mut out, &p.name);
            out.extend_from_slice(&(p.dims.len() as u32).to_le_bytes());
            for &d in &p.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, &p.data);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for (m, v) in o.m.iter().zip(&o.v) {
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let config =
            TrainConfig::from_text(&r.string()?).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let iteration = r.u64()?;
        let has_best = r.u8()? != 0;
        let best = f64::from_bits(r.u64()?);
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}`: extent overflow")))?;
            let data = r.f64s(n)?;
            params.push(ParamBlob { name, dims, data });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for p in &params {
                    m.push(r.f64s(p.data.len())?);
                    v.push(r.f64s(p.data.len())?);
                }
                Some(OptimizerState { step, m, v })
            }
            t => return Err(Error::Checkpoint(format!("bad optimizer tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            iteration,
            best_f1: has_best.then_some(best),
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuilds the network described by the embedded config and fills in
    /// the stored weights. Names and shapes must match exactly.
    pub fn model(&self) -> Result<ChangeDetector> {
        let mut model = ChangeDetector::init(self.config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected = model.named_params();
        if expected.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "config describes {} parameters, checkpoint holds {}",
                expected.len(),
                self.params.len()
            )));
        }
        for ((name, t, _), blob) in expected.iter().zip(&self.params) {
            if *name != blob.name || t.dims() != blob.dims.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: model has `{name}` {:?}, checkpoint has `{}` {:?}",
                    t.dims(),
                    blob.name,
                    blob.dims
                )));
            }
        }
        let mut blobs = self.params.iter();
        let mut failure = None;
        model.visit_params("", &mut |_, t, _| {
            let blob = blobs.next().expect("counts checked");
            match Tensor::param(blob.data.clone(), blob.dims.clone()) {
                Ok(p) => *t = p,
                Err(e) => failure = Some(e),
            }
        });
        failure.map_or(Ok(model), Err)
    }

    /// Optimizer positioned where training stopped (fresh if none stored).
    pub fn optimizer(&self, model: &ChangeDetector) -> Result<AdamW> {
        let mut opt = AdamW::new(self.config.optim, model);
        if let Some(state) = &self.optimizer {
            if state.m.len() != opt.m.len() || state.m.iter().zip(&opt.m).any(|(a, b)| a.len() != b.len()) {
                return Err(Error::Checkpoint("optimizer moments do not match the model".into()));
            }
            opt.step = state.step;
            opt.m = state.m.clone();
            opt.v = state.v.clone();
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn tiny() -> (TrainConfig, ChangeDetector) {
        let cfg = TrainConfig::for_preset(Preset::Tiny);
        let model = ChangeDetector::init(cfg.model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (cfg, model)
    }

    #[test]
    fn bytes_round_trip() {
        let (cfg, model) = tiny();
        let mut opt = AdamW::new(cfg.optim, &model);
        opt.step = 3;
        opt.m[0][0] = 0.25;
        let ck = Checkpoint::capture(&cfg, &model, Some(&opt), 3, Some(0.5));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let restored = back.model().unwrap();
        for ((_, a, _), (_, b, _)) in restored.named_params().iter().zip(model.named_params().iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(back.optimizer(&restored).unwrap(), opt);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (cfg, model) = tiny();
        let bytes = Checkpoint::capture(&cfg, &model, None, 0, None).to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn config_mismatch_is_detected() {
        let (cfg, model) = tiny();
        let mut ck = Checkpoint::capture(&cfg, &model, None, 0, None);
        ck.config.model.decoder.ecr = false;
        assert!(matches!(ck.model(), Err(Error::Checkpoint(_))));
    }
}

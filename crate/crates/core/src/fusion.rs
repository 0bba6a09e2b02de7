//! Spatio-temporal fusion of two same-shaped feature maps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(op: &str, f1: &Tensor, f2: &Tensor) -> Result<()> {
    f1.dims4()?;
    if f1.shape() != f2.shape() {
        return Err(Error::dim(format!(
            "{op}: frame shapes differ: {} vs {}",
            f1.shape(),
            f2.shape()
        )));
    }
    Ok(())
}

/// All `f1` tokens then all `f2` tokens, laid out side by side along width.
pub fn fuse_sequential(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    same_shape("fuse_sequential", f1, f2)?;
    Tensor::concat(&[f1, f2], 3)
}

/// Alternating `f1`/`f2` columns.
pub fn fuse_cross(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    same_shape("fuse_cross", f1, f2)?;
    Tensor::interleave(f1, f2, 3)
}

/// `f1` channels then `f2` channels.
pub fn fuse_parallel(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    same_shape("fuse_parallel", f1, f2)?;
    Tensor::concat(&[f1, f2], 1)
}

/// Zipped channels `[f1_0, f2_0, f1_1, f2_1, ...]`.
pub fn fuse_channel_cross(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    same_shape("fuse_channel_cross", f1, f2)?;
    Tensor::interleave(f1, f2, 1)
}

/// `|f2 - f1|`.
pub fn fuse_difference(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    same_shape("fuse_difference", f1, f2)?;
    f2.sub(f1)?.abs()
}

/// Sums the two temporal halves of a width-doubled layout.
pub fn fold_back(y: &Tensor, kind: FusionKind) -> Result<Tensor> {
    let (_, _, _, w2) = y.dims4()?;
    if w2 % 2 != 0 {
        return Err(Error::dim(format!("fold_back: width {w2} is odd")));
    }
    let w = w2 / 2;
    let (a, b) = match kind {
        FusionKind::Sequential => (y.narrow(3, 0, w)?, y.narrow(3, w, w)?),
        FusionKind::Cross => y.deinterleave(3)?,
        other => {
            return Err(Error::Contract(format!(
                "fold_back applies to width-doubled layouts, not {other}"
            )))
        }
    };
    a.add(&b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionKind {
    Sequential,
    Cross,
    Parallel,
    ChannelCross,
    Difference,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Sequential,
        FusionKind::Cross,
        FusionKind::Parallel,
        FusionKind::ChannelCross,
        FusionKind::Difference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Sequential => "sequential",
            FusionKind::Cross => "cross",
            FusionKind::Parallel => "parallel",
            FusionKind::ChannelCross => "channel_cross",
            FusionKind::Difference => "difference",
        }
    }

    /// Channel multiplier of the fused map relative to one frame.
    pub fn channel_factor(self) -> usize {
        match self {
            FusionKind::Parallel | FusionKind::ChannelCross => 2,
            _ => 1,
        }
    }

    /// Whether the fused map is width-doubled and needs [`fold_back`].
    pub fn doubles_width(self) -> bool {
        matches!(self, FusionKind::Sequential | FusionKind::Cross)
    }

    pub fn apply(self, f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
        match self {
            FusionKind::Sequential => fuse_sequential(f1, f2),
            FusionKind::Cross => fuse_cross(f1, f2),
            FusionKind::Parallel => fuse_parallel(f1, f2),
            FusionKind::ChannelCross => fuse_channel_cross(f1, f2),
            FusionKind::Difference => fuse_difference(f1, f2),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mechanism `{s}`")))
    }
}

/// Non-empty set of enabled mechanisms, iterated in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FusionSet([bool; 5]);

impl FusionSet {
    pub fn all() -> Self {
        Self([true; 5])
    }

    pub fn from_kinds(kinds: &[FusionKind]) -> Result<Self> {
        let mut flags = [false; 5];
        for &k in kinds {
            flags[k as usize] = true;
        }
        Self::from_flags(flags)
    }

    pub fn from_flags(flags: [bool; 5]) -> Result<Self> {
        if !flags.iter().any(|&f| f) {
            return Err(Error::Config("at least one fusion mechanism must be enabled".into()));
        }
        Ok(Self(flags))
    }

    pub fn without(self, kind: FusionKind) -> Result<Self> {
        let mut flags = self.0;
        flags[kind as usize] = false;
        Self::from_flags(flags)
    }

    pub fn contains(self, kind: FusionKind) -> bool {
        self.0[kind as usize]
    }

    pub fn len(self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn iter(self) -> impl Iterator<Item = FusionKind> {
        FusionKind::ALL.into_iter().filter(move |&k| self.contains(k))
    }

    pub fn flags(self) -> [bool; 5] {
        self.0
    }
}

impl Default for FusionSet {
    fn default() -> Self {
        Self::all()
    }
}

impl fmt::Display for FusionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(FusionKind::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FusionSet {
    type Err = Error;

    /// Comma-separated mechanism names, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let kinds = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<FusionKind>>>()?;
        Self::from_kinds(&kinds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, shape: [usize; 4], offset: f64) -> Tensor {
        Tensor::from_vec((0..n).map(|i| i as f64 + offset).collect(), shape).unwrap()
    }

    #[test]
    fn difference_by_hand() {
        let a = Tensor::from_vec(vec![1.0, -2.0], [1, 1, 1, 2]).unwrap();
        let b = Tensor::from_vec(vec![-1.0, 1.0], [1, 1, 1, 2]).unwrap();
        assert_eq!(fuse_difference(&a, &b).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(fuse_difference(&b, &a).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn cross_alternates_columns() {
        let a = seq(2, [1, 1, 1, 2], 0.0);
        let b = seq(2, [1, 1, 1, 2], 10.0);
        assert_eq!(fuse_cross(&a, &b).unwrap().data(), &[0.0, 10.0, 1.0, 11.0]);
    }

    #[test]
    fn channel_cross_zips_channels() {
        let a = seq(2, [1, 2, 1, 1], 0.0);
        let b = seq(2, [1, 2, 1, 1], 10.0);
        assert_eq!(fuse_channel_cross(&a, &b).unwrap().data(), &[0.0, 10.0, 1.0, 11.0]);
    }

    #[test]
    fn fold_back_rejects_odd_width_and_channel_layouts() {
        let y = Tensor::zeros([1, 2, 2, 3]);
        assert!(matches!(
            fold_back(&y, FusionKind::Sequential),
            Err(Error::Dimension(_))
        ));
        assert!(fold_back(&Tensor::zeros([1, 2, 2, 4]), FusionKind::Parallel).is_err());
    }

    #[test]
    fn mismatched_frames_error() {
        let a = Tensor::zeros([1, 2, 2, 2]);
        let b = Tensor::zeros([1, 2, 2, 3]);
        for k in FusionKind::ALL {
            assert!(matches!(k.apply(&a, &b), Err(Error::Dimension(_))));
        }
    }

    #[test]
    fn fusion_set_parsing() {
        let s: FusionSet = "cross,difference".parse().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.to_string(), "cross,difference");
        assert_eq!("all".parse::<FusionSet>().unwrap(), FusionSet::all());
        assert!("bogus".parse::<FusionSet>().is_err());
        assert!(FusionSet::from_flags([false; 5]).is_err());
        let one = FusionSet::from_kinds(&[FusionKind::Parallel]).unwrap();
        assert!(one.without(FusionKind::Parallel).is_err());
    }
}

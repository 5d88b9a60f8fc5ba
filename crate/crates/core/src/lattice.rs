//! The finite d-adic interval system on `[0, 1)`.
//!
//! Level `n` holds `d^n` intervals `I_{n,k}` of measure `d^{-n}`. Intervals are
//! addressed by `(level, index)` only; the atoms are the intervals at the
//! deepest level `N`, numbered left to right.

use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Branching factor and depth of a lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeParams {
    pub d: u32,
    pub depth: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub level: u32,
    pub index: u64,
}

impl Interval {
    pub const ROOT: Interval = Interval { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Self {
        Interval { level, index }
    }
}

/// A validated d-adic lattice of finite depth. Cheap to copy, immutable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LatticeParams", into = "LatticeParams")]
pub struct Lattice {
    params: LatticeParams,
    atoms: u64,
}

impl TryFrom<LatticeParams> for Lattice {
    type Error = Error;

    fn try_from(p: LatticeParams) -> Result<Self> {
        Lattice::new(p.d, p.depth)
    }
}

impl From<Lattice> for LatticeParams {
    fn from(l: Lattice) -> Self {
        l.params
    }
}

impl Lattice {
    pub fn new(d: u32, depth: u32) -> Result<Self> {
        if d < 2 {
            return Err(Error::Lattice(format!("branching factor d = {d} must be at least 2")));
        }
        if depth < 1 {
            return Err(Error::Lattice("depth must be at least 1".into()));
        }
        let atoms = (d as u64)
            .checked_pow(depth)
            .ok_or_else(|| Error::Lattice(format!("{d}^{depth} atoms overflow 64 bits")))?;
        Ok(Lattice {
            params: LatticeParams { d, depth },
            atoms,
        })
    }

    pub fn params(&self) -> LatticeParams {
        self.params
    }

    pub fn d(&self) -> u32 {
        self.params.d
    }

    pub fn depth(&self) -> u32 {
        self.params.depth
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms as usize
    }

    /// Number of intervals at `level`, i.e. `d^level`.
    pub fn level_len(&self, level: u32) -> u64 {
        (self.d() as u64).pow(level)
    }

    /// Number of atoms inside one interval of `level`.
    pub fn atoms_per_interval(&self, level: u32) -> usize {
        (self.d() as u64).pow(self.depth() - level) as usize
    }

    pub fn levels(&self) -> impl Iterator<Item = u32> {
        0..=self.depth()
    }

    pub fn intervals(&self, level: u32) -> impl Iterator<Item = Interval> {
        let n = if level <= self.depth() { self.level_len(level) } else { 0 };
        (0..n).map(move |index| Interval { level, index })
    }

    /// Every interval, coarse levels first.
    pub fn all_intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        self.levels().flat_map(move |n| self.intervals(n))
    }

    /// Intervals carrying Haar functions: levels `0..N-1`.
    pub fn haar_intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        (0..self.depth()).flat_map(move |n| self.intervals(n))
    }

    pub fn check(&self, iv: Interval) -> Result<()> {
        if iv.level > self.depth() {
            return Err(Error::Interval {
                level: iv.level,
                index: iv.index,
                reason: "level exceeds depth",
            });
        }
        if iv.index >= self.level_len(iv.level) {
            return Err(Error::Interval {
                level: iv.level,
                index: iv.index,
                reason: "index exceeds d^level",
            });
        }
        Ok(())
    }

    pub fn children(&self, iv: Interval) -> Result<Vec<Interval>> {
        self.check(iv)?;
        if iv.level >= self.depth() {
            return Err(Error::Interval {
                level: iv.level,
                index: iv.index,
                reason: "atoms have no children",
            });
        }
        let d = self.d() as u64;
        Ok((0..d)
            .map(|j| Interval::new(iv.level + 1, iv.index * d + j))
            .collect())
    }

    pub fn parent(&self, iv: Interval) -> Result<Interval> {
        self.check(iv)?;
        if iv.level == 0 {
            return Err(Error::Interval {
                level: 0,
                index: iv.index,
                reason: "the root has no parent",
            });
        }
        Ok(Interval::new(iv.level - 1, iv.index / self.d() as u64))
    }

    /// Half-open range of atom indices covered by `iv`.
    pub fn atom_range(&self, iv: Interval) -> Result<Range<usize>> {
        self.check(iv)?;
        Ok(self.atom_range_unchecked(iv))
    }

    pub(crate) fn atom_range_unchecked(&self, iv: Interval) -> Range<usize> {
        let w = self.atoms_per_interval(iv.level);
        let start = iv.index as usize * w;
        start..start + w
    }

    /// Exact measure `d^{-level}`.
    pub fn measure_exact(&self, iv: Interval) -> Result<Ratio<u64>> {
        self.check(iv)?;
        Ok(Ratio::new(1, self.level_len(iv.level)))
    }

    pub fn measure(&self, iv: Interval) -> Result<f64> {
        self.check(iv)?;
        Ok(self.level_measure(iv.level))
    }

    pub fn level_measure(&self, level: u32) -> f64 {
        (self.d() as f64).powi(-(level as i32))
    }

    pub fn atom_measure(&self) -> f64 {
        self.level_measure(self.depth())
    }

    /// The level-`level` interval containing `atom`.
    pub fn ancestor(&self, atom: usize, level: u32) -> Interval {
        Interval::new(level, (atom / self.atoms_per_interval(level)) as u64)
    }
}

//! K-ary occupancy trees over normalized clusters.
//!
//! A tree is flattened level by level. Each occupied cell emits one symbol
//! whose bit `c` is set iff child `c` holds at least one point, with
//! `c = (ix * sy + iy) * sz + iz`. Children of a cell are enqueued in
//! ascending `c`, so the number of symbols at level `l + 1` always equals the
//! total popcount of level `l`. Reconstruction relies on nothing else.

use std::fmt;
use std::str::FromStr;

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::pointcloud::{Point, MAX_BIT_DEPTH};

pub const MIN_K: u32 = 2;
pub const MAX_K: u32 = 16;

/// Per-level split factors `(sx, sy, sz)`; the branching factor of a level is
/// their product.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitSchedule {
    levels: Vec<[u32; 3]>,
}

impl SplitSchedule {
    pub fn new(levels: Vec<[u32; 3]>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::param("schedule has no levels"));
        }
        let mut volume_bits = 0f64;
        for (i, s) in levels.iter().enumerate() {
            if s.contains(&0) {
                return Err(Error::param(format!("level {i} has a zero split factor")));
            }
            let k = s[0] as u64 * s[1] as u64 * s[2] as u64;
            if !(MIN_K as u64..=MAX_K as u64).contains(&k) {
                return Err(Error::param(format!("level {i} has K={k}, outside [{MIN_K}, {MAX_K}]")));
            }
            volume_bits += (k as f64).log2();
        }
        if volume_bits > 120.0 {
            return Err(Error::param("schedule root cell is too large"));
        }
        Ok(SplitSchedule { levels })
    }

    pub fn levels(&self) -> &[[u32; 3]] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn k(&self, level: usize) -> u32 {
        let s = self.levels[level];
        s[0] * s[1] * s[2]
    }

    pub fn max_k(&self) -> u32 {
        (0..self.depth()).map(|l| self.k(l)).max().unwrap_or(0)
    }

    /// Largest valid symbol at `level`.
    pub fn max_symbol(&self, level: usize) -> u32 {
        (1u32 << self.k(level)) - 1
    }

    /// Side length of the root cell along each axis.
    pub fn root_extent(&self) -> [u64; 3] {
        let mut e = [1u64; 3];
        for s in &self.levels {
            for a in 0..3 {
                e[a] = e[a].saturating_mul(s[a] as u64);
            }
        }
        e
    }

    /// Side lengths of a cell whose children are split at `level`'s factors,
    /// i.e. the size of each child produced at `level`.
    fn child_size(&self, level: usize) -> [u64; 3] {
        let mut e = [1u64; 3];
        for s in &self.levels[level + 1..] {
            for a in 0..3 {
                e[a] *= s[a] as u64;
            }
        }
        e
    }
}

/// Branching mode used when deriving a schedule from a cluster's depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum KMode {
    #[default]
    Octree8,
    Mixed12,
}

impl KMode {
    pub fn k(self) -> u32 {
        match self {
            KMode::Octree8 => 8,
            KMode::Mixed12 => 12,
        }
    }

    pub fn to_u8(self) -> u8 {
        match self {
            KMode::Octree8 => 0,
            KMode::Mixed12 => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(KMode::Octree8),
            1 => Some(KMode::Mixed12),
            _ => None,
        }
    }
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KMode::Octree8 => "octree8",
            KMode::Mixed12 => "mixed12",
        })
    }
}

impl FromStr for KMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "octree8" => Ok(KMode::Octree8),
            "mixed12" => Ok(KMode::Mixed12),
            other => Err(Error::param(format!("unknown k-mode `{other}`"))),
        }
    }
}

/// `octree8`: `depth` levels of (2,2,2). `mixed12`: `depth` levels of (2,2,3);
/// z is resolved on a `3^depth` grid, the excess being empty padding.
pub fn default_schedule(local_depth: u8, mode: KMode) -> SplitSchedule {
    let depth = local_depth.clamp(1, MAX_BIT_DEPTH) as usize;
    let split = match mode {
        KMode::Octree8 => [2, 2, 2],
        KMode::Mixed12 => [2, 2, 3],
    };
    SplitSchedule::new(vec![split; depth]).expect("built-in schedules are valid")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancySequence {
    pub symbols: Vec<u16>,
    pub schedule: SplitSchedule,
}

impl OccupancySequence {
    /// Symbol count of every level, derived from the popcount cascade.
    pub fn level_boundaries(&self) -> Result<Vec<usize>> {
        cascade(&self.symbols, &self.schedule)
    }
}

/// Walks the popcount cascade without building coordinates.
fn cascade(symbols: &[u16], schedule: &SplitSchedule) -> Result<Vec<usize>> {
    let mut counts = Vec::with_capacity(schedule.depth());
    let mut pos = 0usize;
    let mut expected = 1usize;
    for level in 0..schedule.depth() {
        let end = pos
            .checked_add(expected)
            .filter(|&e| e <= symbols.len())
            .ok_or_else(|| {
                Error::integrity(format!(
                    "level {level}: expected {expected} symbols, only {} remain",
                    symbols.len() - pos
                ))
            })?;
        let max = schedule.max_symbol(level);
        let mut next = 0usize;
        for &s in &symbols[pos..end] {
            if s == 0 || s as u32 > max {
                return Err(Error::integrity(format!(
                    "level {level}: symbol {s} outside [1, {max}]"
                )));
            }
            next += s.count_ones() as usize;
        }
        counts.push(expected);
        pos = end;
        expected = next;
    }
    if pos != symbols.len() {
        return Err(Error::integrity(format!(
            "{} trailing symbols after the last level",
            symbols.len() - pos
        )));
    }
    Ok(counts)
}

/// Flattens a normalized cluster into its breadth-first occupancy symbols.
pub fn build_sequence(cluster: &Cluster, schedule: &SplitSchedule) -> Result<OccupancySequence> {
    if cluster.local_points.is_empty() {
        return Err(Error::EmptyInput("cannot build a tree for an empty cluster".into()));
    }
    let root = schedule.root_extent();
    let depth = schedule.depth();
    let sizes: Vec<[u64; 3]> = (0..depth).map(|l| schedule.child_size(l)).collect();

    // Mixed-radix path key: digit `l` is the child index taken at level `l`.
    let mut keys: Vec<u128> = Vec::with_capacity(cluster.local_points.len());
    for p in &cluster.local_points {
        if (0..3).any(|a| p[a] as u64 >= root[a]) {
            return Err(Error::domain(format!("point {p:?} outside root cell {root:?}")));
        }
        let mut key = 0u128;
        for (l, s) in schedule.levels().iter().enumerate() {
            let i: [u64; 3] = std::array::from_fn(|a| (p[a] as u64 / sizes[l][a]) % s[a] as u64);
            let c = (i[0] * s[1] as u64 + i[1]) * s[2] as u64 + i[2];
            key = key * schedule.k(l) as u128 + c as u128;
        }
        keys.push(key);
    }
    keys.sort_unstable();
    keys.dedup();

    // suffix[l] = product of K over levels after l
    let mut suffix = vec![1u128; depth];
    for l in (0..depth.saturating_sub(1)).rev() {
        suffix[l] = suffix[l + 1] * schedule.k(l + 1) as u128;
    }

    let mut symbols = Vec::new();
    for l in 0..depth {
        let k = schedule.k(l) as u128;
        let parent_div = suffix[l] * k;
        let mut i = 0;
        while i < keys.len() {
            let parent = keys[i] / parent_div;
            let mut sym = 0u16;
            while i < keys.len() && keys[i] / parent_div == parent {
                let c = (keys[i] / suffix[l]) % k;
                sym |= 1 << c;
                i += 1;
            }
            symbols.push(sym);
        }
    }
    let seq = OccupancySequence {
        symbols,
        schedule: schedule.clone(),
    };
    debug_assert!(seq.level_boundaries().is_ok());
    Ok(seq)
}

/// Replays the breadth-first cascade: each symbol's set bits spawn that many
/// child cells, and the final level's set bits are the unit voxels.
pub fn reconstruct_points(seq: &OccupancySequence) -> Result<Vec<Point>> {
    let schedule = &seq.schedule;
    let symbols = &seq.symbols;
    let mut cells: Vec<[u64; 3]> = vec![[0, 0, 0]];
    let mut pos = 0usize;
    for level in 0..schedule.depth() {
        let s = schedule.levels()[level];
        let size = schedule.child_size(level);
        let max = schedule.max_symbol(level);
        if symbols.len() - pos < cells.len() {
            return Err(Error::integrity(format!(
                "level {level}: expected {} symbols, only {} remain",
                cells.len(),
                symbols.len() - pos
            )));
        }
        let mut next = Vec::new();
        for origin in &cells {
            let sym = symbols[pos];
            pos += 1;
            if sym == 0 || sym as u32 > max {
                return Err(Error::integrity(format!(
                    "level {level}: symbol {sym} outside [1, {max}]"
                )));
            }
            let mut bits = sym;
            while bits != 0 {
                let c = bits.trailing_zeros();
                bits &= bits - 1;
                let iz = c % s[2];
                let iy = (c / s[2]) % s[1];
                let ix = c / (s[2] * s[1]);
                next.push([
                    origin[0] + ix as u64 * size[0],
                    origin[1] + iy as u64 * size[1],
                    origin[2] + iz as u64 * size[2],
                ]);
            }
        }
        cells = next;
    }
    if pos != symbols.len() {
        return Err(Error::integrity(format!(
            "{} trailing symbols after the last level",
            symbols.len() - pos
        )));
    }
    let mut out = Vec::with_capacity(cells.len());
    for c in cells {
        if c.iter().any(|&v| v > u32::MAX as u64) {
            return Err(Error::integrity("reconstructed coordinate overflows u32"));
        }
        out.push([c[0] as u32, c[1] as u32, c[2] as u32]);
    }
    out.sort_unstable();
    Ok(out)
}

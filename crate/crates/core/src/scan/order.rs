use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the eight 2D-to-1D flattening orders.
///
/// `V1` row-major, `V2` column-major, `V3`/`V4` their reverses; `S1` rows
/// alternating left-to-right and right-to-left, `S2` columns alternating
/// top-to-bottom and bottom-to-top, `S3`/`S4` their reverses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    V1,
    V2,
    V3,
    V4,
    S1,
    S2,
    S3,
    S4,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::V1,
        Direction::V2,
        Direction::V3,
        Direction::V4,
        Direction::S1,
        Direction::S2,
        Direction::S3,
        Direction::S4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::V1 => "v1",
            Direction::V2 => "v2",
            Direction::V3 => "v3",
            Direction::V4 => "v4",
            Direction::S1 => "s1",
            Direction::S2 => "s2",
            Direction::S3 => "s3",
            Direction::S4 => "s4",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scan direction {s:?}")))
    }
}

/// Which family of four directions a VSS branch scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionSet {
    Conventional,
    Serpentine,
}

impl DirectionSet {
    pub fn directions(self) -> [Direction; 4] {
        match self {
            DirectionSet::Conventional => [Direction::V1, Direction::V2, Direction::V3, Direction::V4],
            DirectionSet::Serpentine => [Direction::S1, Direction::S2, Direction::S3, Direction::S4],
        }
    }
}

/// Bijective map between sequence positions and row-major grid indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    pub direction: Direction,
    pub h: usize,
    pub w: usize,
    /// Sequence position `t` visits grid index `forward_index[t]`.
    pub forward_index: Arc<[usize]>,
    pub inverse_index: Arc<[usize]>,
}

pub fn build_scan_order(h: usize, w: usize, direction: Direction) -> Result<ScanOrder> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("scan grid must be non-empty, got {h}x{w}")));
    }
    let row_major = || (0..h).flat_map(move |r| (0..w).map(move |c| r * w + c));
    let col_major = || (0..w).flat_map(move |c| (0..h).map(move |r| r * w + c));
    let snake_rows = || {
        (0..h).flat_map(move |r| (0..w).map(move |c| r * w + if r % 2 == 0 { c } else { w - 1 - c }))
    };
    let snake_cols = || {
        (0..w).flat_map(move |c| (0..h).map(move |r| (if c % 2 == 0 { r } else { h - 1 - r }) * w + c))
    };
    let forward: Vec<usize> = match direction {
        Direction::V1 => row_major().collect(),
        Direction::V2 => col_major().collect(),
        Direction::V3 => row_major().collect::<Vec<_>>().into_iter().rev().collect(),
        Direction::V4 => col_major().collect::<Vec<_>>().into_iter().rev().collect(),
        Direction::S1 => snake_rows().collect(),
        Direction::S2 => snake_cols().collect(),
        Direction::S3 => snake_rows().collect::<Vec<_>>().into_iter().rev().collect(),
        Direction::S4 => snake_cols().collect::<Vec<_>>().into_iter().rev().collect(),
    };
    let mut inverse = vec![0; forward.len()];
    for (t, &g) in forward.iter().enumerate() {
        inverse[g] = t;
    }
    Ok(ScanOrder { direction, h, w, forward_index: forward.into(), inverse_index: inverse.into() })
}

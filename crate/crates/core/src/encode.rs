//! Observation encoders: the compact per-lane distance vector used by the
//! tabular agent and the flattened occupancy grid used by the value networks.

use crate::env::{EnvConfig, EnvState, OccupancyGrid};
use crate::error::{Error, Result};

/// Ego lane plus, per lane, the number of rows between the ego row and the
/// nearest car ahead. A car one row ahead (about to enter the ego row) is at
/// distance 0; a lane with no visible car reads `rows`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TabularState {
    pub ego_lane_id: u16,
    pub distances: Vec<u16>,
}

impl TabularState {
    /// `[ego_lane_id, x_0, .., x_n]`
    pub fn to_vec(&self) -> Vec<u16> {
        std::iter::once(self.ego_lane_id)
            .chain(self.distances.iter().copied())
            .collect()
    }

    pub fn from_slice(values: &[u16]) -> Option<Self> {
        let (&lane, rest) = values.split_first()?;
        if rest.is_empty() {
            return None;
        }
        Some(Self {
            ego_lane_id: lane,
            distances: rest.to_vec(),
        })
    }
}

pub fn encode_tabular(state: &EnvState) -> TabularState {
    let grid = &state.grid;
    let rows = grid.rows();
    // Cars already in the ego row are leaving and cannot hit the ego.
    let distances = (0..grid.lanes())
        .map(|lane| {
            (0..rows - 1)
                .rev()
                .find(|&row| grid.get(row, lane))
                .map_or(rows, |row| rows - 2 - row) as u16
        })
        .collect();
    TabularState {
        ego_lane_id: state.ego_lane as u16,
        distances,
    }
}

/// Width of the big-endian lane-ID code, `ceil(log2(lanes))`.
pub fn lane_bits(lanes: usize) -> usize {
    if lanes <= 1 {
        0
    } else {
        (usize::BITS - (lanes - 1).leading_zeros()) as usize
    }
}

pub fn dqn_input_len(config: &EnvConfig) -> usize {
    config.rows * config.lanes + lane_bits(config.lanes)
}

/// Row-major grid cells followed by the ego lane in big-endian binary.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnState {
    pub values: Vec<f64>,
}

pub fn encode_dqn(state: &EnvState) -> DqnState {
    let grid = &state.grid;
    let bits = lane_bits(grid.lanes());
    let mut values = Vec::with_capacity(grid.cells().len() + bits);
    values.extend(grid.cells().iter().map(|&c| f64::from(c)));
    values.extend((0..bits).rev().map(|b| ((state.ego_lane >> b) & 1) as f64));
    DqnState { values }
}

/// Inverse of [`encode_dqn`]: recovers the grid and ego lane.
pub fn decode_dqn(values: &[f64], rows: usize, lanes: usize) -> Result<(OccupancyGrid, usize)> {
    let bits = lane_bits(lanes);
    if values.len() != rows * lanes + bits {
        return Err(Error::Shape(format!(
            "observation has {} entries, expected {}",
            values.len(),
            rows * lanes + bits
        )));
    }
    let mut grid = OccupancyGrid::new(rows, lanes);
    for (i, &v) in values[..rows * lanes].iter().enumerate() {
        grid.set(i / lanes, i % lanes, v != 0.0);
    }
    let lane = values[rows * lanes..]
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | usize::from(b != 0.0));
    Ok((grid, lane))
}

//! The DeepCars highway gridworld.
//!
//! Traffic rows spawn at the top of the grid (row 0) and descend one row per
//! step toward the ego vehicle, which sits in the bottom row and may shift one
//! lane left or right per step. Surviving a step earns +1; a car entering the
//! ego cell ends the episode with -1.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub lanes: usize,
    /// Visible rows, the last of which is the ego row.
    pub rows: usize,
    /// Steps between spawned traffic rows.
    pub spawn_interval: usize,
    /// Per-lane occupancy probability of a spawned row, before repair.
    pub occupancy_prob: f64,
    pub max_episode_steps: u64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            lanes: 5,
            rows: 8,
            spawn_interval: 3,
            occupancy_prob: 0.4,
            max_episode_steps: 200,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes < 2 {
            return Err(Error::Config(format!(
                "lanes must be >= 2, got {}",
                self.lanes
            )));
        }
        if self.rows < 2 {
            return Err(Error::Config(format!(
                "rows must be >= 2, got {}",
                self.rows
            )));
        }
        if self.spawn_interval < 1 {
            return Err(Error::Config("spawn_interval must be >= 1, got 0".into()));
        }
        if !(0.0..1.0).contains(&self.occupancy_prob) {
            return Err(Error::Config(format!(
                "occupancy_prob must lie in [0, 1), got {}",
                self.occupancy_prob
            )));
        }
        if self.max_episode_steps < 1 {
            return Err(Error::Config(
                "max_episode_steps must be >= 1, got 0".into(),
            ));
        }
        Ok(())
    }

    /// Row index of the ego vehicle.
    pub fn ego_row(&self) -> usize {
        self.rows - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Left = 0,
    Stay = 1,
    Right = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Stay, Action::Right];
    pub const COUNT: usize = 3;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Action> {
        Action::ALL.get(code).copied()
    }

    /// Lane reached from `lane` under this action, clamped to the road.
    pub fn apply(self, lane: usize, lanes: usize) -> usize {
        match self {
            Action::Left => lane.saturating_sub(1),
            Action::Stay => lane,
            Action::Right => (lane + 1).min(lanes - 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Left => "left",
            Action::Stay => "stay",
            Action::Right => "right",
        };
        f.write_str(s)
    }
}

/// Binary (row, lane) traffic occupancy. Row 0 is the farthest visible row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyGrid {
    rows: usize,
    lanes: usize,
    cells: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(rows: usize, lanes: usize) -> Self {
        Self {
            rows,
            lanes,
            cells: vec![0; rows * lanes],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn get(&self, row: usize, lane: usize) -> bool {
        assert!(
            row < self.rows && lane < self.lanes,
            "cell ({row}, {lane}) out of range"
        );
        self.cells[row * self.lanes + lane] != 0
    }

    pub fn set(&mut self, row: usize, lane: usize, occupied: bool) {
        assert!(
            row < self.rows && lane < self.lanes,
            "cell ({row}, {lane}) out of range"
        );
        self.cells[row * self.lanes + lane] = u8::from(occupied);
    }

    /// Row-major cell values, each 0 or 1.
    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn car_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.cells[row * self.lanes..(row + 1) * self.lanes]
    }

    /// Shifts every row one step toward the ego row and clears row 0.
    /// Returns the row that fell off the bottom.
    fn advance(&mut self) -> Vec<u8> {
        let n = self.lanes;
        let last = self.cells[(self.rows - 1) * n..].to_vec();
        self.cells.copy_within(0..(self.rows - 1) * n, n);
        self.cells[..n].fill(0);
        last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    /// Traffic only; the ego vehicle is tracked by `ego_lane`.
    pub grid: OccupancyGrid,
    pub ego_lane: usize,
    pub step_count: u64,
    pub passed_count: u64,
    pub collided_count: u64,
    pub spawned_count: u64,
}

impl EnvState {
    pub fn empty(config: &EnvConfig) -> Self {
        Self {
            grid: OccupancyGrid::new(config.rows, config.lanes),
            ego_lane: config.lanes / 2,
            step_count: 0,
            passed_count: 0,
            collided_count: 0,
            spawned_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    /// True when the episode ended on a collision rather than the step cap.
    pub collided: bool,
    pub cars_passed_this_step: u64,
}

impl StepOutcome {
    pub fn timed_out(&self) -> bool {
        self.terminal && !self.collided
    }
}

/// Samples one traffic row (`true` = occupied) and repairs it so that every
/// lane in `previous_free` has a free lane within `spawn_interval` of it.
///
/// Between two spawned rows the ego gets exactly `spawn_interval` lateral
/// moves, so whichever free lane of the previous row it survived in, the new
/// row leaves it a reachable gap.
pub fn spawn_row<R: Rng + ?Sized>(
    rng: &mut R,
    config: &EnvConfig,
    previous_free: &[usize],
) -> Vec<bool> {
    let reach = config.spawn_interval;
    // One draw per lane regardless of outcome keeps the stream aligned.
    let mut row: Vec<bool> = (0..config.lanes)
        .map(|_| rng.random::<f64>() < config.occupancy_prob)
        .collect();

    for &p in previous_free {
        let covered = (0..config.lanes).any(|l| !row[l] && l.abs_diff(p) <= reach);
        if covered {
            continue;
        }
        // min_by_key keeps the first minimum, i.e. the lower lane on ties.
        if let Some(nearest) = (0..config.lanes)
            .filter(|&l| row[l])
            .min_by_key(|&l| l.abs_diff(p))
        {
            row[nearest] = false;
        }
    }
    if row.iter().all(|&c| c) {
        row[config.lanes / 2] = false;
    }
    row
}

/// A running DeepCars environment instance.
#[derive(Debug, Clone)]
pub struct DeepCars {
    config: EnvConfig,
    state: EnvState,
    rng: ChaCha8Rng,
    last_spawn_free: Vec<usize>,
    done: bool,
}

impl DeepCars {
    /// Builds an environment and resets it with `config.seed`.
    pub fn new(config: EnvConfig) -> Result<Self> {
        let seed = config.seed;
        Self::reset_with(config, seed)
    }

    pub fn reset_with(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let state = EnvState::empty(&config);
        Ok(Self {
            last_spawn_free: (0..config.lanes).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            config,
            done: false,
        })
    }

    /// Starts from an arbitrary state. The spawner treats the free lanes of
    /// the nearest-to-spawn traffic row (or all lanes, if none) as the
    /// previous spawn.
    pub fn from_state(config: EnvConfig, state: EnvState, seed: u64) -> Result<Self> {
        config.validate()?;
        if state.grid.rows() != config.rows || state.grid.lanes() != config.lanes {
            return Err(Error::Shape(format!(
                "grid is {}x{}, config wants {}x{}",
                state.grid.rows(),
                state.grid.lanes(),
                config.rows,
                config.lanes
            )));
        }
        if state.ego_lane >= config.lanes {
            return Err(Error::Config(format!(
                "ego_lane {} outside [0, {})",
                state.ego_lane, config.lanes
            )));
        }
        let last_spawn_free = (0..config.rows)
            .find(|&r| state.grid.row(r).iter().any(|&c| c != 0))
            .map(|r| {
                (0..config.lanes)
                    .filter(|&l| !state.grid.get(r, l))
                    .collect()
            })
            .unwrap_or_else(|| (0..config.lanes).collect());
        let done = state.grid.get(config.ego_row(), state.ego_lane);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            config,
            last_spawn_free,
            done,
        })
    }

    /// Resets to an empty road with the ego in the middle lane.
    pub fn reset(&mut self, seed: u64) -> &EnvState {
        self.state = EnvState::empty(&self.config);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.last_spawn_free = (0..self.config.lanes).collect();
        self.done = false;
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage(
                "step called on a terminal state; reset the environment first".into(),
            ));
        }
        let cfg = &self.config;
        let ego_row = cfg.ego_row();
        let st = &mut self.state;
        st.step_count += 1;
        st.ego_lane = action.apply(st.ego_lane, cfg.lanes);

        // Cars in the ego row leave the grid. The ego cell is empty in any
        // non-terminal state, so each of them is a pass.
        let leaving = st.grid.advance();
        let passed = leaving.iter().filter(|&&c| c != 0).count() as u64;
        st.passed_count += passed;

        let collided = st.grid.get(ego_row, st.ego_lane);
        if collided {
            st.collided_count += 1;
        }

        if st.step_count.is_multiple_of(cfg.spawn_interval as u64) {
            let row = spawn_row(&mut self.rng, cfg, &self.last_spawn_free);
            for (lane, &occupied) in row.iter().enumerate() {
                st.grid.set(0, lane, occupied);
            }
            st.spawned_count += row.iter().filter(|&&c| c).count() as u64;
            self.last_spawn_free = (0..cfg.lanes).filter(|&l| !row[l]).collect();
        }

        let timed_out = st.step_count >= cfg.max_episode_steps;
        let terminal = collided || timed_out;
        self.done = terminal;
        Ok(StepOutcome {
            next_state: st.clone(),
            reward: if collided { -1.0 } else { 1.0 },
            terminal,
            collided,
            cars_passed_this_step: passed,
        })
    }
}

/// One line per row: `.` empty, `#` car, `E` ego, `X` ego cell hit by a car.
pub fn render_ascii(state: &EnvState) -> String {
    let grid = &state.grid;
    let ego_row = grid.rows() - 1;
    let mut out = String::with_capacity(grid.rows() * (grid.lanes() + 1));
    for row in 0..grid.rows() {
        for lane in 0..grid.lanes() {
            let car = grid.get(row, lane);
            let ego = row == ego_row && lane == state.ego_lane;
            out.push(match (car, ego) {
                (true, true) => 'X',
                (false, true) => 'E',
                (true, false) => '#',
                (false, false) => '.',
            });
        }
        out.push('\n');
    }
    out
}

/// Recovers the grid and ego lane from [`render_ascii`] output. Counters are
/// not part of the picture and come back as zero.
pub fn parse_ascii(text: &str) -> Result<EnvState> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    if lines.len() < 2 {
        return Err(Error::parse(
            "<ascii>",
            lines.len(),
            "need at least two rows",
        ));
    }
    let lanes = lines[0].chars().count();
    let mut grid = OccupancyGrid::new(lines.len(), lanes);
    let mut ego = None;
    for (row, line) in lines.iter().enumerate() {
        if line.chars().count() != lanes {
            return Err(Error::parse("<ascii>", row + 1, "ragged row width"));
        }
        for (lane, ch) in line.chars().enumerate() {
            match ch {
                '.' => {}
                '#' => grid.set(row, lane, true),
                'E' | 'X' => {
                    if row != lines.len() - 1 || ego.is_some() {
                        return Err(Error::parse("<ascii>", row + 1, "misplaced ego marker"));
                    }
                    ego = Some(lane);
                    grid.set(row, lane, ch == 'X');
                }
                other => {
                    return Err(Error::parse(
                        "<ascii>",
                        row + 1,
                        format!("unexpected {other:?}"),
                    ))
                }
            }
        }
    }
    let ego_lane = ego.ok_or_else(|| Error::parse("<ascii>", lines.len(), "missing ego marker"))?;
    Ok(EnvState {
        grid,
        ego_lane,
        step_count: 0,
        passed_count: 0,
        collided_count: 0,
        spawned_count: 0,
    })
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "0" => Ok(Action::Left),
            "stay" | "1" => Ok(Action::Stay),
            "right" | "2" => Ok(Action::Right),
            _ => Err(Error::Usage(format!("unknown action {s:?}"))),
        }
    }
}

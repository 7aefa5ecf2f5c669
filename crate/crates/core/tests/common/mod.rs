#![allow(dead_code)]

use deepcars::{Action, EnvConfig, EnvState};
use rand::Rng;

/// Action that keeps the ego alive through every row currently on the grid,
/// or `None` if no such plan exists.
///
/// After `k` steps the ego row holds what row `ego_row - k` holds now, so a
/// plan is a lane path through the visible rows from the bottom up.
pub fn lookahead_action(config: &EnvConfig, state: &EnvState) -> Option<Action> {
    let ego_row = config.ego_row();
    let lanes = config.lanes;
    // alive[k][lane]: ego can stand in `lane` after k steps and still finish.
    let mut alive = vec![vec![false; lanes]; ego_row + 1];
    for (lane, cell) in alive[ego_row].iter_mut().enumerate() {
        *cell = !state.grid.get(0, lane);
    }
    for k in (1..ego_row).rev() {
        for lane in 0..lanes {
            alive[k][lane] = !state.grid.get(ego_row - k, lane)
                && Action::ALL
                    .iter()
                    .any(|a| alive[k + 1][a.apply(lane, lanes)]);
        }
    }
    [Action::Stay, Action::Left, Action::Right]
        .into_iter()
        .find(|a| alive[1][a.apply(state.ego_lane, lanes)])
}

pub fn random_state<R: Rng>(rng: &mut R, rows: usize, lanes: usize, density: f64) -> EnvState {
    let config = EnvConfig {
        lanes,
        rows,
        ..EnvConfig::default()
    };
    let mut s = EnvState::empty(&config);
    for r in 0..rows {
        for l in 0..lanes {
            s.grid.set(r, l, rng.random::<f64>() < density);
        }
    }
    s.ego_lane = rng.random_range(0..lanes);
    s.grid.set(rows - 1, s.ego_lane, false);
    s
}

pub fn state_with(config: &EnvConfig, cars: &[(usize, usize)], ego_lane: usize) -> EnvState {
    let mut s = EnvState::empty(config);
    for &(r, l) in cars {
        s.grid.set(r, l, true);
    }
    s.ego_lane = ego_lane;
    s
}

/// Sample mean and the half-width of a 3-sigma band for a Bernoulli count.
pub fn three_sigma(n: f64, p: f64) -> f64 {
    3.0 * (n * p * (1.0 - p)).sqrt()
}

/// Unevaluated sum `hi + lo` carrying about 106 bits of precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd {
            hi: s,
            lo: (a - (s - bb)) + (b - bb),
        }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        let t = Dd::two_sum(self.lo, o.lo);
        let v = Dd::two_sum(s.hi, s.lo + t.hi);
        Dd::two_sum(v.hi, v.lo + t.lo)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p);
        Dd::two_sum(p, e + self.lo * b)
    }

    pub fn relu(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            Dd::ZERO
        } else {
            self
        }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Double-double forward pass of a ReLU MLP given as row-major
/// `weights[l]` (out x in) and `biases[l]`, starting at layer `from` with
/// activations `a`. Returns the activations after every later layer.
pub fn dd_forward_from(
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
    from: usize,
    a: &[Dd],
) -> Vec<Vec<Dd>> {
    let mut out = Vec::new();
    let mut h = a.to_vec();
    let last = weights.len() - 1;
    for l in from..weights.len() {
        let n_in = h.len();
        let next: Vec<Dd> = biases[l]
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                let row = &weights[l][j * n_in..(j + 1) * n_in];
                let z = row
                    .iter()
                    .zip(&h)
                    .fold(Dd::from(b), |acc, (&w, &x)| acc.add(x.mul_f64(w)));
                if l == last {
                    z
                } else {
                    z.relu()
                }
            })
            .collect();
        out.push(next.clone());
        h = next;
    }
    out
}

//! Scalar bookkeeping of the stabilized update: deviation average, weights,
//! and the gain strength `gamma` that shortens a step to a chosen fraction.

/// Map from `Delta A` at `gamma = 0` to the step fraction `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CPolicy {
    /// `c = 1 - max(0.1, 0.7 + 0.1 log10 dA0)`.
    Heuristic,
    Constant(f64),
}

impl CPolicy {
    pub fn c(&self, delta_a0: f64) -> f64 {
        match *self {
            CPolicy::Heuristic => {
                if delta_a0 <= 0.0 {
                    return 0.9;
                }
                (1.0 - (0.7 + 0.1 * delta_a0.log10()).max(0.1)).clamp(0.0, 1.0)
            }
            CPolicy::Constant(c) => c.clamp(0.0, 1.0),
        }
    }
}

/// Constants of the moving deviation average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AverageConstants {
    pub decay: f64,
    pub fresh: f64,
    pub cap: f64,
}

impl Default for AverageConstants {
    fn default() -> Self {
        AverageConstants { decay: 0.9, fresh: 0.1, cap: 1.02 }
    }
}

/// Moving average of the deviations `Delta A`, normalized by `1 - decay^n`
/// and allowed to grow by at most `cap` per round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviationAverage {
    pub consts: AverageConstants,
    /// Number of deviations folded in.
    pub count: u64,
    pub value: f64,
}

impl DeviationAverage {
    pub fn new(consts: AverageConstants) -> Self {
        DeviationAverage { consts, count: 0, value: 0.0 }
    }

    fn norm(&self, n: u64) -> f64 {
        1.0 - self.consts.decay.powi(n.min(i32::MAX as u64) as i32)
    }

    /// `None` before the first deviation.
    pub fn get(&self) -> Option<f64> {
        (self.count > 0).then_some(self.value)
    }

    pub fn push(&mut self, delta_a: f64) {
        let n = self.count + 1;
        let prev_sum = self.value * self.norm(self.count);
        let fresh = (self.consts.decay * prev_sum + self.consts.fresh * delta_a) / self.norm(n);
        self.value = if self.count == 0 { fresh } else { fresh.min(self.consts.cap * self.value) };
        self.count = n;
    }

    /// `min(1, <dA>/dA)`; 1 before any history or for a vanishing deviation.
    pub fn weight(&self, delta_a: f64) -> f64 {
        match self.get() {
            Some(avg) if delta_a > 0.0 => (avg / delta_a).min(1.0),
            _ => 1.0,
        }
    }
}

/// Projection of the problem onto `span{A_r, B}`, `B` the normalized part of
/// the unconstrained optimum orthogonal to the reference `A_r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoLevel {
    /// `<A_r|H|A_r>`
    pub a: f64,
    /// `<B|H|B>`
    pub b: f64,
    /// `Re <A_r|H|B>`
    pub cx: f64,
    /// Weight of `B` in the unconstrained optimum (`sin theta_0`).
    pub eps0: f64,
}

impl TwoLevel {
    /// Lowest state of the 2x2 problem `[[a - gamma, cx], [cx, b]]`, returned as
    /// `(energy without gain, weight of B)`.
    pub fn optimum(&self, gamma: f64) -> (f64, f64) {
        let t = 0.5 * (2.0 * self.cx).atan2(self.a - gamma - self.b);
        // the minimizing angle of (a-g) cos^2 + b sin^2 + cx sin 2t
        let th = if (self.a - gamma - self.b) * (2.0 * t).cos() + 2.0 * self.cx * (2.0 * t).sin() > 0.0 {
            t + std::f64::consts::FRAC_PI_2
        } else {
            t
        };
        let (s, c) = th.sin_cos();
        (self.a * c * c + self.b * s * s + 2.0 * self.cx * s * c, s.abs())
    }
}

/// Below this target weight the small-angle form is used.
const SMALL_EPS: f64 = 1e-2;

/// Gain strength that shrinks the `B` weight of the optimum from `eps0` to
/// `min(c eps0, delta_max)`. Never below `floor`.
pub fn compute_gain_gamma(two: &TwoLevel, c: f64, delta_max: f64, floor: f64) -> f64 {
    if !(two.eps0 > 0.0) || !two.cx.is_finite() || two.cx == 0.0 {
        return floor;
    }
    let target = (c * two.eps0).min(delta_max);
    if !(target > 0.0) {
        return floor;
    }
    if target >= two.eps0 {
        return floor.max(0.0);
    }
    let g = if target < SMALL_EPS {
        two.a - two.b - two.cx / target
    } else {
        let th = target.min(1.0 - 1e-12).asin();
        two.a - two.b - 2.0 * two.cx / (2.0 * th).tan()
    };
    if g.is_finite() {
        g.max(floor)
    } else {
        floor
    }
}

/// Shift folded into the local term before absorption so that the next
/// eigenvalue stays near `2 w e` instead of growing with the chain.
pub fn energy_shift(eigenvalue: f64, weight: f64) -> f64 {
    eigenvalue / (2.0 * weight)
}

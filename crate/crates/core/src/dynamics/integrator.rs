//! Adaptive Dormand-Prince 4(5) integration with event localization.
//!
//! Trajectory segments between hybrid events are smooth, so a standard
//! embedded Runge-Kutta pair with step-size control is used. Events are
//! detected by sign changes of the event functions across accepted steps
//! and localized by bisection, re-integrating inside the bracketing step.

use crate::error::{Error, Result};

pub type State = [f64; 4];

/// Which way an event function must cross zero to trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Trigger when the value goes from strictly positive to <= 0.
    Falling,
    /// Trigger when the value goes from strictly negative to >= 0.
    Rising,
}

impl Direction {
    fn crossed(self, before: f64, after: f64) -> bool {
        match self {
            Direction::Falling => before > 0.0 && after <= 0.0,
            Direction::Rising => before < 0.0 && after >= 0.0,
        }
    }
}

pub struct Event<'a> {
    pub direction: Direction,
    pub f: &'a dyn Fn(&State) -> f64,
}

/// Result of integrating until an event or the end of the time window.
pub enum Stop {
    /// Event `index` fired at `time` with the interpolated `state`.
    Event {
        index: usize,
        time: f64,
        state: State,
    },
    /// No event fired before `time` (the end of the window).
    End { time: f64, state: State },
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub event_time_tol: f64,
    /// Total nondimensional time budget for one return-map step.
    pub max_time: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            event_time_tol: 1e-10,
            max_time: 50.0,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
// Fifth-order solution weights equal the last row of A; the embedded
// fourth-order weights are below.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 2_000_000;

pub struct Integrator {
    pub cfg: IntegratorConfig,
}

impl Integrator {
    pub fn new(cfg: IntegratorConfig) -> Self {
        Self { cfg }
    }

    /// One Dormand-Prince step. Returns (5th-order solution, error norm).
    fn dp_step<F>(&self, deriv: &F, t: f64, y: &State, h: f64) -> (State, f64)
    where
        F: Fn(f64, &State) -> State,
    {
        let mut k = [[0.0; 4]; 7];
        k[0] = deriv(t, y);
        for stage in 0..6 {
            let mut ys = *y;
            for (i, yi) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    acc += A[stage][j] * kj[i];
                }
                *yi += h * acc;
            }
            k[stage + 1] = deriv(t + C[stage] * h, &ys);
        }
        // k[6] is the derivative at the 5th-order solution (FSAL property),
        // and the 5th-order weights are A[5].
        let mut y5 = *y;
        for (i, yi) in y5.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[5][j] * k[j][i];
            }
            *yi += h * acc;
        }
        let mut err_norm: f64 = 0.0;
        for i in 0..4 {
            let mut y4i = y[i];
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += B4[j] * kj[i];
            }
            y4i += h * acc;
            let scale = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4i) / scale;
            err_norm += e * e;
        }
        (y5, (err_norm / 4.0).sqrt())
    }

    /// Integrate from (t0, y0) to exactly t1 with no event handling.
    pub fn integrate_to_time<F>(&self, deriv: &F, t0: f64, y0: &State, t1: f64) -> Result<State>
    where
        F: Fn(f64, &State) -> State,
    {
        let mut t = t0;
        let mut y = *y0;
        let mut h = ((t1 - t0) * 0.01).max(1e-6);
        let mut steps = 0;
        while t < t1 {
            h = h.min(t1 - t);
            let (y_new, err) = self.dp_step(deriv, t, &y, h);
            if err <= 1.0 {
                t += h;
                y = y_new;
            }
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h *= factor;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator(format!("step size underflow at t={t}")));
            }
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integrator(format!("step budget exhausted at t={t}")));
            }
        }
        Ok(y)
    }

    /// Integrate from (t0, y0) until an event triggers or t reaches t_end.
    ///
    /// Event values are sampled at accepted step endpoints; a sign change in
    /// the configured direction brackets the crossing, which is then
    /// localized by bisection to within `event_time_tol`. If several events
    /// cross inside one step, the earliest wins.
    pub fn integrate_to_event<F>(
        &self,
        deriv: &F,
        t0: f64,
        y0: &State,
        t_end: f64,
        events: &[Event],
    ) -> Result<Stop>
    where
        F: Fn(f64, &State) -> State,
    {
        let mut t = t0;
        let mut y = *y0;
        let mut g_prev: Vec<f64> = events.iter().map(|e| (e.f)(&y)).collect();
        let mut h: f64 = 1e-4;
        let mut steps = 0;
        while t < t_end {
            h = h.min(t_end - t);
            let (y_new, err) = self.dp_step(deriv, t, &y, h);
            if err <= 1.0 {
                let t_new = t + h;
                let mut best: Option<(usize, f64, State)> = None;
                for (idx, ev) in events.iter().enumerate() {
                    let g_new = (ev.f)(&y_new);
                    if ev.direction.crossed(g_prev[idx], g_new) {
                        let (te, ye) = self.bisect_event(deriv, ev, t, &y, g_prev[idx], t_new, &y_new)?;
                        if best.as_ref().is_none_or(|(_, tb, _)| te < *tb) {
                            best = Some((idx, te, ye));
                        }
                    }
                }
                if let Some((index, time, state)) = best {
                    return Ok(Stop::Event { index, time, state });
                }
                t = t_new;
                y = y_new;
                for (idx, ev) in events.iter().enumerate() {
                    g_prev[idx] = (ev.f)(&y);
                }
            }
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h *= factor;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator(format!("step size underflow at t={t}")));
            }
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integrator(format!("step budget exhausted at t={t}")));
            }
        }
        Ok(Stop::End { time: t_end, state: y })
    }

    fn bisect_event<F>(
        &self,
        deriv: &F,
        ev: &Event,
        mut ta: f64,
        ya: &State,
        mut ga: f64,
        mut tb: f64,
        yb: &State,
    ) -> Result<(f64, State)>
    where
        F: Fn(f64, &State) -> State,
    {
        let mut ya = *ya;
        let mut yb = *yb;
        while tb - ta > self.cfg.event_time_tol {
            let tm = 0.5 * (ta + tb);
            let ym = self.integrate_to_time(deriv, ta, &ya, tm)?;
            let gm = (ev.f)(&ym);
            if ev.direction.crossed(ga, gm) {
                tb = tm;
                yb = ym;
            } else {
                ta = tm;
                ya = ym;
                ga = gm;
            }
        }
        Ok((tb, yb))
    }
}

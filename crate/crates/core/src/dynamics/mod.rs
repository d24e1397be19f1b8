//! Ground-truth hybrid simulator of the nondimensional actuated SLIP.
//!
//! One return-map step runs flight (ballistic descent from the apex) to
//! touchdown, stance under the damped-spring leg with a series extension
//! actuator, and flight again to the next apex. Lengths are in units of the
//! rest leg length, velocities in sqrt(g*l0), forces in body weights.

mod integrator;

pub use integrator::{Direction, Event, Integrator, IntegratorConfig, State, Stop};

use crate::error::{Error, Result};

/// Nondimensional model parameters. Gravity and rest leg length are 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Leg stiffness in units of mg/l0.
    pub stiffness: f64,
    /// Dimensionless damping ratio of the leg spring.
    pub damping_ratio: f64,
    /// Friction coefficient at the foot.
    pub mu: f64,
    pub gravity: f64,
    pub leg_length: f64,
    /// Damping constant c = 2*zeta*sqrt(k), cached at construction.
    damping: f64,
}

impl ModelParams {
    pub fn new(stiffness: f64, damping_ratio: f64, mu: f64) -> Result<Self> {
        if !(stiffness > 0.0) {
            return Err(Error::Config(format!("stiffness must be > 0, got {stiffness}")));
        }
        if !(damping_ratio >= 0.0) {
            return Err(Error::Config(format!(
                "damping_ratio must be >= 0, got {damping_ratio}"
            )));
        }
        if !(mu > 0.0) {
            return Err(Error::Config(format!("mu must be > 0, got {mu}")));
        }
        Ok(Self {
            stiffness,
            damping_ratio,
            mu,
            gravity: 1.0,
            leg_length: 1.0,
            damping: 2.0 * damping_ratio * stiffness.sqrt(),
        })
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::new(20.0, 0.1, 0.5).unwrap()
    }
}

/// Apex-of-flight state on the surface of section: vertical velocity is
/// zero by definition and horizontal position is dropped by translational
/// invariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApexState {
    /// Body height at apex.
    pub y: f64,
    /// Horizontal velocity at apex.
    pub xdot: f64,
}

/// Per-step control action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    /// Touchdown leg angle from vertical, positive = foot forward.
    pub alpha: f64,
    /// Actuator extension applied at maximum leg compression.
    pub delta_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Flight,
    StanceCompressing,
    StanceExtended,
}

/// Full continuous state of the point-mass body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState {
    pub x: f64,
    pub y: f64,
    pub xdot: f64,
    pub ydot: f64,
    pub phase: Phase,
    /// Stance foot position; meaningful only in stance.
    pub foot_x: f64,
    /// Current actuator extension, 0 before max compression.
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeTag {
    Valid,
    FailSlip,
    FailFall,
    FailNoApex,
    FailGeometry,
    FailTimeout,
}

impl OutcomeTag {
    pub fn is_valid(self) -> bool {
        self == OutcomeTag::Valid
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeTag::Valid => "valid",
            OutcomeTag::FailSlip => "fail_slip",
            OutcomeTag::FailFall => "fail_fall",
            OutcomeTag::FailNoApex => "fail_no_apex",
            OutcomeTag::FailGeometry => "fail_geometry",
            OutcomeTag::FailTimeout => "fail_timeout",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "valid" => OutcomeTag::Valid,
            "fail_slip" => OutcomeTag::FailSlip,
            "fail_fall" => OutcomeTag::FailFall,
            "fail_no_apex" => OutcomeTag::FailNoApex,
            "fail_geometry" => OutcomeTag::FailGeometry,
            "fail_timeout" => OutcomeTag::FailTimeout,
            _ => return None,
        })
    }
}

/// Next-apex data for a valid step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextApex {
    /// Horizontal displacement over the whole step.
    pub dx: f64,
    pub apex: ApexState,
}

/// Named events along a valid trajectory, with their times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseEvent {
    Touchdown,
    MaxCompression,
    Liftoff,
    Apex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub tag: OutcomeTag,
    pub next: Option<NextApex>,
    pub t_elapsed: f64,
    /// Event log (diagnostic); times are strictly increasing.
    pub events: Vec<(PhaseEvent, f64)>,
}

impl StepOutcome {
    fn failure(tag: OutcomeTag, t: f64, events: Vec<(PhaseEvent, f64)>) -> Self {
        Self {
            tag,
            next: None,
            t_elapsed: t,
            events,
        }
    }
}

/// Body height at which the extended leg contacts flat ground.
pub fn touchdown_height(action: &Action, params: &ModelParams) -> f64 {
    debug_assert!(action.alpha.abs() < std::f64::consts::FRAC_PI_2);
    params.leg_length * action.alpha.cos()
}

/// Axial leg force and resulting accelerations in stance.
#[derive(Debug, Clone, Copy)]
pub struct StanceDerivative {
    pub xddot: f64,
    pub yddot: f64,
    /// Axial force along the leg, positive in compression.
    pub force: f64,
    pub leg_length: f64,
    pub leg_rate: f64,
}

/// Stance dynamics: F = k*(l0 + u - l) - c*ldot applied along the leg.
pub fn stance_derivative(state: &FullState, params: &ModelParams) -> Result<StanceDerivative> {
    let rx = state.x - state.foot_x;
    let l = (rx * rx + state.y * state.y).sqrt();
    if l <= 1e-6 {
        return Err(Error::DegenerateGeometry(l));
    }
    let ldot = (rx * state.xdot + state.y * state.ydot) / l;
    let force = params.stiffness * (params.leg_length + state.u - l) - params.damping() * ldot;
    Ok(StanceDerivative {
        xddot: force * rx / l,
        yddot: force * state.y / l - params.gravity,
        force,
        leg_length: l,
        leg_rate: ldot,
    })
}

/// Kinetic plus gravitational plus spring potential energy.
pub fn total_energy(state: &FullState, params: &ModelParams) -> f64 {
    let kinetic = 0.5 * (state.xdot * state.xdot + state.ydot * state.ydot);
    let gravitational = params.gravity * state.y;
    let spring = match state.phase {
        Phase::Flight => 0.0,
        _ => {
            let rx = state.x - state.foot_x;
            let l = (rx * rx + state.y * state.y).sqrt();
            let deflection = params.leg_length + state.u - l;
            0.5 * params.stiffness * deflection * deflection
        }
    };
    kinetic + gravitational + spring
}

fn flight_deriv(params: &ModelParams) -> impl Fn(f64, &State) -> State + '_ {
    move |_t, y| [y[2], y[3], 0.0, -params.gravity]
}

fn axial_force(s: &State, params: &ModelParams, foot_x: f64, u: f64) -> f64 {
    let rx = s[0] - foot_x;
    let l = (rx * rx + s[1] * s[1]).sqrt().max(1e-9);
    let ldot = (rx * s[2] + s[1] * s[3]) / l;
    params.stiffness * (params.leg_length + u - l) - params.damping() * ldot
}

fn leg_rate(s: &State, foot_x: f64) -> f64 {
    let rx = s[0] - foot_x;
    let l = (rx * rx + s[1] * s[1]).sqrt().max(1e-9);
    (rx * s[2] + s[1] * s[3]) / l
}

/// Simulate one apex-to-apex step: the controlled first return map.
pub fn simulate_step(s: &ApexState, a: &Action, params: &ModelParams) -> Result<StepOutcome> {
    simulate_step_with(s, a, params, &IntegratorConfig::default())
}

pub fn simulate_step_with(
    s: &ApexState,
    a: &Action,
    params: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<StepOutcome> {
    if !(s.y.is_finite() && s.xdot.is_finite()) {
        return Err(Error::NonFinite("apex state"));
    }
    if !(a.alpha.is_finite() && a.delta_l.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    let integ = Integrator::new(*cfg);
    let mut events_log: Vec<(PhaseEvent, f64)> = Vec::with_capacity(4);

    // Flight descent from the apex to touchdown.
    let y_td = touchdown_height(a, params);
    if s.y <= y_td {
        return Ok(StepOutcome::failure(OutcomeTag::FailGeometry, 0.0, events_log));
    }
    let deriv_flight = flight_deriv(params);
    let state0: State = [0.0, s.y, s.xdot, 0.0];
    let touchdown_f = |y: &State| y[1] - y_td;
    let flight_events = [Event {
        direction: Direction::Falling,
        f: &touchdown_f,
    }];
    let (mut t, mut state) =
        match integ.integrate_to_event(&deriv_flight, 0.0, &state0, cfg.max_time, &flight_events)? {
            Stop::Event { time, state, .. } => (time, state),
            Stop::End { time, .. } => {
                return Ok(StepOutcome::failure(OutcomeTag::FailTimeout, time, events_log))
            }
        };
    events_log.push((PhaseEvent::Touchdown, t));

    // Stance. The foot lands ahead of the body by l0*sin(alpha).
    let foot_x = state[0] + params.leg_length * a.alpha.sin();
    if leg_rate(&state, foot_x) >= 0.0 {
        // Leg lengthening at contact: the unilateral foot cannot pull, so
        // the body continues ballistically to the ground.
        return Ok(StepOutcome::failure(OutcomeTag::FailFall, t, events_log));
    }
    if (state[0] - foot_x).abs() > params.mu * state[1] {
        // Friction cone already violated as the leg loads up.
        return Ok(StepOutcome::failure(OutcomeTag::FailSlip, t, events_log));
    }

    let mut u = 0.0;
    let mut extended = false;
    loop {
        let deriv = |tt: f64, ss: &State| {
            let _ = tt;
            let rx = ss[0] - foot_x;
            let l = (rx * rx + ss[1] * ss[1]).sqrt().max(1e-9);
            let ldot = (rx * ss[2] + ss[1] * ss[3]) / l;
            let force =
                params.stiffness * (params.leg_length + u - l) - params.damping() * ldot;
            [
                ss[2],
                ss[3],
                force * rx / l,
                force * ss[1] / l - params.gravity,
            ]
        };
        let liftoff_f = |ss: &State| axial_force(ss, params, foot_x, u);
        let compression_f = |ss: &State| leg_rate(ss, foot_x);
        let slip_f = |ss: &State| params.mu * ss[1] - (ss[0] - foot_x).abs();
        let fall_f = |ss: &State| ss[1];
        let mut events: Vec<Event> = vec![
            Event {
                direction: Direction::Falling,
                f: &liftoff_f,
            },
            Event {
                direction: Direction::Falling,
                f: &slip_f,
            },
            Event {
                direction: Direction::Falling,
                f: &fall_f,
            },
        ];
        if !extended {
            events.push(Event {
                direction: Direction::Rising,
                f: &compression_f,
            });
        }
        match integ.integrate_to_event(&deriv, t, &state, cfg.max_time, &events)? {
            Stop::End { time, .. } => {
                return Ok(StepOutcome::failure(OutcomeTag::FailTimeout, time, events_log))
            }
            Stop::Event { index, time, state: se } => {
                t = time;
                state = se;
                match index {
                    0 => {
                        // Liftoff: contact force reaches zero.
                        if state[3] <= 0.0 {
                            return Ok(StepOutcome::failure(
                                OutcomeTag::FailNoApex,
                                t,
                                events_log,
                            ));
                        }
                        events_log.push((PhaseEvent::Liftoff, t));
                        break;
                    }
                    1 => {
                        return Ok(StepOutcome::failure(OutcomeTag::FailSlip, t, events_log))
                    }
                    2 => {
                        return Ok(StepOutcome::failure(OutcomeTag::FailFall, t, events_log))
                    }
                    3 => {
                        // Maximum compression: the actuator steps to delta_l.
                        events_log.push((PhaseEvent::MaxCompression, t));
                        u = a.delta_l;
                        extended = true;
                        if axial_force(&state, params, foot_x, u) <= 0.0 {
                            // Retraction released the leg instantly.
                            if state[3] <= 0.0 {
                                return Ok(StepOutcome::failure(
                                    OutcomeTag::FailNoApex,
                                    t,
                                    events_log,
                                ));
                            }
                            events_log.push((PhaseEvent::Liftoff, t));
                            break;
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    // Flight ascent to the next apex.
    let apex_f = |ss: &State| ss[3];
    let ascent_events = [Event {
        direction: Direction::Falling,
        f: &apex_f,
    }];
    match integ.integrate_to_event(&deriv_flight, t, &state, cfg.max_time, &ascent_events)? {
        Stop::End { time, .. } => Ok(StepOutcome::failure(OutcomeTag::FailTimeout, time, events_log)),
        Stop::Event { time, state: sa, .. } => {
            events_log.push((PhaseEvent::Apex, time));
            Ok(StepOutcome {
                tag: OutcomeTag::Valid,
                next: Some(NextApex {
                    dx: sa[0],
                    apex: ApexState {
                        y: sa[1],
                        xdot: sa[2],
                    },
                }),
                t_elapsed: time,
                events: events_log,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn touchdown_height_examples() {
        let p = defaults();
        let mk = |alpha| Action { alpha, delta_l: 0.0 };
        assert_eq!(touchdown_height(&mk(0.0), &p), 1.0);
        assert_relative_eq!(touchdown_height(&mk(0.6), &p), 0.825336, epsilon = 1e-6);
        assert_eq!(
            touchdown_height(&mk(0.6), &p),
            touchdown_height(&mk(-0.6), &p)
        );
    }

    fn vertical_stance(y: f64, ydot: f64, u: f64) -> FullState {
        FullState {
            x: 0.0,
            y,
            xdot: 0.0,
            ydot,
            phase: Phase::StanceCompressing,
            foot_x: 0.0,
            u,
        }
    }

    #[test]
    fn stance_derivative_examples() {
        let p = defaults();
        // Vertical leg, l = 0.9, at rest: F = 20*0.1 = 2, yddot = 2 - 1.
        let d = stance_derivative(&vertical_stance(0.9, 0.0, 0.0), &p).unwrap();
        assert_relative_eq!(d.yddot, 1.0, epsilon = 1e-12);
        assert_eq!(d.xddot, 0.0);
        // Unstretched spring: pure gravity.
        let d = stance_derivative(&vertical_stance(1.0, 0.0, 0.0), &p).unwrap();
        assert_relative_eq!(d.force, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.yddot, -1.0, epsilon = 1e-12);
        // Compressing at ldot = -0.5 with zeta = 0.1: damping adds force.
        let d = stance_derivative(&vertical_stance(0.9, -0.5, 0.0), &p).unwrap();
        assert_relative_eq!(d.force, 2.0 + 2.0 * 0.1 * 20.0_f64.sqrt() * 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.force, 2.447214, epsilon = 1e-6);
    }

    #[test]
    fn stance_derivative_degenerate_geometry() {
        let p = defaults();
        let s = FullState {
            x: 0.0,
            y: 1e-9,
            xdot: 0.0,
            ydot: 0.0,
            phase: Phase::StanceCompressing,
            foot_x: 0.0,
            u: 0.0,
        };
        assert!(matches!(
            stance_derivative(&s, &p),
            Err(crate::Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn total_energy_examples() {
        let p = defaults();
        let flight = |y, xdot, ydot| FullState {
            x: 0.0,
            y,
            xdot,
            ydot,
            phase: Phase::Flight,
            foot_x: 0.0,
            u: 0.0,
        };
        assert_relative_eq!(total_energy(&flight(1.1, 0.0, 0.0), &p), 1.1);
        assert_relative_eq!(total_energy(&flight(1.0, 1.0, 0.0), &p), 1.5);
        assert_relative_eq!(
            total_energy(&vertical_stance(0.95, 0.0, 0.0), &p),
            0.975,
            epsilon = 1e-12
        );
    }

    #[test]
    fn symmetric_hop_has_zero_displacement_and_loses_energy() {
        let p = defaults();
        let s = ApexState { y: 1.1, xdot: 0.0 };
        let a = Action { alpha: 0.0, delta_l: 0.0 };
        let out = simulate_step(&s, &a, &p).unwrap();
        assert_eq!(out.tag, OutcomeTag::Valid);
        let next = out.next.unwrap();
        assert!(next.dx.abs() < 1e-9);
        // Damping removes energy, so the next apex is lower.
        assert!(next.apex.y < 1.1);
    }

    #[test]
    fn forward_leg_slips_at_touchdown() {
        // tan(0.5) = 0.546 > mu = 0.5.
        let p = defaults();
        let out = simulate_step(
            &ApexState { y: 1.1, xdot: 0.0 },
            &Action { alpha: 0.5, delta_l: 0.0 },
            &p,
        )
        .unwrap();
        assert_eq!(out.tag, OutcomeTag::FailSlip);
        assert!(out.next.is_none());
    }

    #[test]
    fn apex_below_touchdown_height_is_geometry_failure() {
        let p = defaults();
        let out = simulate_step(
            &ApexState { y: 0.8, xdot: 0.5 },
            &Action { alpha: 0.6, delta_l: 0.0 },
            &p,
        )
        .unwrap();
        assert_eq!(out.tag, OutcomeTag::FailGeometry);
        // Equality is also classified as geometry failure.
        let out = simulate_step(
            &ApexState { y: 1.0, xdot: 0.0 },
            &Action { alpha: 0.0, delta_l: 0.0 },
            &p,
        )
        .unwrap();
        assert_eq!(out.tag, OutcomeTag::FailGeometry);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = defaults();
        assert!(simulate_step(
            &ApexState { y: f64::NAN, xdot: 0.0 },
            &Action { alpha: 0.0, delta_l: 0.0 },
            &p
        )
        .is_err());
        assert!(simulate_step(
            &ApexState { y: 1.1, xdot: 0.0 },
            &Action { alpha: f64::INFINITY, delta_l: 0.0 },
            &p
        )
        .is_err());
    }

    #[test]
    fn conservative_model_conserves_energy() {
        let p = ModelParams::new(20.0, 0.0, 0.5).unwrap();
        let s = ApexState { y: 1.05, xdot: 0.3 };
        let a = Action { alpha: 0.15, delta_l: 0.0 };
        let out = simulate_step(&s, &a, &p).unwrap();
        assert_eq!(out.tag, OutcomeTag::Valid);
        let next = out.next.unwrap();
        let e0 = s.y + 0.5 * s.xdot * s.xdot;
        let e1 = next.apex.y + 0.5 * next.apex.xdot * next.apex.xdot;
        assert!((e1 - e0).abs() < 1e-6, "dE = {}", e1 - e0);
    }

    #[test]
    fn actuation_injects_energy() {
        let p = ModelParams::new(20.0, 0.0, 0.5).unwrap();
        let s = ApexState { y: 1.05, xdot: 0.0 };
        let base = simulate_step(&s, &Action { alpha: 0.0, delta_l: 0.0 }, &p).unwrap();
        let pushed = simulate_step(&s, &Action { alpha: 0.0, delta_l: 0.05 }, &p).unwrap();
        assert_eq!(pushed.tag, OutcomeTag::Valid);
        assert!(pushed.next.unwrap().apex.y > base.next.unwrap().apex.y);
    }

    #[test]
    fn mirror_symmetry() {
        let p = defaults();
        for i in 0..50u64 {
            let mut rng = crate::sampling::point_rng(4242, i);
            let q = crate::sampling::uniform_point(&mut rng, &crate::sampling::Bounds::default());
            let fwd = simulate_step(
                &ApexState { y: q[0], xdot: q[1] },
                &Action { alpha: q[2], delta_l: q[3] },
                &p,
            )
            .unwrap();
            let rev = simulate_step(
                &ApexState { y: q[0], xdot: -q[1] },
                &Action { alpha: -q[2], delta_l: q[3] },
                &p,
            )
            .unwrap();
            assert_eq!(fwd.tag, rev.tag, "point {q:?}");
            if let (Some(a), Some(b)) = (fwd.next, rev.next) {
                assert!((a.dx + b.dx).abs() < 1e-8);
                assert!((a.apex.y - b.apex.y).abs() < 1e-8);
                assert!((a.apex.xdot + b.apex.xdot).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn event_ordering_on_valid_steps() {
        let p = defaults();
        let mut checked = 0;
        for i in 0..200u64 {
            let mut rng = crate::sampling::point_rng(99, i);
            let q = crate::sampling::uniform_point(&mut rng, &crate::sampling::Bounds::default());
            let out = simulate_step(
                &ApexState { y: q[0], xdot: q[1] },
                &Action { alpha: q[2], delta_l: q[3] },
                &p,
            )
            .unwrap();
            if out.tag != OutcomeTag::Valid {
                continue;
            }
            checked += 1;
            let kinds: Vec<PhaseEvent> = out.events.iter().map(|(e, _)| *e).collect();
            assert_eq!(
                kinds,
                vec![
                    PhaseEvent::Touchdown,
                    PhaseEvent::MaxCompression,
                    PhaseEvent::Liftoff,
                    PhaseEvent::Apex
                ],
                "point {q:?}"
            );
            for w in out.events.windows(2) {
                assert!(w[0].1 < w[1].1);
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn refinement_convergence() {
        let p = defaults();
        let coarse = IntegratorConfig::default();
        let fine = IntegratorConfig {
            rel_tol: coarse.rel_tol / 2.0,
            abs_tol: coarse.abs_tol / 2.0,
            ..coarse
        };
        for i in 0..20u64 {
            let mut rng = crate::sampling::point_rng(7, i);
            let q = crate::sampling::uniform_point(&mut rng, &crate::sampling::Bounds::default());
            let s = ApexState { y: q[0], xdot: q[1] };
            let a = Action { alpha: q[2], delta_l: q[3] };
            let c = simulate_step_with(&s, &a, &p, &coarse).unwrap();
            if c.tag != OutcomeTag::Valid {
                continue;
            }
            let f = simulate_step_with(&s, &a, &p, &fine).unwrap();
            assert_eq!(f.tag, OutcomeTag::Valid);
            let (cn, fn_) = (c.next.unwrap(), f.next.unwrap());
            assert!((cn.dx - fn_.dx).abs() < 1e-6);
            assert!((cn.apex.y - fn_.apex.y).abs() < 1e-6);
            assert!((cn.apex.xdot - fn_.apex.xdot).abs() < 1e-6);
        }
    }
}

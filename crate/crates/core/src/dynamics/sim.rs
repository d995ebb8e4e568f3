use crate::dynamics::{
    evaluate, project_to_ground, step_with, ContactModel, DynamicsError, GroundContact,
    TOUCHDOWN_MARGIN,
};
use crate::params::VehicleParams;
use crate::state::{ControlInput, Direction, Mode, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    Touchdown,
    Liftoff,
}

/// One simulator step: the state at the start of the step and what acted on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: RobotState,
    pub input: ControlInput,
    pub mode: Mode,
    pub contact: Option<GroundContact>,
    pub power: f64,
    pub event: Option<SimEvent>,
}

impl StepRecord {
    pub fn slipping(&self) -> bool {
        self.contact.is_some_and(|c| c.slip.is_slip())
    }
}

/// Fixed-step simulator owning the true vehicle state and its contact mode.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub params: VehicleParams,
    pub contact: ContactModel,
    pub dt: f64,
    state: RobotState,
    mode: Mode,
    t: f64,
    pending: Option<SimEvent>,
}

impl Simulator {
    /// Starts in ground mode when the initial state sits at the contact height.
    pub fn new(params: VehicleParams, contact: ContactModel, dt: f64, initial: RobotState) -> Self {
        let on_ground = initial.position.z <= params.contact_height() + TOUCHDOWN_MARGIN;
        let (state, mode) = if on_ground {
            (
                project_to_ground(&initial, &params, !contact.slip),
                Mode::Ground(Direction::Forward),
            )
        } else {
            (initial, Mode::Aerial)
        };
        Self {
            params,
            contact,
            dt,
            state,
            mode,
            t: 0.0,
            pending: None,
        }
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Overrides the state, keeping the current mode.
    pub fn set_state(&mut self, state: RobotState) {
        self.state = state;
    }

    /// Advances one step with `u` held constant. Inputs are clamped to the
    /// actuator limits.
    pub fn step(&mut self, u: &ControlInput) -> Result<StepRecord, DynamicsError> {
        let u = u.clamped(&self.params);
        let mut event = self.pending.take();
        let mut ev = evaluate(&self.state, &u, self.mode, &self.params, &self.contact);
        if let Some(c) = ev.contact {
            if c.reaction.flags.contact_lost {
                self.mode = Mode::Aerial;
                event = Some(SimEvent::Liftoff);
                ev = evaluate(&self.state, &u, self.mode, &self.params, &self.contact);
            }
        }
        let record = StepRecord {
            t: self.t,
            state: self.state,
            input: u,
            mode: self.mode,
            contact: ev.contact,
            power: crate::dynamics::rotor_power(&u, &self.params),
            event,
        };
        let next = step_with(&self.state, &u, self.mode, self.dt, &self.params, &self.contact)
            .map_err(|e| match e {
                DynamicsError::Divergence { magnitude, .. } => DynamicsError::Divergence {
                    t: self.t + self.dt,
                    magnitude,
                },
                other => other,
            })?;
        self.t += self.dt;
        self.state = next;
        if self.mode == Mode::Aerial
            && self.state.position.z <= self.params.contact_height() + TOUCHDOWN_MARGIN
            && self.state.velocity.z <= 0.0
        {
            let heading = crate::dynamics::ground_axes(self.state.orientation.yaw()).0;
            let direction = if self.state.velocity.dot(&heading) < 0.0 {
                Direction::Reverse
            } else {
                Direction::Forward
            };
            self.mode = Mode::Ground(direction);
            self.pending = Some(SimEvent::Touchdown);
            self.state = project_to_ground(&self.state, &self.params, !self.contact.slip);
        }
        Ok(record)
    }
}

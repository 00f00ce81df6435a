//! The SIR particle system: parameters, state machine, event log and runs.

mod events;
mod params;
mod run;
mod state;

pub use events::{Event, EventKind, EventLog};
pub use params::{window_for, window_half_width, DetectorMode, InfectionRate, ModelParams};
pub use run::{run, run_observed, RunOutput, RunSpec, StepObserver};
pub use state::{
    bridge_contact_probability, init_configuration, init_from_points, Contact, Health, Particle, SimOptions,
    SimState,
};

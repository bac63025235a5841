//! Discrete-event line simulator.
//!
//! Produces a ground-truth timetable (optionally disrupted by an incident),
//! commuters boarding trains under a capacity limit, and noisy observation
//! records of those commuters. Every inference stage can be scored against
//! what the simulator knows.

mod commuters;
mod observe;
mod scenario;
mod timetable;

pub use commuters::{
    board, generate_arrivals, simulate_commuters, window_labels, window_start, Arrival, Commuter,
    CommuterOutcome, DemandModel, DemandPeak, DepartureEvent, DsgWindowLabel, DSG_WINDOW,
};
pub use observe::{
    commuter_device, observe, ConcourseCoverage, DeviceOwner, IdleDevices, Observation,
    SamplingModulation, SensingConfig,
};
pub use scenario::{ScenarioConfig, SimulationRun};
pub use timetable::{
    generate_timetable, inject_incident, train_label, GroundTruthTimetable, Incident, ServicePlan,
    TimetableEntry, TrainRun,
};

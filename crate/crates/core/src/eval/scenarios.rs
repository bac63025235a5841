//! Reference scenarios used by the experiment drivers and the CLI defaults.

use crate::clustering::{ArrivalEvidence, BaselineConfig, EnvelopeConfig, MovementConfig};
use crate::sim::{
    ConcourseCoverage, DemandModel, DemandPeak, IdleDevices, Incident, ScenarioConfig,
    SensingConfig, ServicePlan,
};
use crate::similarity::{SimilarityParams, TimeComponent};
use crate::trace::StationId;

use super::movement::MovementExperiment;

pub const HEADWAY: i64 = 180;

/// Ten stations, eight trains three minutes apart, every visit observed exactly.
pub fn clean_scenario() -> ScenarioConfig {
    ScenarioConfig {
        line_id: "L1".into(),
        stations: 10,
        service: ServicePlan {
            headway: HEADWAY,
            dwell: 30,
            run_time: vec![120],
            span: (0, 8 * HEADWAY),
        },
        demand: DemandModel::uniform(0.05),
        capacity: 10_000,
        sensing: SensingConfig::noiseless(),
        incident: None,
    }
}

/// Three hours of service observed with partial sampling, jitter, tail
/// dropout and identifier changes.
pub fn noisy_scenario() -> ScenarioConfig {
    ScenarioConfig {
        service: ServicePlan {
            headway: HEADWAY,
            dwell: 30,
            run_time: vec![120],
            span: (0, 3 * 3600),
        },
        demand: DemandModel::uniform(0.03),
        sensing: SensingConfig {
            base_sampling: 0.6,
            timestamp_jitter_sd: 10.0,
            dropout_tail: 0.05,
            id_split: 0.02,
            ..SensingConfig::noiseless()
        },
        ..clean_scenario()
    }
}

/// The noisy scenario with a 30-minute platform blockage mid-line.
pub fn incident_scenario() -> ScenarioConfig {
    ScenarioConfig {
        incident: Some(Incident {
            station: StationId(5),
            start: 3600,
            hold: 1800,
            recovery_factor: 1.0,
            clearance: 30,
        }),
        ..noisy_scenario()
    }
}

/// Envelope for the simulator, whose timestamp noise is symmetric.
pub fn simulation_envelope() -> EnvelopeConfig {
    EnvelopeConfig {
        q_lo: 0.5,
        q_hi: 0.5,
        ..EnvelopeConfig::default()
    }
}

/// Spectral settings for simulated traces: departures are compared, since
/// a commuter's first sighting at the origin is when they reached the
/// platform rather than when the train did.
pub fn simulation_movement_config() -> MovementConfig {
    MovementConfig {
        similarity: SimilarityParams::soft(600.0).with_component(TimeComponent::Departure),
        nominal_headway: Some(HEADWAY),
        envelope: simulation_envelope(),
        min_support: 2,
        min_trip_stations: 2,
        ..MovementConfig::default()
    }
}

pub fn simulation_baseline_config() -> BaselineConfig {
    BaselineConfig {
        eps: 60,
        min_pts: 3,
        envelope: simulation_envelope(),
        ..BaselineConfig::default()
    }
}

/// Metrics window of the incident experiment: the blockage and the hour
/// following it.
pub const INCIDENT_EVAL_PERIOD: (i64, i64) = (3600, 3600 + 5400);

pub fn incident_experiment() -> MovementExperiment {
    MovementExperiment {
        eval_period: Some(INCIDENT_EVAL_PERIOD),
        ..movement_experiment(incident_scenario())
    }
}

pub fn movement_experiment(scenario: ScenarioConfig) -> MovementExperiment {
    MovementExperiment {
        scenario,
        movement: simulation_movement_config(),
        baseline: simulation_baseline_config(),
        ..MovementExperiment::default()
    }
}

/// Envelope reading every member's first sighting, for data without waiting time.
pub fn literal_envelope() -> EnvelopeConfig {
    EnvelopeConfig {
        arrival: ArrivalEvidence::AllMembers,
        ..EnvelopeConfig::default()
    }
}

/// A morning peak that overloads trains in the middle of the line.
fn peaked_demand(multiplier: f64) -> DemandModel {
    DemandModel {
        rate: vec![0.015],
        peaks: vec![DemandPeak {
            start: 3600,
            end: 6300,
            multiplier,
            stations: Vec::new(),
        }],
    }
}

fn concourse(station: u32) -> ConcourseCoverage {
    ConcourseCoverage {
        station: StationId(station),
        min_walk: 60,
        max_walk: 300,
    }
}

fn idle(station: u32) -> IdleDevices {
    IdleDevices {
        station: StationId(station),
        per_hour: 40.0,
        min_stay: 300,
        max_stay: 1500,
    }
}

/// Two capacity-constrained lines for demand-supply-gap experiments, with
/// different headways so that normal waits differ between them. Both see
/// the noisy sensing of [`noisy_scenario`]; some platforms also host
/// lingering devices or have sensors reaching into the concourse.
pub fn dsg_lines() -> Vec<ScenarioConfig> {
    let base = noisy_scenario();
    vec![
        ScenarioConfig {
            line_id: "L1".into(),
            demand: peaked_demand(3.0),
            capacity: 22,
            sensing: SensingConfig {
                idle: vec![idle(2), idle(6)],
                concourse: vec![concourse(4)],
                ..base.sensing.clone()
            },
            ..base.clone()
        },
        ScenarioConfig {
            line_id: "L2".into(),
            service: ServicePlan {
                headway: 300,
                ..base.service.clone()
            },
            demand: peaked_demand(2.5),
            capacity: 33,
            sensing: SensingConfig {
                idle: vec![idle(4)],
                concourse: vec![concourse(2)],
                ..base.sensing.clone()
            },
            ..base
        },
    ]
}

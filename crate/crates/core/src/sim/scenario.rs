use std::fs::File;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::commuters::{simulate_commuters, CommuterOutcome, DemandModel};
use super::observe::{observe, DeviceOwner, Observation, SensingConfig};
use super::timetable::{
    generate_timetable, inject_incident, GroundTruthTimetable, Incident, ServicePlan,
};
use crate::dsg::{write_gate_csv, SCALING_BIN};
use crate::error::Result;
use crate::trace::{write_jsonl, DeviceId, Journey, LineTopology, TrainId};

/// One simulated line direction: service, demand, sensing and an optional
/// incident.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_line")]
    pub line_id: String,
    pub stations: u32,
    pub service: ServicePlan,
    pub demand: DemandModel,
    pub capacity: u32,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub incident: Option<Incident>,
}

fn default_line() -> String {
    "L1".to_string()
}

/// Everything one simulation run knows.
#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub topology: LineTopology,
    pub nominal: GroundTruthTimetable,
    /// Actual movements, after any incident.
    pub timetable: GroundTruthTimetable,
    pub outcome: CommuterOutcome,
    pub observation: Observation,
}

impl ScenarioConfig {
    pub fn topology(&self) -> Result<LineTopology> {
        LineTopology::linear(self.line_id.clone(), self.stations)
    }

    pub fn run(&self, seed: u64) -> Result<SimulationRun> {
        let topology = self.topology()?;
        let nominal = generate_timetable(&topology, &self.service)?;
        let timetable = match &self.incident {
            Some(inc) => inject_incident(&nominal, &topology, inc)?,
            None => nominal.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcome =
            simulate_commuters(&timetable, &topology, &self.demand, self.capacity, &mut rng)?;
        let observation = observe(
            &outcome.commuters,
            &timetable,
            &topology,
            &self.sensing,
            seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED,
        )?;
        Ok(SimulationRun {
            topology,
            nominal,
            timetable,
            outcome,
            observation,
        })
    }
}

impl SimulationRun {
    /// The train the device's owner boarded, if any.
    pub fn device_train(&self, device: &DeviceId) -> Option<&TrainId> {
        match self.observation.owners.get(device)? {
            DeviceOwner::Commuter(id) => self
                .outcome
                .commuters
                .get(*id as usize)?
                .boarded_train
                .as_ref(),
            DeviceOwner::Idle => None,
        }
    }

    pub fn journey_train(&self, journey: &Journey) -> Option<&TrainId> {
        self.device_train(&journey.device)
    }

    /// Writes `trace.jsonl`, `true_timetable.csv`, `dsg_labels.csv` and
    /// `gate_counts.csv` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(
            File::create(dir.join("trace.jsonl"))?,
            &self.observation.records,
        )?;
        self.timetable
            .write_csv(File::create(dir.join("true_timetable.csv"))?)?;
        self.outcome
            .write_dsg_csv(File::create(dir.join("dsg_labels.csv"))?)?;
        write_gate_csv(
            File::create(dir.join("gate_counts.csv"))?,
            &self.outcome.gate_counts(SCALING_BIN),
        )?;
        Ok(())
    }
}

//! Metrics and experiment drivers over simulated scenarios.

mod dsg;
mod metrics;
mod movement;
pub mod scenarios;
mod stream;

pub use dsg::{
    downsample_devices, line_day, line_features, observe_day, predict_line, run_dsg_experiment,
    run_robustness_sweep, score_windows, simulate_day, train_on_days, write_robustness_csv,
    DayData, DepartureRecord, DsgExperiment, DsgReport, LevelScore, LinePrediction,
    PredictedDeparture, RobustnessPoint, SimulatedLine, WindowScore,
};
pub use metrics::{
    adjusted_rand_index, classification_report, hit_rate, match_arrivals, rmse_minutes,
    ArrivalMatch, ClassificationReport,
};
pub use movement::{
    run_journeys, run_movement_experiment, score_timetable, EvalReport, MethodScore,
    MovementExperiment, StationScore,
};
pub use stream::{
    batch_timetable, stream_run, write_stream_flags_csv, write_stream_rows_csv, DepartureFlag,
    StreamBatch, StreamConfig, StreamDsg, StreamOutput, TimetableRow,
};

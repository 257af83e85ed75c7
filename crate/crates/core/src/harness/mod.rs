//! Synthetic benchmark harness.
//!
//! Generates chair databases and ground-truth arrangements, renders and
//! degrades keypoint maps, and runs ablation experiments and
//! hyperparameter searches over the inference pipeline.

mod chairs;
mod experiment;
mod scenes;
mod tune;

pub use chairs::{chair_database, chair_keypoints, default_template, DEFAULT_MODELS};
pub use experiment::{
    build_models, corpus, drop_plan, run_experiment, run_experiment_detailed, run_scene, BinReport,
    Condition, ConditionReport, ExperimentConfig, ExperimentReport, MeasureStats, Models, PrfStats,
    SceneRun, Stat,
};
pub use scenes::{
    default_camera, generate_scenes, project_scene, render_scene, validate_scene, ArrangementSpec,
    Layout, DEFAULT_IMAGE_SIZE, DEFAULT_MAP_SIZE, DEFAULT_PITCH_DEG, TABLE_HALF_EXTENTS,
};
pub use tune::{random_search, tune, HyperRanges, Trial, TuneResult, TUNING_SCENES};

//! Random-search hyperparameter tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::experiment::{build_models, corpus, drop_plan, ExperimentConfig, STREAM_TUNE};
use super::scenes::render_scene;
use crate::error::{Error, Result};
use crate::io::SceneFile;
use crate::metrics::Tally;
use crate::selection::{infer_scene, Hyper};

/// Scenes in the held-out tuning set.
pub const TUNING_SCENES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub tau_m: (f64, f64),
    pub tau_u: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for HyperRanges {
    fn default() -> Self {
        Self {
            tau_m: (0.05, 0.5),
            tau_u: (0.05, 0.5),
            alpha: (0.05, 1.0),
            beta: (0.05, 1.0),
        }
    }
}

impl HyperRanges {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Hyper {
        let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        Hyper {
            tau_m: draw(self.tau_m),
            tau_u: draw(self.tau_u),
            alpha: draw(self.alpha),
            beta: draw(self.beta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyper: Hyper,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Hyper,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

/// Samples `budget` points uniformly from `ranges` and keeps the highest
/// score; the earliest trial wins ties.
pub fn random_search(
    budget: usize,
    seed: u64,
    ranges: &HyperRanges,
    mut objective: impl FnMut(&Hyper) -> Result<f64>,
) -> Result<TuneResult> {
    if budget == 0 {
        return Err(Error::InvalidInput(
            "tuning budget must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let hyper = ranges.sample(&mut rng);
        let score = objective(&hyper)?;
        log::info!("trial {index}: {score:.4} {hyper:?}");
        trials.push(Trial {
            index,
            hyper,
            score,
        });
    }
    let best = trials
        .iter()
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.score >= t.score => Some(b),
            _ => Some(t),
        })
        .expect("budget is positive");
    Ok(TuneResult {
        best: best.hyper,
        best_score: best.score,
        trials,
    })
}

/// Tunes the hyperparameters for pooled LocAng F1 on a held-out set of
/// [`TUNING_SCENES`] scenes degraded at the config's largest drop fraction.
pub fn tune(config: &ExperimentConfig, budget: usize, seed: u64) -> Result<TuneResult> {
    config.validate()?;
    let models = build_models(config)?;
    let held_out = corpus(config, &models.template, TUNING_SCENES, seed ^ STREAM_TUNE)?;
    let fraction = config.drop_fractions.iter().copied().fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = held_out
        .iter()
        .map(|gt| {
            let plan = drop_plan(
                gt.objects.len(),
                fraction,
                config.occluded_per_scene,
                &mut rng,
            );
            render_scene(gt, &models.template, config.sigma(), &plan, rng.random()).map(|m| (gt, m))
        })
        .collect::<Result<Vec<_>>>()?;
    random_search(budget, seed, &HyperRanges::default(), |hyper| {
        let mut inference = config.inference();
        inference.hyper = *hyper;
        let mut total = Tally::default();
        for (gt, maps) in &inputs {
            let est = infer_scene(
                maps,
                &gt.camera,
                &models.template,
                Some(&models.gmm),
                &inference,
            )?;
            let result = SceneFile::from_estimate(&est, &gt.camera).to_eval();
            total.merge(&Tally::of(&result, &gt.to_eval(), &config.thresholds));
        }
        Ok(total.report(&config.thresholds).locang.f1)
    })
}

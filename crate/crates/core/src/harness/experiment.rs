//! Occlusion-binned ablation experiments.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chairs::{default_template, DEFAULT_MODELS};
use super::scenes::{default_camera, generate_scenes, render_scene, ArrangementSpec, Layout};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::io::SceneFile;
use crate::keypoint_maps::default_sigma;
use crate::metrics::{
    occlusion_score, EvalScene, MeasureReport, Prf, Tally, Thresholds, DEFAULT_OCCLUSION_BINS,
};
use crate::scene_stats::{
    extract_pairs, fit_gmm, PairwiseGmm, DEFAULT_COMPONENTS, DEFAULT_DELTA_R,
};
use crate::selection::{fit_candidates, infer_from_cache, Hyper, InferenceConfig, SceneEstimate};
use crate::template::TemplateModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub hyper: Hyper,
    /// Lobe width in cells; defaults to a 64th of the map width.
    pub sigma: Option<f64>,
    pub map_size: [u32; 2],
    /// One bin per keypoint drop fraction.
    pub drop_fractions: Vec<f64>,
    /// When set, only this many objects per scene are degraded.
    pub occluded_per_scene: Option<usize>,
    pub scenes_per_bin: usize,
    pub layouts: Vec<Layout>,
    pub count_min: usize,
    pub count_max: usize,
    pub template_models: usize,
    pub gmm_scenes: usize,
    pub gmm_components: usize,
    pub max_iterations: usize,
    pub occlusion_grid: usize,
    pub occlusion_bins: Vec<f64>,
    pub thresholds: Thresholds,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hyper: Hyper::default(),
            sigma: None,
            map_size: [128, 128],
            drop_fractions: vec![0.0, 0.25, 0.5, 0.75],
            occluded_per_scene: None,
            scenes_per_bin: 10,
            layouts: Layout::ALL.to_vec(),
            count_min: 1,
            count_max: 5,
            template_models: DEFAULT_MODELS,
            gmm_scenes: 200,
            gmm_components: DEFAULT_COMPONENTS,
            max_iterations: 4,
            occlusion_grid: 32,
            occlusion_bins: DEFAULT_OCCLUSION_BINS.to_vec(),
            thresholds: Thresholds::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.drop_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidInput(
                "drop fractions must lie in [0, 1]".into(),
            ));
        }
        if self.layouts.is_empty() || self.scenes_per_bin == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "need layouts, scenes and iterations".into(),
            ));
        }
        if self.count_min == 0 || self.count_min > self.count_max {
            return Err(Error::InvalidInput("object count range is empty".into()));
        }
        if self.map_size[0] == 0 || self.map_size[1] == 0 {
            return Err(Error::InvalidInput("map size must be positive".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> Camera {
        default_camera((self.map_size[0], self.map_size[1]))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
            .unwrap_or_else(|| default_sigma(self.map_size[0]))
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            hyper: self.hyper,
            max_iterations: self.max_iterations,
            ..InferenceConfig::default()
        }
    }

    /// Arrangement for the `index`-th corpus drawn from this config.
    pub fn arrangement(&self, layout: Layout, seed: u64) -> ArrangementSpec {
        let max = if layout == Layout::RingAroundTable {
            self.count_max.min(6)
        } else {
            self.count_max
        };
        ArrangementSpec::new(layout, self.count_min.min(max), max, seed)
    }
}

/// Seeds of the independent random streams of one experiment.
fn derive_seed(base: u64, stream: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)).random()
}

const STREAM_TEMPLATE: u64 = 1;
const STREAM_GMM: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_DROP: u64 = 4;
pub(crate) const STREAM_TUNE: u64 = 5;

/// Template and mixture learned from the configured synthetic corpora.
pub struct Models {
    pub template: TemplateModel,
    pub gmm: PairwiseGmm,
}

/// Builds the template from a chair database and the mixture from a
/// ground-truth corpus of the configured layouts.
pub fn build_models(config: &ExperimentConfig) -> Result<Models> {
    let template = default_template(
        config.template_models,
        derive_seed(config.seed, STREAM_TEMPLATE),
    )?;
    let corpus = corpus(
        config,
        &template,
        config.gmm_scenes,
        derive_seed(config.seed, STREAM_GMM),
    )?;
    let placements: Vec<_> = corpus.iter().map(SceneFile::placements).collect();
    let pairs = extract_pairs(&placements, DEFAULT_DELTA_R);
    let gmm = fit_gmm(&pairs, config.gmm_components, config.seed)?;
    Ok(Models { template, gmm })
}

/// `n` scenes spread evenly over the configured layouts.
pub fn corpus(
    config: &ExperimentConfig,
    template: &TemplateModel,
    n: usize,
    seed: u64,
) -> Result<Vec<SceneFile>> {
    let camera = config.camera();
    let k = config.layouts.len();
    let mut per_layout = Vec::with_capacity(k);
    for (i, &layout) in config.layouts.iter().enumerate() {
        let count = n / k + usize::from(i < n % k);
        if count == 0 {
            per_layout.push(Vec::new());
            continue;
        }
        let spec = config.arrangement(layout, derive_seed(seed, i as u64));
        per_layout.push(generate_scenes(&spec, template, &camera, count)?);
    }
    // interleave so any prefix mixes layouts
    let mut out = Vec::with_capacity(n);
    let mut iters: Vec<_> = per_layout.into_iter().map(Vec::into_iter).collect();
    while out.len() < n {
        for it in iters.iter_mut() {
            if let Some(s) = it.next() {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Per-object drop fractions for one scene of a bin.
pub fn drop_plan(
    n_objects: usize,
    fraction: f64,
    occluded: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match occluded {
        None => vec![fraction; n_objects],
        Some(k) => {
            let mut plan = vec![0.0; n_objects];
            for i in sample(rng, n_objects, k.min(n_objects)) {
                plan[i] = fraction;
            }
            plan
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Full,
    NoPairwise,
    SingleIteration,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::Full,
        Condition::NoPairwise,
        Condition::SingleIteration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Full => "full",
            Condition::NoPairwise => "no_pairwise",
            Condition::SingleIteration => "single_iteration",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfStats {
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
}

impl PrfStats {
    fn of(values: &[Prf]) -> Self {
        let some = |f: fn(&Prf) -> Option<f64>| values.iter().filter_map(f).collect::<Vec<_>>();
        Self {
            precision: Stat::of(&some(|p| p.precision)),
            recall: Stat::of(&some(|p| p.recall)),
            f1: Stat::of(&values.iter().map(|p| p.f1).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    pub iou3d: PrfStats,
    pub iou2d: PrfStats,
    pub loc: PrfStats,
    pub locang: PrfStats,
    pub angdiff_degrees: Stat,
}

impl MeasureStats {
    pub fn of(reports: &[MeasureReport]) -> Self {
        let pick = |f: fn(&MeasureReport) -> Prf| reports.iter().map(f).collect::<Vec<_>>();
        Self {
            iou3d: PrfStats::of(&pick(|r| r.iou3d)),
            iou2d: PrfStats::of(&pick(|r| r.iou2d)),
            loc: PrfStats::of(&pick(|r| r.loc)),
            locang: PrfStats::of(&pick(|r| r.locang)),
            angdiff_degrees: Stat::of(
                &reports
                    .iter()
                    .filter_map(|r| r.angdiff_degrees)
                    .collect::<Vec<_>>(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    /// Measures pooled over all objects of the bin.
    pub pooled: MeasureReport,
    /// Mean and standard deviation of per-scene measures.
    pub per_scene: MeasureStats,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub drop_fraction: f64,
    pub scenes: usize,
    pub objects: usize,
    pub mean_occlusion: f64,
    pub occlusion_histogram: Vec<usize>,
    pub conditions: Vec<ConditionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub template_modes: usize,
    pub gmm_components: usize,
    pub bins: Vec<BinReport>,
}

impl ExperimentReport {
    pub fn condition(&self, bin: usize, condition: Condition) -> &ConditionReport {
        self.bins[bin]
            .conditions
            .iter()
            .find(|c| c.condition == condition)
            .expect("every bin reports every condition")
    }

    /// One row per bin, condition and measure.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "drop_fraction,condition,measure,precision,recall,f1,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n",
        );
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for bin in &self.bins {
            for c in &bin.conditions {
                let rows = [
                    ("iou3d", c.pooled.iou3d, c.per_scene.iou3d),
                    ("iou2d", c.pooled.iou2d, c.per_scene.iou2d),
                    ("loc", c.pooled.loc, c.per_scene.loc),
                    ("locang", c.pooled.locang, c.per_scene.locang),
                ];
                for (name, p, st) in rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                        bin.drop_fraction,
                        c.condition.name(),
                        name,
                        fmt(p.precision),
                        fmt(p.recall),
                        p.f1,
                        fmt(st.precision.mean),
                        fmt(st.precision.std),
                        fmt(st.recall.mean),
                        fmt(st.recall.std),
                        fmt(st.f1.mean),
                        fmt(st.f1.std),
                    ));
                }
                s.push_str(&format!(
                    "{},{},angdiff,,,,{},{},,,,\n",
                    bin.drop_fraction,
                    c.condition.name(),
                    fmt(c.pooled.angdiff_degrees),
                    fmt(c.per_scene.angdiff_degrees.std),
                ));
            }
        }
        s
    }
}

/// Inference results of one scene under every condition.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub ground_truth: SceneFile,
    pub results: Vec<(Condition, SceneEstimate)>,
}

impl SceneRun {
    pub fn eval_pair(&self, condition: Condition) -> (EvalScene, EvalScene) {
        let est = &self
            .results
            .iter()
            .find(|(c, _)| *c == condition)
            .expect("condition ran")
            .1;
        let result = SceneFile::from_estimate(est, &self.ground_truth.camera).to_eval();
        (result, self.ground_truth.to_eval())
    }
}

/// Runs one scene under all ablation conditions.
///
/// Pair fits are shared, and the single-iteration result is the first
/// round of the full run, which is exactly what a run capped at one
/// iteration computes.
pub fn run_scene(
    maps: &crate::keypoint_maps::KeypointMapStack,
    ground_truth: &SceneFile,
    models: &Models,
    inference: &InferenceConfig,
) -> Result<SceneRun> {
    let camera = &ground_truth.camera;
    let cache = fit_candidates(maps, camera, &models.template, inference)?;
    let full = infer_from_cache(
        &cache,
        maps,
        camera,
        &models.template,
        Some(&models.gmm),
        inference,
    )?;
    let no_pairwise = infer_from_cache(
        &cache,
        maps,
        camera,
        &models.template,
        None,
        &inference.without_pairwise(),
    )?;
    let single = full.truncated(1);
    Ok(SceneRun {
        ground_truth: ground_truth.clone(),
        results: vec![
            (Condition::Full, full),
            (Condition::NoPairwise, no_pairwise),
            (Condition::SingleIteration, single),
        ],
    })
}

/// Full experiment, returning the report and every scene run per bin.
pub fn run_experiment_detailed(
    config: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<Vec<SceneRun>>)> {
    config.validate()?;
    let models = build_models(config)?;
    let inference = config.inference();
    let sigma = config.sigma();
    let th = config.thresholds;
    let mut bins = Vec::new();
    let mut runs = Vec::new();
    for (b, &fraction) in config.drop_fractions.iter().enumerate() {
        let scenes = corpus(
            config,
            &models.template,
            config.scenes_per_bin,
            derive_seed(config.seed, STREAM_TEST + 16 * b as u64),
        )?;
        let mut drop_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_DROP + 16 * b as u64));
        let mut bin_runs = Vec::with_capacity(scenes.len());
        let mut occlusion = Vec::new();
        for gt in &scenes {
            let plan = drop_plan(
                gt.objects.len(),
                fraction,
                config.occluded_per_scene,
                &mut drop_rng,
            );
            let maps = render_scene(gt, &models.template, sigma, &plan, drop_rng.random())?;
            occlusion.extend(
                occlusion_score(&gt.to_eval(), config.occlusion_grid, &config.occlusion_bins)
                    .per_object,
            );
            bin_runs.push(run_scene(&maps, gt, &models, &inference)?);
        }
        let conditions = Condition::ALL
            .iter()
            .map(|&cond| {
                let mut total = Tally::default();
                let mut reports = Vec::new();
                let mut iterations = 0.0;
                for run in &bin_runs {
                    let (r, g) = run.eval_pair(cond);
                    let t = Tally::of(&r, &g, &th);
                    total.merge(&t);
                    reports.push(t.report(&th));
                    iterations += run
                        .results
                        .iter()
                        .find(|(c, _)| *c == cond)
                        .unwrap()
                        .1
                        .iterations_used as f64;
                }
                ConditionReport {
                    condition: cond,
                    pooled: total.report(&th),
                    per_scene: MeasureStats::of(&reports),
                    mean_iterations: iterations / bin_runs.len() as f64,
                }
            })
            .collect();
        bins.push(BinReport {
            drop_fraction: fraction,
            scenes: scenes.len(),
            objects: scenes.iter().map(|s| s.objects.len()).sum(),
            mean_occlusion: if occlusion.is_empty() {
                0.0
            } else {
                occlusion.iter().sum::<f64>() / occlusion.len() as f64
            },
            occlusion_histogram: crate::metrics::histogram(&occlusion, &config.occlusion_bins),
            conditions,
        });
        runs.push(bin_runs);
    }
    let report = ExperimentReport {
        config: config.clone(),
        template_modes: models.template.modes(),
        gmm_components: models.gmm.components().len(),
        bins,
    };
    Ok((report, runs))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_detailed(config).map(|(r, _)| r)
}

//! Runs one attack configuration over a set of labeled clouds and collects
//! per-sample records and their aggregates.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use pointattack::cloud::write_xyz;
use pointattack::{
    run_subattack, run_waattack, sor_filter, AttackConfig64, AttackResult64, Classifier64, DenominatorNorm,
    PartitionStrategy, SorConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::{HarnessError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Waattack,
    Subattack,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Waattack => "waattack",
            Method::Subattack => "subattack",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "waattack" => Ok(Method::Waattack),
            "subattack" => Ok(Method::Subattack),
            _ => Err(HarnessError::usage(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Defense {
    None,
    Sor,
}

impl FromStr for Defense {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Defense::None),
            "sor" => Ok(Defense::Sor),
            _ => Err(HarnessError::usage(format!("unknown defense `{s}`"))),
        }
    }
}

/// Everything that determines an experiment's records, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub epsilon: f64,
    pub eta: f64,
    pub t_max: usize,
    pub kappa: f64,
    pub xi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub weight_denominator: String,
    pub weighting: bool,
    pub adaptive_step: bool,
    pub early_stop: bool,
    pub k: usize,
    pub lambda: f64,
    pub partition: String,
    pub hash_grid: f64,
    pub metric_weights: [f64; 3],
    pub defense: Defense,
    pub sor_k: usize,
    pub sor_sigma_mult: f64,
    /// Attack at most this many originally-correct samples.
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_attack(Method::Waattack, &AttackConfig64::default())
    }
}

impl ExperimentConfig {
    pub fn from_attack(method: Method, a: &AttackConfig64) -> Self {
        let sor = SorConfig::default();
        Self {
            method,
            epsilon: a.epsilon,
            eta: a.eta0,
            t_max: a.t_max,
            kappa: a.kappa,
            xi: a.xi,
            alpha: a.alpha,
            beta: a.beta,
            c: a.c,
            weight_denominator: a.weight_denominator.name().into(),
            weighting: a.enable_weighting,
            adaptive_step: a.enable_adaptive_step,
            early_stop: a.early_stop,
            k: a.k,
            lambda: a.lambda,
            partition: a.partition.name().into(),
            hash_grid: a.hash_grid,
            metric_weights: [a.metric_weights.chamfer, a.metric_weights.hausdorff, a.metric_weights.l2],
            defense: Defense::None,
            sor_k: sor.k_neighbors,
            sor_sigma_mult: sor.sigma_mult,
            limit: None,
            seed: 0,
        }
    }

    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// Attack parameters for one sample. The baseline method forces
    /// weighting and step adaptation off.
    pub fn attack_config(&self, sample_seed: u64) -> Result<AttackConfig64> {
        let mut a = AttackConfig64 {
            epsilon: self.epsilon,
            eta0: self.eta,
            t_max: self.t_max,
            kappa: self.kappa,
            xi: self.xi,
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
            weight_denominator: self.weight_denominator.parse::<DenominatorNorm>()?,
            enable_weighting: self.weighting,
            enable_adaptive_step: self.adaptive_step,
            early_stop: self.early_stop,
            k: self.k,
            lambda: self.lambda,
            partition: self.partition.parse::<PartitionStrategy>()?,
            hash_grid: self.hash_grid,
            seed: sample_seed,
            ..AttackConfig64::default()
        };
        a.metric_weights.chamfer = self.metric_weights[0];
        a.metric_weights.hausdorff = self.metric_weights[1];
        a.metric_weights.l2 = self.metric_weights[2];
        if self.method == Method::Baseline {
            a.enable_weighting = false;
            a.enable_adaptive_step = false;
        }
        a.validate()?;
        Ok(a)
    }

    pub fn sor_config(&self) -> SorConfig {
        SorConfig {
            k_neighbors: self.sor_k,
            sigma_mult: self.sor_sigma_mult,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub next_loss: f64,
    pub eta: f64,
    pub rho: Option<f64>,
    pub candidates_scored: usize,
    pub points_moved: usize,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: usize,
    /// Prediction on the clean cloud.
    pub predicted: usize,
    pub attacked: bool,
    /// Prediction on the adversarial cloud (after the defense, if any).
    pub adversarial_class: Option<usize>,
    pub success: bool,
    pub iterations: Option<usize>,
    /// Iteration count at the first misclassification, before any defense.
    pub success_iteration: Option<usize>,
    pub wall_time: Option<f64>,
    pub d_c: Option<f64>,
    pub d_h: Option<f64>,
    pub d_l: Option<f64>,
    pub d_composite: Option<f64>,
    pub final_step: Option<f64>,
    /// Points left after the defense.
    pub points_kept: Option<usize>,
    #[serde(default)]
    pub trace: Vec<TraceRow>,
}

/// Aggregates over the records. ASR counts successes among attacked
/// (originally-correct) samples; distortions and iterations average over
/// successes; A.T averages over attacked samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub attacked: usize,
    pub successes: usize,
    pub asr_percent: f64,
    pub mean_d_c: f64,
    pub mean_d_h: f64,
    pub mean_d_l: f64,
    pub mean_iterations: f64,
    pub mean_wall_time: f64,
    pub max_linf: f64,
}

impl Aggregates {
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let attacked: Vec<&SampleRecord> = records.iter().filter(|r| r.attacked).collect();
        let successes: Vec<&SampleRecord> = attacked.iter().copied().filter(|r| r.success).collect();
        let mean = |rs: &[&SampleRecord], f: &dyn Fn(&SampleRecord) -> Option<f64>| {
            if rs.is_empty() {
                0.0
            } else {
                rs.iter().map(|r| f(r).unwrap_or(0.0)).sum::<f64>() / rs.len() as f64
            }
        };
        let max_linf = attacked
            .iter()
            .flat_map(|r| r.trace.iter())
            .map(|t| t.linf)
            .fold(0.0, f64::max);
        Self {
            samples: records.len(),
            attacked: attacked.len(),
            successes: successes.len(),
            asr_percent: if attacked.is_empty() {
                0.0
            } else {
                100.0 * successes.len() as f64 / attacked.len() as f64
            },
            mean_d_c: mean(&successes, &|r| r.d_c),
            mean_d_h: mean(&successes, &|r| r.d_h),
            mean_d_l: mean(&successes, &|r| r.d_l),
            mean_iterations: mean(&successes, &|r| r.success_iteration.map(|i| i as f64)),
            mean_wall_time: mean(&attacked, &|r| r.wall_time),
            max_linf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Sorted by sample id.
    pub records: Vec<SampleRecord>,
    pub aggregates: Aggregates,
}

impl ExperimentReport {
    /// Copy with every wall-time field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for rec in &mut r.records {
            if rec.wall_time.is_some() {
                rec.wall_time = Some(0.0);
            }
        }
        r.aggregates.mean_wall_time = 0.0;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| HarnessError::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        write_records_csv(file, &self.records)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    schema_version: u32,
    sample_id: &'a str,
    label: usize,
    predicted: usize,
    attacked: bool,
    adversarial_class: Option<usize>,
    success: bool,
    iterations: Option<usize>,
    success_iteration: Option<usize>,
    wall_time: Option<f64>,
    d_c: Option<f64>,
    d_h: Option<f64>,
    d_l: Option<f64>,
    d_composite: Option<f64>,
    final_step: Option<f64>,
    points_kept: Option<usize>,
    max_candidates_scored: usize,
}

/// Flat per-sample table; traces are omitted.
pub fn write_records_csv<W: Write>(out: W, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            schema_version: REPORT_SCHEMA_VERSION,
            sample_id: &r.sample_id,
            label: r.label,
            predicted: r.predicted,
            attacked: r.attacked,
            adversarial_class: r.adversarial_class,
            success: r.success,
            iterations: r.iterations,
            success_iteration: r.success_iteration,
            wall_time: r.wall_time,
            d_c: r.d_c,
            d_h: r.d_h,
            d_l: r.d_l,
            d_composite: r.d_composite,
            final_step: r.final_step,
            points_kept: r.points_kept,
            max_candidates_scored: r.trace.iter().map(|t| t.candidates_scored).max().unwrap_or(0),
        })?;
    }
    w.flush().map_err(|e| HarnessError::Serialize(e.to_string()))?;
    Ok(())
}

/// Order in which samples are visited and the partition seed of each,
/// both drawn from the experiment seed.
fn visit_plan(n: usize, seed: u64) -> Vec<(usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.into_iter().map(|i| (i, seeds[i])).collect()
}

/// Attacks the samples in a seeded random order until `limit`
/// originally-correct samples have been attacked. Misclassified clean
/// samples are recorded but not attacked. With `save_adv`, each adversarial
/// cloud is written as `<sample_id>.xyz` into that directory.
pub fn run_experiment(
    model: &Classifier64,
    samples: &[Sample],
    config: &ExperimentConfig,
    save_adv: Option<&Path>,
) -> Result<ExperimentReport> {
    config.attack_config(0)?;
    if let Some(dir) = save_adv {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let sor = config.sor_config();
    let limit = config.limit.unwrap_or(usize::MAX);
    let mut records = Vec::new();
    let mut attacked = 0;
    for (index, sample_seed) in visit_plan(samples.len(), config.seed) {
        if attacked >= limit {
            break;
        }
        let sample = &samples[index];
        let label = sample.entry.label;
        let predicted = model.predict(&sample.cloud);
        let mut record = SampleRecord {
            sample_id: sample.entry.sample_id(),
            label,
            predicted,
            attacked: false,
            adversarial_class: None,
            success: false,
            iterations: None,
            success_iteration: None,
            wall_time: None,
            d_c: None,
            d_h: None,
            d_l: None,
            d_composite: None,
            final_step: None,
            points_kept: None,
            trace: Vec::new(),
        };
        if predicted != label {
            records.push(record);
            continue;
        }
        attacked += 1;
        let attack = config.attack_config(sample_seed)?;
        let cloud = sample.cloud.clone().with_label(Some(label));
        let start = Instant::now();
        let result: AttackResult64 = match config.method {
            Method::Subattack => run_subattack(model, &cloud, &attack)?,
            Method::Baseline | Method::Waattack => run_waattack(model, &cloud, &attack)?,
        };
        let wall_time = start.elapsed().as_secs_f64();

        let (adversarial_class, points_kept) = match config.defense {
            Defense::None => (result.predicted, None),
            Defense::Sor => {
                let filtered = sor_filter(&result.adversarial, &sor)?;
                (model.predict(&filtered), Some(filtered.len()))
            }
        };
        if let Some(dir) = save_adv {
            write_xyz(&result.adversarial, dir.join(format!("{}.xyz", record.sample_id)))?;
        }
        let d = &result.distortion;
        record.attacked = true;
        record.adversarial_class = Some(adversarial_class);
        record.success = adversarial_class != label;
        record.iterations = Some(result.iterations_used);
        record.success_iteration = result.success_iteration;
        record.wall_time = Some(wall_time);
        record.d_c = Some(d.d_c);
        record.d_h = Some(d.d_h);
        record.d_l = Some(d.d_l);
        record.d_composite = Some(d.d_composite);
        record.final_step = Some(result.final_step);
        record.points_kept = points_kept;
        record.trace = result
            .trace
            .iter()
            .map(|t| TraceRow {
                iteration: t.iteration,
                loss: t.loss,
                next_loss: t.next_loss,
                eta: t.eta,
                rho: t.rho,
                candidates_scored: t.candidates_scored,
                points_moved: t.points_moved,
                linf: t.linf,
            })
            .collect();
        records.push(record);
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let aggregates = Aggregates::from_records(&records);
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: config.seed,
        config: config.clone(),
        records,
        aggregates,
    })
}

/// Human-readable summary lines.
pub fn summary_table(rows: &[(String, &Aggregates)]) -> String {
    let mut out = format!(
        "{:<16} {:>8} {:>8} {:>11} {:>11} {:>9} {:>7} {:>10}\n",
        "run", "attacked", "ASR %", "D_c", "D_h", "D_l", "iters", "A.T (s)"
    );
    for (name, a) in rows {
        out.push_str(&format!(
            "{:<16} {:>8} {:>8.2} {:>11.4e} {:>11.4e} {:>9.4} {:>7.2} {:>10.4}\n",
            name, a.attacked, a.asr_percent, a.mean_d_c, a.mean_d_h, a.mean_d_l, a.mean_iterations, a.mean_wall_time
        ));
    }
    out
}

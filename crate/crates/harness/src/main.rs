use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pointattack::classifier::{load_model, save_model, train};
use pointattack::{Classifier64, TrainConfig};
use pointattack_harness::dataset::{self, load_split, DatasetSpec, Split};
use pointattack_harness::experiment::summary_table;
use pointattack_harness::{
    run_experiment, run_sweep, Defense, ExperimentConfig, HarnessError, Method, Result, SweepParam,
};

#[derive(Parser)]
#[command(name = "pointattack", version, about = "Adversarial attacks on point-cloud classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 360)]
        per_class: usize,
        #[arg(long, default_value_t = 256)]
        n_points: usize,
        /// Fraction of each class put in the test split.
        #[arg(long, default_value_t = 1.0 / 6.0)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the classifier on a dataset's train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attack the test split and write a report.
    Attack {
        #[command(flatten)]
        io: RunIo,
        #[command(flatten)]
        flags: AttackFlags,
        /// Directory for the adversarial clouds.
        #[arg(long)]
        save_adv: Option<PathBuf>,
    },
    /// Repeat the attack for each value of one parameter.
    Sweep {
        #[command(flatten)]
        io: RunIo,
        #[command(flatten)]
        flags: AttackFlags,
        /// One of alpha, beta, c, lambda, eta, k, weight-denominator.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct RunIo {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON report output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AttackFlags {
    #[arg(long, default_value = "waattack")]
    method: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    partition: Option<String>,
    #[arg(long, default_value_t = 1.6)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    #[arg(long, default_value_t = 0.007)]
    eta: f64,
    #[arg(long, default_value_t = 0.16)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    t_max: usize,
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    #[arg(long, default_value = "linf")]
    weight_denominator: String,
    #[arg(long)]
    no_weighting: bool,
    #[arg(long)]
    no_adaptive_step: bool,
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long, default_value = "none")]
    defense: String,
    /// Attack at most this many correctly classified samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AttackFlags {
    fn config(&self) -> Result<ExperimentConfig> {
        let method: Method = self.method.parse()?;
        if method != Method::Subattack {
            for (set, flag) in [
                (self.k.is_some(), "--k"),
                (self.lambda.is_some(), "--lambda"),
                (self.partition.is_some(), "--partition"),
            ] {
                if set {
                    return Err(HarnessError::usage(format!("{flag} requires --method subattack")));
                }
            }
        }
        let mut c = ExperimentConfig::with_method(method);
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(l) = self.lambda {
            c.lambda = l;
        }
        if let Some(p) = &self.partition {
            c.partition = p.clone();
        }
        c.alpha = self.alpha;
        c.beta = self.beta;
        c.c = self.c;
        c.eta = self.eta;
        c.epsilon = self.epsilon;
        c.t_max = self.t_max;
        c.kappa = self.kappa;
        c.weight_denominator = self.weight_denominator.clone();
        c.weighting = !self.no_weighting;
        c.adaptive_step = !self.no_adaptive_step;
        c.early_stop = !self.no_early_stop;
        c.defense = self.defense.parse::<Defense>()?;
        c.limit = self.limit;
        c.seed = self.seed;
        c.attack_config(0)?;
        Ok(c)
    }
}

fn load_inputs(io: &RunIo) -> Result<(Classifier64, Vec<dataset::Sample>)> {
    let model: Classifier64 = load_model(&io.model)?;
    let test = load_split(&io.data, Split::Test)?;
    Ok((model, test))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            per_class,
            n_points,
            test_fraction,
            seed,
        } => {
            let spec = DatasetSpec {
                per_class,
                n_points,
                test_fraction,
                seed,
            };
            let entries = dataset::write_dataset(&out, &spec)?;
            let test = entries.iter().filter(|e| e.split == Split::Test).count();
            println!(
                "wrote {} clouds ({} train, {test} test) to {}",
                entries.len(),
                entries.len() - test,
                out.display()
            );
        }
        Command::Train {
            data,
            model_out,
            epochs,
            batch_size,
            lr,
            seed,
        } => {
            let config = TrainConfig {
                epochs,
                batch_size,
                learning_rate: lr,
                ..TrainConfig::default()
            };
            let clouds = |split| -> Result<Vec<_>> {
                Ok(load_split(&data, split)?.into_iter().map(|s| s.cloud).collect())
            };
            let (train_set, test_set) = (clouds(Split::Train)?, clouds(Split::Test)?);
            let report = train(&train_set, &test_set, &config, seed)?;
            save_model(&report.model, &model_out)?;
            println!("train accuracy: {:.4}", report.train_accuracy);
            println!("held-out accuracy: {:.4}", report.test_accuracy);
        }
        Command::Attack { io, flags, save_adv } => {
            let config = flags.config()?;
            let (model, test) = load_inputs(&io)?;
            let report = run_experiment(&model, &test, &config, save_adv.as_deref())?;
            if let Some(p) = &io.out {
                report.write_json(p)?;
            }
            if let Some(p) = &io.csv {
                report.write_csv(p)?;
            }
            print!("{}", summary_table(&[(config.method.to_string(), &report.aggregates)]));
        }
        Command::Sweep {
            io,
            flags,
            param,
            values,
        } => {
            let param: SweepParam = param.parse()?;
            let base = flags.config()?;
            if values.is_empty() {
                return Err(HarnessError::usage("--values needs at least one value"));
            }
            let (model, test) = load_inputs(&io)?;
            let report = run_sweep(&model, &test, &base, param, &values)?;
            if let Some(p) = &io.out {
                write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
            }
            if let Some(p) = &io.csv {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["schema_version", "parameter", "value", "attacked", "asr_percent", "mean_d_c", "mean_d_h", "mean_d_l", "mean_iterations", "mean_wall_time"])?;
                for e in &report.entries {
                    let a = &e.report.aggregates;
                    w.write_record([
                        report.schema_version.to_string(),
                        param.name().to_string(),
                        e.value.clone(),
                        a.attacked.to_string(),
                        a.asr_percent.to_string(),
                        a.mean_d_c.to_string(),
                        a.mean_d_h.to_string(),
                        a.mean_d_l.to_string(),
                        a.mean_iterations.to_string(),
                        a.mean_wall_time.to_string(),
                    ])?;
                }
                let bytes = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
                fs::write(p, bytes).map_err(|e| HarnessError::io(p, e))?;
            }
            let rows: Vec<(String, &_)> = report
                .entries
                .iter()
                .map(|e| (format!("{}={}", param.name(), e.value), &e.report.aggregates))
                .collect();
            print!("{}", summary_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

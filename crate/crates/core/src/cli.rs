//! Command-line surface: `synth`, `train`, `attack`, `bench` and `figure1`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
//! Every source of randomness is derived from the `--seed` flag.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::attacks::{AttackConfig, AttackResult};
use crate::bench::{emit_table_markdown, evaluate_attack, run_method, write_table_csv, Method};
use crate::data::{
    gen_synthetic_2d, pick_targets, read_dataset, write_dataset, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::nn::{train_classifier, MlpModel, TrainConfig};
use crate::plot::{write_svg_scatter, write_trajectory_csv, Trajectory2D};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Parser)]
#[command(
    name = "advgrad",
    version,
    about = "Targeted L2 adversarial attacks with a training and benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic 2D dataset and save both splits
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        train_per_class: usize,
        #[arg(long, default_value_t = 200)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0.4)]
        margin: f64,
    },
    /// Train an MLP classifier on a dataset file and save the weights
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hidden layer sizes, comma separated
        #[arg(long, value_delimiter = ',', default_value = "16,16")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Attack one example from a dataset's test split
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Index into the test split
        #[arg(long)]
        index: usize,
        /// Target class; picked at random (never the true label) when absent
        #[arg(long)]
        target: Option<usize>,
        /// Our<k>, CW<k>, L-BFGS<k> or I-FGSM
        #[arg(long, default_value = "Our1")]
        method: String,
        #[arg(long, default_value_t = 0.0)]
        kappa: f64,
        /// Overrides the c-steps suffix of --method
        #[arg(long)]
        c_steps: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write the committed iterates as CSV (2D data only)
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run a method grid over a dataset slice and emit the benchmark table
    Bench {
        /// Weight file; trained in-process from --seed when absent
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset file; synthesized from --seed when absent
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "Our1,CW1,CW3")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25")]
        kappas: Vec<f64>,
        /// Number of test examples to attack
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// CSV output path; the table prints to stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// End-to-end 2D reproduction: synthesize, train, attack one point with
    /// the gradient-guided method and CW, render the scatter figure
    Figure1 {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `argv` and run. Returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e @ Error::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            seed,
            out,
            train_per_class,
            test_per_class,
            margin,
        } => {
            let (train, test) = gen_synthetic_2d(seed, train_per_class, test_per_class, margin)?;
            write_dataset(&train, &test, &out)?;
            println!(
                "wrote {} train + {} test examples to {}",
                train.len(),
                test.len(),
                out.display()
            );
            Ok(())
        }

        Command::Train {
            data,
            out,
            hidden,
            epochs,
            batch_size,
            lr,
            seed,
        } => {
            let (train, test) = read_dataset(&data)?;
            let mut dims = vec![train.dim()];
            dims.extend(&hidden);
            dims.push(train.num_classes);
            let mut root = SeededRng::new(seed);
            let mut init_rng = root.fork(1);
            let model = MlpModel::random(&dims, &mut init_rng)?;
            let cfg = TrainConfig {
                epochs,
                batch_size,
                learning_rate: lr,
                seed: root.next_u64(),
            };
            let model = train_classifier(model, &train, &cfg)?;
            let train_acc = model.accuracy(&train)?;
            let test_acc = model.accuracy(&test)?;
            model.save_weights(&out)?;
            println!("train accuracy {train_acc:.4}, test accuracy {test_acc:.4}");
            println!("wrote weights to {}", out.display());
            Ok(())
        }

        Command::Attack {
            model,
            data,
            index,
            target,
            method,
            kappa,
            c_steps,
            seed,
            trajectory,
        } => {
            let model = MlpModel::load_weights(&model)?;
            let (_, test) = read_dataset(&data)?;
            if index >= test.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {index} out of range for {} test examples",
                    test.len()
                )));
            }
            let x = &test.examples[index];
            let label = test.labels[index];
            let target = match target {
                Some(t) if t < test.num_classes => t,
                Some(t) => {
                    return Err(Error::InvalidArgument(format!(
                        "target {t} out of range for {} classes",
                        test.num_classes
                    )))
                }
                None => {
                    let mut rng = SeededRng::new(seed);
                    pick_targets(&[label], test.num_classes, &mut rng)[0]
                }
            };
            let mut method = Method::parse(&method)?;
            if let Some(k) = c_steps {
                method = match method {
                    Method::GradGuided { .. } => Method::GradGuided { c_steps: k },
                    Method::Cw { .. } => Method::Cw { c_steps: k },
                    Method::Lbfgs { .. } => Method::Lbfgs { c_steps: k },
                    Method::Ifgsm => Method::Ifgsm,
                };
            }
            let cfg = AttackConfig {
                kappa,
                record_trajectory: trajectory.is_some(),
                ..AttackConfig::for_bounds(test.feature_lo, test.feature_hi)
            };
            let result = run_method(&model, x, target, &cfg, method)?;
            println!(
                "example {index} (label {label}) -> target {target} with {method}: \
                 success={} l2_distance={:.6} iterations={} c_used={}",
                result.success, result.l2_distance, result.iterations, result.c_used
            );
            if let Some(failure) = &result.failure {
                println!("failure: {failure:?}");
            }
            if let Some(path) = trajectory {
                let traj = Trajectory2D::from_attack(&result, method.to_string())?;
                write_trajectory_csv(&traj, &path)?;
                println!("wrote trajectory to {}", path.display());
            }
            Ok(())
        }

        Command::Bench {
            model,
            data,
            methods,
            kappas,
            n,
            seed,
            out,
        } => {
            let methods = methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<Result<Vec<_>>>()?;
            let (model, test) = load_or_make_model_and_data(model, data, seed)?;
            let slice = test.truncated(n);
            let mut rng = SeededRng::new(seed).fork(2);
            let targets = pick_targets(&slice.labels, slice.num_classes, &mut rng);
            let cfg = AttackConfig::for_bounds(slice.feature_lo, slice.feature_hi);

            let mut rows = Vec::new();
            let mut attacked = 0;
            let mut excluded = 0;
            for method in methods {
                let report = evaluate_attack(&model, &slice, &targets, method, &cfg, &kappas)?;
                attacked = report.attacked;
                excluded = report.excluded;
                rows.extend(report.rows);
            }
            eprintln!(
                "attacked {attacked} correctly-classified examples ({excluded} misclassified excluded)"
            );
            match out {
                Some(path) => {
                    write_table_csv(&rows, &path)?;
                    println!("{}", emit_table_markdown(&rows)?);
                    println!("wrote CSV to {}", path.display());
                }
                None => print!("{}", crate::bench::emit_table_csv(&rows)?),
            }
            Ok(())
        }

        Command::Figure1 { seed, out } => {
            let outcome = figure1_pipeline(seed)?;
            write_svg_scatter(
                &outcome.train,
                (outcome.attacked.data()[0], outcome.attacked.data()[1]),
                &outcome.trajectories,
                ((0.0, 10.0), (10.0, 0.0)),
                &out,
            )?;
            println!(
                "train accuracy {:.4}, test accuracy {:.4}",
                outcome.train_accuracy, outcome.test_accuracy
            );
            println!(
                "attacked test point {:?} (label {}) toward {}",
                outcome.attacked.data(),
                outcome.label,
                outcome.target
            );
            println!(
                "Our1: success={} l2={:.4} steps={} | CW6: success={} l2={:.4} steps={}",
                outcome.ours.success,
                outcome.ours.l2_distance,
                outcome.ours.iterations,
                outcome.cw.success,
                outcome.cw.l2_distance,
                outcome.cw.iterations
            );
            println!("wrote figure to {}", out.display());
            Ok(())
        }
    }
}

fn load_or_make_model_and_data(
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    seed: u64,
) -> Result<(MlpModel, LabeledDataset)> {
    let (train, test) = match data {
        Some(path) => read_dataset(&path)?,
        None => {
            eprintln!("no --data given; synthesizing the 2D dataset from seed {seed}");
            gen_synthetic_2d(seed, 1000, 200, 0.4)?
        }
    };
    let model = match model {
        Some(path) => MlpModel::load_weights(&path)?,
        None => {
            eprintln!("no --model given; training a 2-16-16-2 MLP from seed {seed}");
            let mut root = SeededRng::new(seed);
            let mut init_rng = root.fork(1);
            let dims = vec![train.dim(), 16, 16, train.num_classes];
            let model = MlpModel::random(&dims, &mut init_rng)?;
            let cfg = TrainConfig {
                seed: root.next_u64(),
                ..TrainConfig::default()
            };
            train_classifier(model, &train, &cfg)?
        }
    };
    Ok((model, test))
}

/// Everything the `figure1` subcommand produces, exposed for tests and
/// programmatic use.
pub struct Figure1Outcome {
    pub model: MlpModel,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub attacked_index: usize,
    pub attacked: Tensor,
    pub label: usize,
    pub target: usize,
    pub ours: AttackResult,
    pub cw: AttackResult,
    pub trajectories: Vec<Trajectory2D>,
}

/// The end-to-end 2D experiment: synthesize the dataset, train 2-16-16-2 to
/// convergence, pick a random correctly-classified test point, attack it with
/// the gradient-guided method and CW6 (both recording trajectories).
pub fn figure1_pipeline(seed: u64) -> Result<Figure1Outcome> {
    let (train, test) = gen_synthetic_2d(seed, 1000, 200, 0.4)?;
    let mut root = SeededRng::new(seed);
    let mut init_rng = root.fork(1);
    let model = MlpModel::random(&[2, 16, 16, 2], &mut init_rng)?;
    let cfg = TrainConfig {
        seed: root.next_u64(),
        ..TrainConfig::default()
    };
    let model = train_classifier(model, &train, &cfg)?;
    let train_accuracy = model.accuracy(&train)?;
    let test_accuracy = model.accuracy(&test)?;

    let mut pick_rng = root.fork(2);
    let mut correct = Vec::new();
    for i in 0..test.len() {
        if model.classify(&test.examples[i])? == test.labels[i] {
            correct.push(i);
        }
    }
    if correct.is_empty() {
        return Err(Error::EmptyDataset(
            "model classifies no test point correctly".into(),
        ));
    }
    let attacked_index = correct[pick_rng.below(correct.len())];
    let attacked = test.examples[attacked_index].clone();
    let label = test.labels[attacked_index];
    let target = pick_targets(&[label], test.num_classes, &mut pick_rng)[0];

    let attack_cfg = AttackConfig {
        record_trajectory: true,
        ..AttackConfig::for_bounds(test.feature_lo, test.feature_hi)
    };
    let ours = run_method(
        &model,
        &attacked,
        target,
        &attack_cfg,
        Method::GradGuided { c_steps: 1 },
    )?;
    let cw = run_method(&model, &attacked, target, &attack_cfg, Method::Cw { c_steps: 6 })?;
    let trajectories = vec![
        Trajectory2D::from_attack(&ours, "Our1")?,
        Trajectory2D::from_attack(&cw, "CW6")?,
    ];

    Ok(Figure1Outcome {
        model,
        train,
        test,
        train_accuracy,
        test_accuracy,
        attacked_index,
        attacked,
        label,
        target,
        ours,
        cw,
        trajectories,
    })
}

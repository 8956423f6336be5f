use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tgocr::checkpoint::{load_checkpoint, read_checkpoint};
use tgocr::data::{load_dataset, load_image, SplitRule};
use tgocr::gradcheck::{gradcheck_suite, GradcheckConfig};
use tgocr::model::{build, MLP_PARAMS, MLP_PARAMS_PUBLISHED};
use tgocr::optim::AdadeltaConfig;
use tgocr::plot::plot_metrics;
use tgocr::train::{argmax, evaluate, train, TrainConfig};
use tgocr::{Architecture, Error, Result, SequentialModel};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        })?
    };
}

#[derive(Parser)]
#[command(name = "tgocr", version, about = "Handwritten Arabic-Indic digit recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Report accuracy and the confusion matrix of a checkpoint.
    Eval(EvalArgs),
    /// Classify one 32×32 24-bit bitmap.
    Predict(PredictArgs),
    /// Print the layer table and parameter total.
    Inspect(InspectArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Render a metrics CSV as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Mlp,
    Cnn,
}

impl From<ModelKind> for Architecture {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Mlp => Architecture::Mlp,
            ModelKind::Cnn => Architecture::Cnn,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root: class subdirectories `0`..`9`, or flat `<digit>_*.bmp` files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelKind,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Checkpoint path [default: <model>.ckpt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics CSV path [default: <model>-metrics.csv]
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Also checkpoint every K epochs (0: only at the end).
    #[arg(long, default_value_t = 50)]
    checkpoint_every: usize,
    /// Continue from the checkpoint at --out, appending to --metrics.
    #[arg(long)]
    resume: bool,
    /// Write 0 in the `seconds` column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Shuffle each class with this seed before splitting, instead of
    /// splitting in file-name order.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Test,
    Train,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Must match the value used for training.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectArgs {
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random configurations per layer kind.
    #[arg(long, default_value_t = 50)]
    configs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn split_rule(seed: Option<u64>) -> SplitRule {
    seed.map_or(SplitRule::Lexicographic, SplitRule::Shuffled)
}

fn cmd_train(a: TrainArgs) -> Result<bool> {
    let arch = Architecture::from(a.model);
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("{arch}.ckpt")));
    let metrics = a
        .metrics
        .unwrap_or_else(|| PathBuf::from(format!("{arch}-metrics.csv")));
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        adadelta: AdadeltaConfig {
            learning_rate: a.lr,
            rho: a.rho,
            epsilon: a.eps,
        },
        metrics_path: Some(metrics),
        checkpoint_path: Some(out.clone()),
        checkpoint_every: a.checkpoint_every,
        record_timing: !a.no_timing,
    };
    config.validate()?;

    let mut model = if a.resume && out.exists() {
        let m = load_checkpoint(&out)?;
        if m.architecture() != arch {
            return Err(Error::Config(format!(
                "{} holds a {} model, not {arch}",
                out.display(),
                m.architecture()
            )));
        }
        log::info!("resuming {} after epoch {}", out.display(), m.epochs_completed);
        m
    } else {
        build(arch, a.seed)?
    };

    let data = load_dataset(&a.data, split_rule(a.split_seed))?;
    log::info!(
        "{}: {} training, {} test samples, {} parameters",
        a.data.display(),
        data.train.len(),
        data.test.len(),
        model.param_count()
    );
    train(&mut model, &data, &config)?;
    let train_acc = evaluate(&model, &data.train)?.accuracy;
    let test_acc = if data.test.is_empty() {
        0.0
    } else {
        evaluate(&model, &data.test)?.accuracy
    };
    out!("final: train={train_acc:.4} test={test_acc:.4}");
    Ok(true)
}

fn cmd_eval(a: EvalArgs) -> Result<bool> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data, split_rule(a.split_seed))?;
    let samples = match a.split {
        Split::Test => &data.test,
        Split::Train => &data.train,
    };
    let ev = evaluate(&model, samples)?;
    out!("accuracy: {:.1}", ev.accuracy * 100.0);
    for row in &ev.confusion {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        out!("{}", cells.join(","));
    }
    Ok(true)
}

fn cmd_predict(a: PredictArgs) -> Result<bool> {
    let model = load_checkpoint(&a.checkpoint)?;
    let image = load_image(&a.image)?;
    let mut dims = vec![1];
    dims.extend_from_slice(image.dims());
    let probs = model.predict_proba(&image.reshape(&dims)?)?;
    let best = argmax(probs.data());
    out!("predicted: {best}");
    for (class, p) in probs.data().iter().enumerate() {
        let mark = if class == best { " *" } else { "" };
        out!("{class}: {p:.9}{mark}");
    }
    Ok(true)
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn print_layer_table(model: &SequentialModel<f32>) -> Result<()> {
    let shapes = model.layer_output_dims()?;
    let mut seen = [0usize; 7];
    out!("{:<10} {:<14} {:>10}", "layer", "output", "params");
    for (layer, shape) in model.layers().iter().zip(shapes) {
        let kind = layer.kind();
        let n = &mut seen[kind as usize];
        *n += 1;
        let shape: Vec<String> = shape.iter().map(usize::to_string).collect();
        out!(
            "{:<10} {:<14} {:>10}",
            format!("{kind}{n}"),
            shape.join("×"),
            group_thousands(layer.param_count())
        );
    }
    out!("total parameters: {}", group_thousands(model.param_count()));
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<bool> {
    let model = match (a.model, a.checkpoint) {
        (Some(kind), _) => build(kind.into(), 0)?,
        (None, Some(path)) => {
            let (model, manifest) = read_checkpoint(&path)?;
            out!(
                "{}: {} model, input {:?}, {} epochs completed",
                path.display(),
                manifest.architecture,
                manifest.input_shape,
                manifest.epochs_completed
            );
            model
        }
        (None, None) => unreachable!("clap enforces one of --model/--checkpoint"),
    };
    print_layer_table(&model)?;
    if model.architecture() == Architecture::Mlp {
        out!(
            "note: {} is sometimes quoted for this MLP; its layer sizes sum to {} (difference {})",
            group_thousands(MLP_PARAMS_PUBLISHED),
            group_thousands(MLP_PARAMS),
            MLP_PARAMS - MLP_PARAMS_PUBLISHED
        );
    }
    Ok(true)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    if a.configs == 0 || !(a.step > 0.0) || !(a.tolerance > 0.0) {
        return Err(Error::Config(
            "configs, step and tolerance must all be positive".into(),
        ));
    }
    let config = GradcheckConfig {
        step: a.step,
        tolerance: a.tolerance,
    };
    let report = gradcheck_suite(a.configs, a.seed, &config)?;
    out!("{report}");
    Ok(report.passed())
}

fn cmd_plot(a: PlotArgs) -> Result<bool> {
    plot_metrics(&a.metrics, &a.out)?;
    out!("wrote {}", a.out.display());
    Ok(true)
}

fn run(command: Command) -> Result<bool> {
    tgocr::init_threads()?;
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::Io { source, .. }) if source.kind() == ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

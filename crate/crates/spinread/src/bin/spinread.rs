//! Command-line entry point: simulate datasets, train/evaluate the
//! classifiers, run noise sweeps and T1 experiments.
//!
//! All numeric parameters come from the TOML config document; flags only
//! carry paths. Exit codes: 0 success, 1 usage/config error, 2 runtime
//! error.

use clap::{Parser, Subcommand};
use spinread::config::ExperimentConfig;
use spinread::dnn;
use spinread::experiments;
use spinread::io as dataset_io;
use spinread::trace::split_dataset;
use spinread::Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spinread", version, about = "Single-shot spin readout simulation and classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled, noise-injected, standardized dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output dataset path (.bin selects the binary format).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the CNN+LSTM classifier on a dataset and report held-out accuracy.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the noise-robustness accuracy sweep from the [sweep] section.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the T1 spin-relaxation experiment from the [t1] section.
    T1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn write_file(path: &Path, contents: &str) -> spinread::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| spinread::Error::io(dir.display().to_string(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| spinread::Error::io(path.display().to_string(), e))
}

fn write_manifest(out: &Path, cfg: &ExperimentConfig) -> spinread::Result<()> {
    let mut manifest = String::new();
    manifest.push_str("# spinread manifest v1\n");
    let _ = writeln!(manifest, "tool_version {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "seed {}", cfg.seed);
    let _ = writeln!(manifest, "config_sha256 {}", cfg.content_hash());
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest");
    write_file(Path::new(&path), &manifest)
}

fn cmd_simulate(config: &Path, out: &Path) -> spinread::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let mut rng = Rng::new(cfg.seed);
    let built =
        experiments::build_training_dataset(&cfg.tunnel, &cfg.noise, cfg.n_per_class, &mut rng)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| spinread::Error::io(dir.display().to_string(), e))?;
        }
    }
    dataset_io::save_dataset(&built.dataset, out)?;
    write_manifest(out, &cfg)?;
    println!(
        "wrote {} traces ({} per class) to {}",
        built.dataset.len(),
        cfg.n_per_class,
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &Path, dataset: &Path, out: &Path) -> spinread::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let ds = dataset_io::load_dataset(dataset)?;
    let total = ds.len();
    let n_train = (total as f64 * experiments::TRAIN_FRACTION).round() as usize;
    let mut split_rng = Rng::new(cfg.seed);
    let (train, eval) = split_dataset(&ds, n_train, total - n_train, &mut split_rng)?;

    let mut dnn_cfg = cfg.dnn.clone();
    dnn_cfg.input_len = train.traces[0].len();
    let report = dnn::train(&train, &dnn_cfg, &cfg.train)?;
    dnn::save_model(&report.model, out)?;

    let eval_acc = dnn::accuracy(&report.model, &eval)?;
    let mut metrics = String::from("epoch\ttrain_loss\n");
    for (i, loss) in report.loss_per_epoch.iter().enumerate() {
        let _ = writeln!(metrics, "{i}\t{loss}");
    }
    let _ = writeln!(metrics, "# eval_accuracy {eval_acc}");
    let mut metrics_path = out.as_os_str().to_owned();
    metrics_path.push(".metrics.tsv");
    write_file(Path::new(&metrics_path), &metrics)?;
    write_manifest(out, &cfg)?;
    println!("eval accuracy {eval_acc:.4} ({} train / {} eval)", train.len(), eval.len());
    Ok(())
}

fn cmd_eval(config: &Path, dataset: &Path, model: &Path) -> spinread::Result<()> {
    let _cfg = ExperimentConfig::load(config)?;
    let ds = dataset_io::load_dataset(dataset)?;
    let model = dnn::load_model(model)?;
    let acc = dnn::accuracy(&model, &ds)?;
    println!("accuracy {acc:.4} on {} traces", ds.len());
    Ok(())
}

fn report_to_tsv(report: &experiments::AccuracyReport) -> String {
    let mut out = String::from(
        "classifier\tlevel\taccuracy\teval_count\ttrue_event\tfalse_noevent\tfalse_event\ttrue_noevent\n",
    );
    for row in &report.rows {
        let c = &row.confusion;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.classifier.as_str(),
            row.level,
            row.accuracy,
            row.eval_count,
            c.true_event,
            c.false_noevent,
            c.false_event,
            c.true_noevent
        );
    }
    out
}

fn cmd_sweep(config: &Path, out_dir: &Path) -> spinread::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| spinread::Error::invalid("config has no [sweep] section"))?;
    let report = experiments::run_sweep(&spec, &cfg.tunnel, &cfg.dnn, &cfg.train)?;

    write_file(&out_dir.join("sweep_report.tsv"), &report_to_tsv(&report))?;
    // plot data: one file per classifier, columns level / accuracy
    for &kind in &spec.classifiers {
        let mut plot = String::from("level\taccuracy\n");
        for row in report.rows.iter().filter(|r| r.classifier == kind) {
            let _ = writeln!(plot, "{}\t{}", row.level, row.accuracy);
        }
        write_file(
            &out_dir.join(format!("sweep_accuracy_{}.tsv", kind.as_str())),
            &plot,
        )?;
    }
    // optimized classifier parameters for audit
    let mut audit = String::from("level\tthreshold\twavelet_scale\twavelet_threshold\tdnn_best_loss\n");
    for fp in &report.fitted {
        let _ = writeln!(
            audit,
            "{}\t{}\t{}\t{}\t{}",
            fp.level,
            fp.threshold.as_ref().map(|t| t.threshold.to_string()).unwrap_or_default(),
            fp.wavelet.as_ref().map(|w| w.scale.to_string()).unwrap_or_default(),
            fp.wavelet
                .as_ref()
                .map(|w| w.coeff_threshold.to_string())
                .unwrap_or_default(),
            fp.dnn_best_loss.map(|l| l.to_string()).unwrap_or_default(),
        );
    }
    write_file(&out_dir.join("sweep_fitted_params.tsv"), &audit)?;
    write_manifest(&out_dir.join("sweep"), &cfg)?;
    for row in &report.rows {
        println!(
            "{}\tlevel {}\taccuracy {:.4}",
            row.classifier.as_str(),
            row.level,
            row.accuracy
        );
    }
    Ok(())
}

fn cmd_t1(config: &Path, out_dir: &Path) -> spinread::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = cfg
        .t1
        .clone()
        .ok_or_else(|| spinread::Error::invalid("config has no [t1] section"))?;
    let outcome = experiments::run_t1_experiment(&spec, &cfg.dnn, &cfg.train)?;

    for curve in &outcome.curves {
        let mut data = String::from("t_wait_us\tp_down\tsigma_p\n");
        for ((t, p), s) in curve
            .t_wait_us
            .iter()
            .zip(&curve.p_down)
            .zip(&curve.sigma_p)
        {
            let _ = writeln!(data, "{t}\t{p}\t{s}");
        }
        write_file(
            &out_dir.join(format!("t1_curve_{}.tsv", curve.classifier.as_str())),
            &data,
        )?;
    }
    let mut fits = String::from("classifier\tt1_us\tsigma_t1\tamplitude_a\tsigma_a\toffset_b\tsigma_b\tstatus\n");
    for (kind, fit) in &outcome.fits {
        match fit {
            Ok(f) => {
                let _ = writeln!(
                    fits,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\tok",
                    kind.as_str(), f.t1_us, f.sigma_t1, f.amplitude_a, f.sigma_a, f.offset_b, f.sigma_b
                );
                println!(
                    "{}: T1 = {:.2} +- {:.2} us, A = {:.3} +- {:.3}, B = {:.3} +- {:.3}",
                    kind.as_str(), f.t1_us, f.sigma_t1, f.amplitude_a, f.sigma_a, f.offset_b, f.sigma_b
                );
            }
            Err(msg) => {
                let _ = writeln!(fits, "{}\t\t\t\t\t\t\tfailed: {msg}", kind.as_str());
                println!("{}: fit failed: {msg}", kind.as_str());
            }
        }
    }
    write_file(&out_dir.join("t1_fits.tsv"), &fits)?;
    write_manifest(&out_dir.join("t1"), &cfg)?;
    Ok(())
}

fn run(cli: Cli) -> spinread::Result<()> {
    match &cli.command {
        Command::Simulate { config, out } => cmd_simulate(config, out),
        Command::Train { config, dataset, out } => cmd_train(config, dataset, out),
        Command::Eval { config, dataset, model } => cmd_eval(config, dataset, model),
        Command::Sweep { config, out_dir } => cmd_sweep(config, out_dir),
        Command::T1 { config, out_dir } => cmd_t1(config, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ spinread::Error::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

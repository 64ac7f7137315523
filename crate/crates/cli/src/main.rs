use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use viewmatch::contrastive::{logs_to_jsonl, retrieve, train_classifier, train_ssl, train_supervised};
use viewmatch::dataset::{read_pgm, Dataset, ExamSequence};
use viewmatch::model::{load_classifier, load_encoder, load_supervised};
use viewmatch::ncc::ncc_retrieve;
use viewmatch::pairs::write_manifest;
use viewmatch::pipeline::{
    evaluate, make_split, raw_scores_to_jsonl, save_report, ssl_frames, ModelScorer, NccScorer, RunConfig,
    SupervisedScorer,
};
use viewmatch::ranking::{Ranked, RankingReport};
use viewmatch::synth::generate_dataset;
use viewmatch::{Error, Result};

const CONFIG_HELP: &str = "\
Run configuration (--config FILE): a JSON object with keys seed, phantom, pairs, ssl, clf and paths.
Unknown keys are rejected; omitted keys take their defaults. The effective configuration is written
next to every output as <output>.config.json.

Defaults of this tool are a desk-scale schedule:
  ssl: lr 1e-3, batch_size 32, epochs 50, steps_per_epoch 2, temperature 0.5, l2_weight 1e-5, dropout 0.2
  clf: lr 1e-4, batch_size 42, epochs 30, dropout 0.2, l2_weight 1e-5
  phantom: 40 patients, 60 frames per exam, 0.1 cm pixels
The published training schedule is:
  ssl: lr 1e-5, batch_size 128, 500 epochs (one pass over the pretraining frames per epoch)
  clf: lr 1e-4, batch_size 42, 60 epochs, dropout 0.2, l2_weight 1e-5
  data split: 80% of patients for pretraining, the rest split 80/10/10 over pairs

Exit status: 0 on success, 1 on usage or configuration errors, 2 on data or format errors.";

/// Self-supervised retrieval of corresponding ultrasound views.
#[derive(Parser)]
#[command(name = "viewmatch", version, after_long_help = CONFIG_HELP)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration JSON (see `viewmatch --help`).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the run seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        let seed = self.seed.unwrap_or(cfg.seed);
        let cfg = cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    /// Whole-frame normalized cross-correlation.
    Ncc,
    /// Encoder trained from scratch with a dense pair head (needs --supervised).
    Supervised,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the patient count (default 40).
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Contrastive pretraining of the encoder and projection head
    /// (published defaults: lr 1e-5, batch 128, 500 epochs, temperature 0.5).
    TrainSsl {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint (encoder and projection head).
        #[arg(long)]
        out: PathBuf,
        /// Overrides ssl.epochs (default 50; published 500).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the pair classifier on the frozen encoder
    /// (published defaults: lr 1e-4, batch 42, 60 epochs, dropout 0.2).
    TrainClf {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by train-ssl.
        #[arg(long)]
        encoder: PathBuf,
        /// Output classifier checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Overrides clf.epochs (default 30; published 60).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the supervised baseline from scratch on labeled pairs
    /// (uses the clf schedule: lr 1e-4, batch 42).
    TrainSupervised {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Overrides clf.epochs (default 30; published 60).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate on the held-out test slice: AUC, precision, recall, F1 (threshold 0.5)
    /// and the relative area error of retrieved views.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by train-ssl (not needed for baselines).
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Checkpoint written by train-clf (not needed for baselines).
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Checkpoint written by train-supervised (for --baseline supervised).
        #[arg(long)]
        supervised: Option<PathBuf>,
        /// Evaluate a baseline instead of the proposed model.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Output report; raw pair scores go to <report>.scores.jsonl.
        #[arg(long)]
        report: PathBuf,
    },
    /// Rank candidate frames by match probability against a reference frame.
    Retrieve {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Reference frame (binary PGM).
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Exam directory (or its frames/ subdirectory) of candidate PGM frames.
        #[arg(long)]
        candidates: PathBuf,
        /// Output ranking JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidate frames by normalized cross-correlation with a reference frame.
    Ncc {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write_ranking(out: &Path, reference: &Path, candidates: Vec<Ranked>) -> Result<()> {
    let report = RankingReport {
        reference: reference.display().to_string(),
        candidates,
    };
    create_parent(out)?;
    let text = serde_json::to_string_pretty(&report).expect("ranking serializes") + "\n";
    write_text(out, &text)
}

fn load_data(path: &Path) -> Result<Dataset> {
    info!("loading dataset {}", path.display());
    Dataset::load(path)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            config,
            out,
            patients,
        } => {
            let mut cfg = config.load()?;
            if let Some(p) = patients {
                cfg.phantom.patients = p;
            }
            cfg.validate()?;
            generate_dataset(&cfg.phantom, &out)?;
            cfg.save(&out.join("run.config.json"))?;
            info!("wrote {} patients to {}", cfg.phantom.patients, out.display());
        }
        Command::TrainSsl {
            config,
            data,
            out,
            epochs,
        } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.ssl.epochs = e;
            }
            let ds = load_data(&data)?;
            let split = make_split(&ds, &cfg)?;
            let frames = ssl_frames(&ds, &split.patients);
            info!("contrastive pretraining on {} frames", frames.len());
            let (model, logs) = train_ssl(&frames, &cfg.ssl)?;
            create_parent(&out)?;
            model.save(&out)?;
            write_text(&sibling(&out, ".log.jsonl"), &logs_to_jsonl(&logs))?;
            cfg.save(&sibling(&out, ".config.json"))?;
        }
        Command::TrainClf {
            config,
            data,
            encoder,
            out,
            epochs,
        } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.clf.epochs = e;
            }
            let enc = load_encoder(&encoder)?;
            let ds = load_data(&data)?;
            let split = make_split(&ds, &cfg)?;
            let p = &split.pairs;
            info!("classifier pairs: {} train, {} val, {} test", p.train.len(), p.val.len(), p.test.len());
            let (clf, logs) = train_classifier(&enc, &ds, &p.train, &p.val, &cfg.clf)?;
            create_parent(&out)?;
            clf.save(&out)?;
            write_text(&sibling(&out, ".log.jsonl"), &logs_to_jsonl(&logs))?;
            write_manifest(&sibling(&out, ".pairs-train.jsonl"), &p.train)?;
            write_manifest(&sibling(&out, ".pairs-val.jsonl"), &p.val)?;
            write_manifest(&sibling(&out, ".pairs-test.jsonl"), &p.test)?;
            cfg.save(&sibling(&out, ".config.json"))?;
        }
        Command::TrainSupervised {
            config,
            data,
            out,
            epochs,
        } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.clf.epochs = e;
            }
            let ds = load_data(&data)?;
            let split = make_split(&ds, &cfg)?;
            let (model, logs) = train_supervised(&ds, &split.pairs.train, &split.pairs.val, &cfg.clf)?;
            create_parent(&out)?;
            model.save(&out)?;
            write_text(&sibling(&out, ".log.jsonl"), &logs_to_jsonl(&logs))?;
            cfg.save(&sibling(&out, ".config.json"))?;
        }
        Command::Eval {
            config,
            data,
            encoder,
            classifier,
            supervised,
            baseline,
            report,
        } => {
            let cfg = config.load()?;
            let need = |p: Option<PathBuf>, flag: &str| {
                p.ok_or_else(|| Error::Config(format!("eval needs --{flag} for this method")))
            };
            let ds = load_data(&data)?;
            let split = make_split(&ds, &cfg)?;
            let (rep, raw) = match baseline {
                Some(Baseline::Ncc) => evaluate(&ds, &split, &NccScorer)?,
                Some(Baseline::Supervised) => {
                    let model = load_supervised(&need(supervised, "supervised")?)?;
                    evaluate(&ds, &split, &SupervisedScorer(&model))?
                }
                None => {
                    let enc = load_encoder(&need(encoder, "encoder")?)?;
                    let clf = load_classifier(&need(classifier, "classifier")?, cfg.clf.dropout)?;
                    let scorer = ModelScorer::new(&enc, &clf, &ds, &split.patients.clf)?;
                    evaluate(&ds, &split, &scorer)?
                }
            };
            create_parent(&report)?;
            save_report(&report, &rep)?;
            write_text(&sibling(&report, ".scores.jsonl"), &raw_scores_to_jsonl(&raw))?;
            cfg.save(&sibling(&report, ".config.json"))?;
            info!(
                "{}: auc {:.4} precision {:.4} recall {:.4} f1 {:.4} mean d {:.4}",
                rep.method, rep.auc, rep.precision, rep.recall, rep.f1, rep.mean_d
            );
        }
        Command::Retrieve {
            encoder,
            classifier,
            reference,
            candidates,
            out,
        } => {
            let enc = load_encoder(&encoder)?;
            let clf = load_classifier(&classifier, 0.0)?;
            let r = read_pgm(&reference)?;
            let frames = ExamSequence::read_frames_only(&candidates)?;
            write_ranking(&out, &reference, retrieve(&r, &frames, &enc, &clf)?)?;
        }
        Command::Ncc {
            reference,
            candidates,
            out,
        } => {
            let r = read_pgm(&reference)?;
            let frames = ExamSequence::read_frames_only(&candidates)?;
            write_ranking(&out, &reference, ncc_retrieve(&r, &frames)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

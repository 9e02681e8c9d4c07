use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use otesgn::ingest::{load_dataset, load_sentences};
use otesgn::ot::sinkhorn;
use otesgn::report::{attention_maps, matrix_csv, metrics_text, read_matrix_csv, stats_csv};
use otesgn::synthetic::{generate, toy_config, write_dataset, ToySpec};
use otesgn::training::{evaluate, log_csv, train, Checkpoint, ModelConfig, CHECKPOINT_FILE};
use otesgn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "otesgn",
    version,
    about = "Aspect sentiment with syntax-masked and transport attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// JSONL records with tokens, aspect_span and label.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    conllu: PathBuf,
    /// OTEV1 or word-vector text file.
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch and write a checkpoint plus per-epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint and write its confusion matrix.
    Eval {
        /// Checkpoint file or the directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Directory for confusion.csv; defaults to the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump per-head attention maps for one sentence.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        sentence_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one entropic transport problem from CSV inputs.
    Sinkhorn {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label counts and dependency-distance statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        conllu: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic toy corpus and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        sentences: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}

fn load_for(ck: &Checkpoint, data: &DataArgs) -> Result<otesgn::ingest::Dataset> {
    let dataset = load_dataset(&data.data, &data.conllu, &data.embeddings)?;
    if Some(dataset.dim) != ck.config.dim {
        return Err(Error::Dataset(format!(
            "embeddings have dim {} but the checkpoint expects {:?}",
            dataset.dim, ck.config.dim
        )));
    }
    Ok(dataset)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out } => {
            let cfg = ModelConfig::load(&config)?;
            let dataset = load_dataset(&data.data, &data.conllu, &data.embeddings)?;
            info!(
                "training on {} examples of dim {}",
                dataset.len(),
                dataset.dim
            );
            let state = train(&dataset, &cfg)?;
            std::fs::create_dir_all(&out)?;
            state.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
            std::fs::write(out.join("log.csv"), log_csv(&state.log))?;
            if let Some(last) = state.log.last() {
                println!(
                    "epochs {}  loss {:.6}  train accuracy {:.4}  beta {:.4}",
                    last.epoch, last.loss, last.accuracy, last.beta
                );
            }
        }
        Command::Eval {
            checkpoint,
            data,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dataset = load_for(&ck, &data)?;
            let metrics = evaluate(&ck.config, &ck.params, &dataset)?;
            print!("{}", metrics_text(&metrics));
            let dir = out.unwrap_or_else(|| checkpoint_dir(&checkpoint));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("confusion.csv"), metrics.confusion_csv())?;
        }
        Command::Attn {
            checkpoint,
            data,
            sentence_index,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dataset = load_for(&ck, &data)?;
            let example = dataset.examples.get(sentence_index).ok_or_else(|| {
                Error::Dataset(format!(
                    "sentence index {sentence_index} out of range for {} sentences",
                    dataset.len()
                ))
            })?;
            let maps = attention_maps(&ck.config, &ck.params, example)?;
            maps.write(&out)?;
            println!("beta {:.6}", maps.beta);
        }
        Command::Sinkhorn {
            cost,
            mu,
            nu,
            eps,
            iters,
            tol,
            out,
        } => {
            let plan = sinkhorn(
                &read_matrix_csv(&cost)?,
                &read_matrix_csv(&mu)?,
                &read_matrix_csv(&nu)?,
                eps,
                iters,
                tol,
            )?;
            std::fs::write(&out, matrix_csv(&plan.plan))?;
            println!(
                "iterations {}  row_error {:e}  col_error {:e}",
                plan.iterations, plan.row_error, plan.col_error
            );
        }
        Command::Stats { data, conllu, out } => {
            let text = stats_csv(&load_sentences(&data, &conllu)?)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
        Command::Synth {
            out,
            sentences,
            seed,
        } => {
            let spec = ToySpec {
                sentences,
                ..ToySpec::default()
            };
            write_dataset(&generate(&spec, seed)?, &out)?;
            std::fs::write(out.join("toy.conf"), toy_config(seed).to_text())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

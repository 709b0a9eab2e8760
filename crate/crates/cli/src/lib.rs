//! Command-line experiment runner: training sweeps, post-training
//! quantization, evaluation and synthetic data generation.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "qrnn", version, about = "Train and evaluate recurrent networks with quantized weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every method and seed listed in a config file.
    Train { config: PathBuf },
    /// Quantize a model file deterministically and write it packed.
    Quantize {
        input: PathBuf,
        /// e.g. ternary-deterministic, exp-deterministic, pow2-ternary:Q1.1
        method: String,
        output: PathBuf,
    },
    /// Print `metric=<value>` for a model on a dataset.
    Eval {
        model: PathBuf,
        data: PathBuf,
        /// charlm or seqclass
        task: String,
    },
    /// Write a synthetic digits dataset (10 classes, 39x200) as QFD.
    GenSynth { seed: u64, n_per_class: usize, out: PathBuf },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            commands::train(&config)?;
        }
        Command::Quantize { input, method, output } => commands::quantize(&input, &method, &output)?,
        Command::Eval { model, data, task } => {
            let metric = commands::eval(&model, &data, &task)?;
            println!("metric={metric}");
        }
        Command::GenSynth { seed, n_per_class, out } => commands::gen_synth(seed, n_per_class, &out)?,
    }
    Ok(())
}

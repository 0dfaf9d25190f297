//! `mvsc`: synthesis, training, evaluation, ablation sweeps, oracle checks
//! and plot export. All outputs are plain files under one directory per
//! command, each with a `run_manifest.json` of checksums.
//!
//! Exit status: 0 success, 1 validation, 2 numeric, 3 oracle failure.

mod commands;
mod error;
mod manifest;
mod verify;
mod viz;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use mvsc_core::data::Nonlinearity;

use commands::{AblationData, ConfigSource, SynthArgs, VizArgs};
use error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "mvsc", version, about = "Multi-view subspace clustering runner")]
struct Cli {
    /// Root for outputs of commands run without `--out`.
    #[arg(long, global = true, env = "MVSC_OUT", default_value = "mvsc-out")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigFlags {
    /// Flat `key = value` config file; every key must appear once.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated loss ablations, e.g. `drop_cmi,drop_dis`.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigFlags {
    fn source(&self) -> ConfigSource {
        ConfigSource {
            file: self.config.clone(),
            overrides: self.overrides.clone(),
            ablate: self.ablate.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic union-of-subspaces dataset.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Per-view feature dimensions.
        #[arg(long, value_delimiter = ',', default_value = "30,30")]
        views: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        subspace_dim: usize,
        #[arg(long, default_value_t = 16)]
        latent_dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// `tanh-affine` or `none`.
        #[arg(long, default_value = "tanh-affine")]
        nonlinearity: Nonlinearity,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain, train, cluster and evaluate; writes a run directory.
    Train {
        /// Dataset directory written by `synth` or by hand.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigFlags,
        /// Print the resolved config with key docs and exit.
        #[arg(long)]
        print_config: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recluster a run's checkpoint and score it against the labels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the dataset recorded in the run manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full model and each single-term drop over a seed list.
    Ablate {
        #[arg(long, conflicts_with = "synth_default", required_unless_present = "synth_default")]
        data: Option<PathBuf>,
        /// Regenerate the default synthetic benchmark for every seed.
        #[arg(long)]
        synth_default: bool,
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Seed runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle checks; exit 3 if any residual exceeds its bound.
    Verify {
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<verify::Fault>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Affinity heatmaps, code scatter plots and the code cosine matrix.
    Viz {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        view_i: usize,
        #[arg(long, default_value_t = 1)]
        view_j: usize,
        /// Samples per block in the cosine matrix.
        #[arg(long, default_value_t = 50)]
        sample: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(explicit: Option<PathBuf>, root: &Path, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| root.join(name))
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::Synth {
            n,
            k,
            views,
            subspace_dim,
            latent_dim,
            noise,
            nonlinearity,
            seed,
            out,
        } => {
            let args = SynthArgs {
                n,
                k,
                views,
                subspace_dim,
                latent_dim,
                noise,
                nonlinearity,
                seed,
            };
            commands::synth(&args, &out_dir(out, &root, "synth"))
        }
        Command::Train {
            data,
            cfg,
            print_config,
            out,
        } => {
            let cfg = cfg.source().resolve()?;
            if print_config {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let data = data.ok_or_else(|| CliError::usage("train needs --data (or --print-config)"))?;
            commands::train(&data, &cfg, &out_dir(out, &root, "train"))
        }
        Command::Eval { run, data, out } => {
            let out = out.unwrap_or_else(|| run.join("eval"));
            commands::eval(&run, data.as_deref(), &out)
        }
        Command::Ablate {
            data,
            synth_default,
            cfg,
            seeds,
            jobs,
            out,
        } => {
            let cfg = cfg.source().resolve()?;
            let source = match (data, synth_default) {
                (Some(d), false) => AblationData::Dir(d),
                (None, true) => AblationData::SynthDefault,
                _ => return Err(CliError::usage("pass exactly one of --data and --synth-default")),
            };
            commands::ablate(&source, &cfg, &seeds, jobs, &out_dir(out, &root, "ablate"))
        }
        Command::Verify { inject_fault, out } => commands::verify(inject_fault, &out_dir(out, &root, "verify")),
        Command::Viz {
            run,
            data,
            view_i,
            view_j,
            sample,
            out,
        } => {
            let out = out.unwrap_or_else(|| run.join("viz"));
            let args = VizArgs { view_i, view_j, sample };
            commands::viz(&run, data.as_deref(), &args, &out)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::VALIDATION } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn out_defaults_to_root_subdirectory() {
        assert_eq!(out_dir(None, Path::new("/r"), "train"), PathBuf::from("/r/train"));
        assert_eq!(out_dir(Some("x".into()), Path::new("/r"), "train"), PathBuf::from("x"));
    }
}

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use facesearch_cli::{commands, server};
use facesearch_core::search::project_dataset;
use facesearch_core::{Geometry, SearchConfig};

#[derive(Parser)]
#[command(
    name = "facesearch",
    version,
    about = "Eigenface modelling and adaptive face search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read an image directory and keep the most symmetric faces
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        /// Output directory for faces.bin and manifest.json
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        percentile: f64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
    },
    /// Fit eigenfaces and the coordinate normal model
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Output models directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap normality diagnostics of the eigenface coordinates
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 100)]
        bootstrap: usize,
        #[arg(long, default_value_t = 1000)]
        subsample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate random faces from the fitted model
    Random {
        #[arg(long)]
        models: PathBuf,
        #[arg(short = 'n', long = "n", default_value_t = 16)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Search for a target image with a simulated witness
    Search {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        epsilon_star: Option<f64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long)]
        per_iter: Option<usize>,
        #[arg(long)]
        initial_pool: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for result.json and trace.csv; the trace goes to
        /// stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP session service for a human witness
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Write a JSON snapshot of each session here after every change
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            dir,
            out,
            percentile,
            width,
            height,
        } => {
            let m = commands::ingest(&dir, &out, percentile, Geometry::new(width, height))?;
            for f in &m.failures {
                eprintln!("skipped {}: {}", f.file, f.error);
            }
            println!("kept {} of {} faces", m.n_after, m.n_before);
        }
        Command::Fit { dataset, k, out } => {
            print!("{}", commands::fit(&dataset, k, &out)?.table());
        }
        Command::Stats {
            dataset,
            models,
            bootstrap,
            subsample,
            seed,
        } => {
            let report = commands::stats(&dataset, &models, bootstrap, subsample, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Random {
            models,
            n,
            out,
            seed,
        } => {
            commands::random(&models, n, &out, seed)?;
        }
        Command::Search {
            models,
            dataset,
            target,
            epsilon,
            epsilon_star,
            bandwidth,
            zeta,
            per_iter,
            initial_pool,
            max_iters,
            seed,
            out,
        } => {
            let d = SearchConfig::default();
            let config = SearchConfig {
                epsilon: epsilon.unwrap_or(d.epsilon),
                epsilon_star: epsilon_star.unwrap_or(d.epsilon_star),
                bandwidth: bandwidth.unwrap_or(d.bandwidth),
                zeta: zeta.unwrap_or(d.zeta),
                per_iter: per_iter.unwrap_or(d.per_iter),
                initial_pool: initial_pool.unwrap_or(d.initial_pool),
                max_iters: max_iters.unwrap_or(d.max_iters),
            };
            let output = commands::search(&models, &dataset, &target, config, seed)?;
            let r = &output.result;
            match out {
                Some(dir) => {
                    commands::write_search_output(&output, &dir)?;
                    println!(
                        "best {} loss {} after {} iterations ({})",
                        r.best_id,
                        r.loss,
                        r.iterations,
                        if r.converged {
                            "converged"
                        } else {
                            "not converged"
                        }
                    );
                }
                None => print!("{}", output.trace_csv),
            }
        }
        Command::Serve {
            models,
            dataset,
            bind,
            snapshots,
        } => {
            let (eigen, mvn) = commands::read_models(&models)?;
            let ds = commands::read_dataset(&dataset)?;
            let pool = project_dataset(&ds, &eigen)?;
            let engine = server::Engine {
                eigen,
                mvn,
                pool,
                config: SearchConfig::default(),
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(
                server::AppState::new(engine, snapshots),
                &bind,
            ))?;
        }
    }
    Ok(())
}

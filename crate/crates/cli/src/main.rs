// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use conspat_core::pipeline::{Pipeline, RunConfig, Stage};
use conspat_core::Error;
use log::info;

#[derive(Parser, Debug)]
#[command(name = "conspat", version, about = "Socioeconomic consumption-pattern analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write a synthetic corpus into the output directory.
    Generate,
    /// Build the joined social graph.
    Ingest,
    /// Average monthly purchases and equal-sum classes.
    Classes,
    /// Class spending shares, vectors, distances, dispersion and entropy.
    Consumption,
    /// Degree-preserving null model and L ratios.
    Nullmodel,
    /// Category correlations and the thresholded category graph.
    Categories,
    /// Louvain communities of the category graph.
    Communities,
    /// Category feature averages, correlations and clustering.
    Demographics,
    /// Summarize report.json into summary.md.
    Report,
    /// Every analysis stage in order.
    All,
}

#[derive(Args, Debug, Default)]
struct Options {
    /// key = value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    input_dir: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    #[arg(long, global = true)]
    taxonomy: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, visible_alias = "n", global = true)]
    n_classes: Option<String>,
    #[arg(long, global = true)]
    swap_mult: Option<String>,
    #[arg(long, global = true)]
    replicas: Option<String>,
    #[arg(long, global = true)]
    rho_min: Option<String>,
    /// A count, or "auto" to scale with the corpus.
    #[arg(long, global = true)]
    min_common: Option<String>,
    /// Inclusive cluster-count range such as 2..20.
    #[arg(long, global = true)]
    k_range: Option<String>,
    /// ex-cash or inc-cash.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    svg: bool,
    /// Synthetic corpus size.
    #[arg(long, global = true)]
    n_egos: Option<String>,
    #[arg(long, global = true)]
    homophily: Option<String>,
    #[arg(long, global = true)]
    concentration: Option<String>,
    /// Any other configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

impl Options {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let flags = [
            ("input_dir", &self.input_dir),
            ("out_dir", &self.out_dir),
            ("taxonomy", &self.taxonomy),
            ("seed", &self.seed),
            ("n_classes", &self.n_classes),
            ("swap_mult", &self.swap_mult),
            ("replicas", &self.replicas),
            ("rho_min", &self.rho_min),
            ("min_common", &self.min_common),
            ("k_range", &self.k_range),
            ("variant", &self.variant),
            ("n_egos", &self.n_egos),
            ("homophily", &self.homophily),
            ("concentration", &self.concentration),
        ];
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.svg {
            cfg.svg = true;
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingInput(_) => 2,
        Error::Invariant(_) => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.opts.config()?;
    let mut pipeline = Pipeline::new(cfg)?;
    let start = Instant::now();
    let stage = match cli.command {
        Command::All => None,
        Command::Generate => Some(Stage::Generate),
        Command::Ingest => Some(Stage::Ingest),
        Command::Classes => Some(Stage::Classes),
        Command::Consumption => Some(Stage::Consumption),
        Command::Nullmodel => Some(Stage::NullModel),
        Command::Categories => Some(Stage::Categories),
        Command::Communities => Some(Stage::Communities),
        Command::Demographics => Some(Stage::Demographics),
        Command::Report => Some(Stage::Report),
    };
    match stage {
        Some(s) => pipeline.run(s)?,
        None => pipeline.run_all()?,
    }
    info!(
        "finished in {:.1}s; artifacts in {}",
        start.elapsed().as_secs_f64(),
        pipeline.config().out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("conspat: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Command-line experiment runner. `run` trains baseline-vs-CLFE comparisons
//! from a config file, `gen` writes synthetic datasets to graph files, and
//! `gradcheck` verifies layer gradients against finite differences.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use clfe::experiment::{parse_config, run_ab, Arm};
use clfe::graph::{
    gen_graph_classes, gen_regression, gen_sbm_set, gen_tsp, save_graphs, SbmSpec, TspLabelMode,
};
use clfe::layers::{check_stack_gradients, names, ModelSpec};

#[derive(Parser)]
#[command(name = "clfe", version, about = "GNN experiments with conditional local feature encoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds (overrides the config's `seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Arms to run (overrides the config's `arms`).
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<ArmArg>>,
    },
    /// Generate a synthetic dataset and write it as a graph file.
    Gen {
        #[arg(long)]
        kind: GenKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        graphs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// SBM: number of blocks.
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        /// SBM: nodes per block.
        #[arg(long, default_value_t = 15)]
        block_size: usize,
        /// SBM: within-block edge probability.
        #[arg(long, default_value_t = 0.5)]
        p_intra: f64,
        /// SBM: cross-block edge probability.
        #[arg(long, default_value_t = 0.1)]
        p_inter: f64,
        /// SBM: feature corruption probability.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        /// SBM: reveal one node per class, zero features elsewhere.
        #[arg(long, default_value_t = false)]
        semi_supervised: bool,
        /// TSP: nodes per instance.
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        /// TSP: nearest neighbors per node.
        #[arg(long, default_value_t = 3)]
        neighbors: usize,
        /// TSP: tour labeling mode.
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        /// reg/cls: smallest graph size.
        #[arg(long, default_value_t = 8)]
        min_nodes: usize,
        /// reg/cls: largest graph size.
        #[arg(long, default_value_t = 16)]
        max_nodes: usize,
        /// cls: number of density classes.
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
    /// Check every layer parameter's gradient against finite differences.
    Gradcheck {
        /// Backbone name, or `all`.
        #[arg(long)]
        backbone: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Sbm,
    Tsp,
    Reg,
    Cls,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    TwoOpt,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    Baseline,
    Clfe,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, out, seeds, arms } => {
            let mut cfg = parse_config(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            if let Some(out) = out {
                cfg.out = out;
            }
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(arms) = arms {
                cfg.arms = arms
                    .into_iter()
                    .map(|a| match a {
                        ArmArg::Baseline => Arm::Baseline,
                        ArmArg::Clfe => Arm::Clfe,
                    })
                    .collect();
            }
            let report = run_ab(&cfg)?;
            print!("{}", report.table.to_markdown());
            println!("results written to {}", cfg.out.display());
            if report.complete {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("warning: some seeds failed; see results.md for partial counts");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Gen {
            kind,
            out,
            graphs,
            seed,
            blocks,
            block_size,
            p_intra,
            p_inter,
            noise,
            semi_supervised,
            nodes,
            neighbors,
            mode,
            min_nodes,
            max_nodes,
            classes,
        } => {
            let dataset = match kind {
                GenKind::Sbm => gen_sbm_set(
                    &SbmSpec {
                        block_sizes: vec![block_size; blocks],
                        p_intra,
                        p_inter,
                        noise,
                        semi_supervised,
                    },
                    graphs,
                    seed,
                )?,
                GenKind::Tsp => {
                    let mode = match mode {
                        ModeArg::Exact => TspLabelMode::Exact,
                        ModeArg::TwoOpt => TspLabelMode::TwoOpt,
                    };
                    (0..graphs)
                        .map(|i| gen_tsp(nodes, neighbors, seed.wrapping_add(i as u64), mode))
                        .collect::<Result<Vec<_>, _>>()?
                }
                GenKind::Reg => gen_regression(graphs, min_nodes, max_nodes, seed)?,
                GenKind::Cls => gen_graph_classes(graphs, min_nodes, max_nodes, classes, seed)?,
            };
            save_graphs(&dataset, &out)?;
            println!("wrote {} graphs to {}", dataset.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { backbone, seed } => {
            let list: Vec<&str> = if backbone == "all" {
                names()
            } else {
                if !names().contains(&backbone.as_str()) {
                    bail!("unknown backbone '{backbone}'; available: {} or all", names().join(", "));
                }
                vec![names().into_iter().find(|&n| n == backbone).unwrap()]
            };
            let mut all_ok = true;
            for name in list {
                for clfe in [false, true] {
                    let spec = ModelSpec::new(name, 2, 4).with_clfe(clfe);
                    let report = check_stack_gradients(&spec, seed)?;
                    let status = if report.passed() { "ok" } else { "FAIL" };
                    all_ok &= report.passed();
                    println!(
                        "{name:9} clfe={clfe:5} max rel err {:9.3e} over {} checks ({} skipped at kinks): {status}",
                        report.max_rel_err,
                        report.checked,
                        report.skipped.len(),
                    );
                }
            }
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

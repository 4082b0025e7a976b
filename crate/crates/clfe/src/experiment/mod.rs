//! Config-driven A/B experiments: build one dataset, train the baseline and
//! CLFE arms on identical splits and seed sequences, and emit comparison
//! tables. Both arms see byte-identical data; only the CLFE flag (and the
//! extra CLFE parameters it introduces) differs.

mod config;
mod report;

pub use config::{parse_config, parse_config_str, Arm, ConfigError, DatasetSpec, ExperimentConfig};
pub use report::{
    emit_report, format_cell, format_change_cell, ArmStats, ComparisonTable, Manifest, TableRow,
};

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{
    gen_graph_classes, gen_regression, gen_sbm_set, gen_tsp, load_graphs, Graph, GraphError,
    SbmSpec,
};
use crate::layers::{LayerError, ModelSpec};
use crate::model::{Model, ModelError, Task};
use crate::training::{run_seeds, Splits, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset of {count} graphs is too small for the split fractions")]
    SplitTooSmall { count: usize },
    #[error("dataset has no {what}")]
    DatasetUnlabeled { what: &'static str },
    #[error("nothing to report")]
    EmptyReport,
    #[error("results.csv line {line}: {msg}")]
    Report { line: usize, msg: String },
}

/// Outcome of `run_ab`: the table plus whether every arm of every row
/// finished all its seeds.
#[derive(Debug)]
pub struct AbReport {
    pub table: ComparisonTable,
    pub complete: bool,
}

/// Generates (or loads) the dataset named by the spec.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Vec<Graph>, GraphError> {
    match spec {
        DatasetSpec::Sbm {
            graphs,
            blocks,
            block_size,
            p_intra,
            p_inter,
            noise,
            semi_supervised,
            seed,
        } => gen_sbm_set(
            &SbmSpec {
                block_sizes: vec![*block_size; *blocks],
                p_intra: *p_intra,
                p_inter: *p_inter,
                noise: *noise,
                semi_supervised: *semi_supervised,
            },
            *graphs,
            *seed,
        ),
        DatasetSpec::Tsp { graphs, nodes, neighbors, mode, seed } => (0..*graphs)
            .map(|i| gen_tsp(*nodes, *neighbors, seed.wrapping_add(i as u64), *mode))
            .collect(),
        DatasetSpec::Reg { graphs, min_nodes, max_nodes, seed } => {
            gen_regression(*graphs, *min_nodes, *max_nodes, *seed)
        }
        DatasetSpec::Cls { graphs, min_nodes, max_nodes, classes, seed } => {
            gen_graph_classes(*graphs, *min_nodes, *max_nodes, *classes, *seed)
        }
        DatasetSpec::File { path, .. } => load_graphs(path),
    }
}

/// Seeded shuffle-and-cut split; the same (seed, fractions) always produce
/// the same membership.
pub fn split_graphs(
    graphs: Vec<Graph>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Splits, ExperimentError> {
    let n = graphs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5911_d511_d500_0000);
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * fractions.0).round() as usize).max(1);
    let n_val = ((n as f64 * fractions.1).round() as usize).max(1);
    if n_train + n_val >= n {
        return Err(ExperimentError::SplitTooSmall { count: n });
    }
    let mut graphs: Vec<Option<Graph>> = graphs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Graph> {
        idx.iter().map(|&i| graphs[i].take().expect("split indices are disjoint")).collect()
    };
    Ok(Splits {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

/// Node feature width, edge feature width, and class count for a dataset.
pub fn infer_shapes(
    task: Task,
    graphs: &[Graph],
) -> Result<(usize, Option<usize>, usize), ExperimentError> {
    let first = graphs.first().ok_or(ExperimentError::SplitTooSmall { count: 0 })?;
    let in_width = first.node_feats().cols();
    let edge_width = first.edge_feats().map(|f| f.cols());
    let classes = match task {
        Task::NodeCls => {
            let max = graphs
                .iter()
                .filter_map(|g| g.node_labels().and_then(|l| l.iter().max().copied()))
                .max()
                .ok_or(ExperimentError::DatasetUnlabeled { what: "node labels" })?;
            max + 1
        }
        Task::GraphCls => {
            let max = graphs
                .iter()
                .filter_map(Graph::graph_label)
                .max()
                .ok_or(ExperimentError::DatasetUnlabeled { what: "graph labels" })?;
            max + 1
        }
        Task::EdgeCls => {
            let max = graphs
                .iter()
                .filter_map(|g| g.edge_labels().and_then(|l| l.iter().max().copied()))
                .max()
                .ok_or(ExperimentError::DatasetUnlabeled { what: "edge labels" })?;
            max + 1
        }
        Task::GraphReg => {
            if !graphs.iter().all(|g| g.graph_target().is_some()) {
                return Err(ExperimentError::DatasetUnlabeled { what: "graph targets" });
            }
            1
        }
    };
    Ok((in_width, edge_width, classes))
}

fn model_spec_for(cfg: &ExperimentConfig, backbone: &str, layers: usize, arm: Arm) -> ModelSpec {
    ModelSpec {
        backbone: backbone.to_string(),
        layers,
        hidden: cfg.hidden,
        clfe: arm == Arm::Clfe,
        skip: cfg.skip,
        activation: cfg.activation,
        norm: cfg.norm,
        heads: cfg.heads,
        kernels: cfg.kernels,
    }
}

/// Runs every (backbone, depth) row of the config with both arms over the
/// shared dataset and seeds, writes per-epoch logs, the comparison table
/// (CSV and markdown), the manifest, and the resolved config under
/// `cfg.out`, and returns the table.
pub fn run_ab(cfg: &ExperimentConfig) -> Result<AbReport, ExperimentError> {
    let graphs = build_dataset(&cfg.dataset)?;
    let (in_width, edge_width, classes) = infer_shapes(cfg.task, &graphs)?;
    let splits = split_graphs(graphs, cfg.split, cfg.dataset.seed())?;
    let train_cfg = TrainConfig {
        lr: cfg.train.lr,
        gamma: cfg.train.gamma,
        patience: cfg.train.patience,
        max_epochs: cfg.train.max_epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.seeds[0],
        metric: cfg.metric,
        hits_k: cfg.hits_k,
    };

    let log_dir = cfg.out.join("logs");
    std::fs::create_dir_all(&log_dir)?;
    let mut rows = Vec::new();
    let mut complete = true;
    for backbone in &cfg.backbones {
        for &layers in &cfg.layer_counts {
            let mut row = TableRow {
                backbone: backbone.clone(),
                layers,
                baseline: None,
                clfe: None,
            };
            for &arm in &cfg.arms {
                let spec = model_spec_for(cfg, backbone, layers, arm);
                let task = cfg.task;
                let class_weights = cfg.class_weights;
                let mut sink_for = |seed: u64| -> Option<File> {
                    let name = format!("{backbone}_L{layers}_{}_seed{seed}.csv", arm.name());
                    File::create(log_dir.join(name)).ok()
                };
                let result = run_seeds(
                    |seed| {
                        Model::new(
                            task,
                            spec.clone(),
                            in_width,
                            edge_width,
                            classes,
                            class_weights,
                            seed,
                        )
                    },
                    &splits,
                    &train_cfg,
                    &cfg.seeds,
                    Some(&mut sink_for),
                )?;
                if result.failed() > 0 {
                    complete = false;
                }
                let stats = ArmStats {
                    mean: result.mean,
                    std: result.std,
                    seeds_ok: result.completed(),
                };
                match arm {
                    Arm::Baseline => row.baseline = Some(stats),
                    Arm::Clfe => row.clfe = Some(stats),
                }
            }
            rows.push(row);
        }
    }
    let table = ComparisonTable { metric: cfg.metric, seeds_requested: cfg.seeds.len(), rows };
    let manifest = Manifest::new(&cfg.seeds, vec![cfg.echo()]);
    emit_report(std::slice::from_ref(&table), &cfg.out, &manifest)?;
    std::fs::write(cfg.out.join("config.resolved"), cfg.echo())?;
    Ok(AbReport { table, complete })
}

/// Convenience for callers that already have a config file on disk.
pub fn run_ab_file<P: AsRef<Path>>(path: P) -> Result<AbReport, ExperimentError> {
    let cfg = parse_config(path)?;
    run_ab(&cfg)
}

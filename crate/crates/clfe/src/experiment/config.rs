//! Flat key-value experiment configs. Unknown keys are rejected; every
//! omitted key takes a documented default, and the resolved config echoes
//! back in a canonical form that parses to the same value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::TspLabelMode;
use crate::heads::metrics::MetricKind;
use crate::layers::{Activation, Norm};
use crate::model::Task;
use crate::training::DEFAULT_SEEDS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required key '{key}'")]
    Missing { key: &'static str },
    #[error("unknown key '{key}'")]
    Unknown { key: String },
    #[error("key '{key}': {msg}")]
    Invalid { key: String, msg: String },
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    Clfe,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Clfe => "clfe",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "clfe" => Ok(Arm::Clfe),
            other => Err(format!("unknown arm '{other}' (expected baseline or clfe)")),
        }
    }
}

/// Dataset source: a generator with its parameters, or a graph file.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Sbm {
        graphs: usize,
        blocks: usize,
        block_size: usize,
        p_intra: f64,
        p_inter: f64,
        noise: f64,
        semi_supervised: bool,
        seed: u64,
    },
    Tsp { graphs: usize, nodes: usize, neighbors: usize, mode: TspLabelMode, seed: u64 },
    Reg { graphs: usize, min_nodes: usize, max_nodes: usize, seed: u64 },
    Cls { graphs: usize, min_nodes: usize, max_nodes: usize, classes: usize, seed: u64 },
    File { path: PathBuf, seed: u64 },
}

impl DatasetSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSpec::Sbm { .. } => "sbm",
            DatasetSpec::Tsp { .. } => "tsp",
            DatasetSpec::Reg { .. } => "reg",
            DatasetSpec::Cls { .. } => "cls",
            DatasetSpec::File { .. } => "file",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            DatasetSpec::Sbm { seed, .. }
            | DatasetSpec::Tsp { seed, .. }
            | DatasetSpec::Reg { seed, .. }
            | DatasetSpec::Cls { seed, .. }
            | DatasetSpec::File { seed, .. } => seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub gamma: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub backbones: Vec<String>,
    pub layer_counts: Vec<usize>,
    pub hidden: usize,
    pub activation: Activation,
    pub norm: Norm,
    pub skip: bool,
    pub heads: usize,
    pub kernels: usize,
    pub metric: MetricKind,
    pub hits_k: usize,
    pub class_weights: bool,
    pub dataset: DatasetSpec,
    pub split: (f64, f64, f64),
    pub train: TrainSettings,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub out: PathBuf,
}

pub fn parse_config<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    let mut keys = Consumed { map };

    let task: Task = keys.required("task")?;
    let backbones = keys.list_str("backbone")?.ok_or(ConfigError::Missing { key: "backbone" })?;
    let layer_counts = keys.list_usize("layers")?.unwrap_or_else(|| vec![4]);
    for &l in &layer_counts {
        if l == 0 {
            return Err(ConfigError::Invalid {
                key: "layers".into(),
                msg: "a model needs at least one layer".into(),
            });
        }
    }
    let hidden = keys.parsed("hidden")?.unwrap_or(16usize);
    let activation = match keys.take("activation").as_deref() {
        None => Activation::Relu,
        Some("relu") => Activation::Relu,
        Some("tanh") => Activation::Tanh,
        Some("sigmoid") => Activation::Sigmoid,
        Some("leaky_relu") => Activation::LeakyRelu(0.2),
        Some("identity") => Activation::Identity,
        Some(other) => {
            return Err(ConfigError::Invalid {
                key: "activation".into(),
                msg: format!("unknown activation '{other}'"),
            })
        }
    };
    let norm = match keys.take("norm").as_deref() {
        None | Some("batch") => Norm::Batch,
        Some("none") => Norm::None,
        Some(other) => {
            return Err(ConfigError::Invalid {
                key: "norm".into(),
                msg: format!("unknown normalization '{other}'"),
            })
        }
    };
    let skip = keys.parsed("skip")?.unwrap_or(true);
    let heads = keys.parsed("heads")?.unwrap_or(4usize);
    let kernels = keys.parsed("kernels")?.unwrap_or(3usize);
    let metric = match keys.take("metric") {
        Some(v) => v.parse::<MetricKind>().map_err(|msg| ConfigError::Invalid {
            key: "metric".into(),
            msg,
        })?,
        None => match task {
            Task::NodeCls | Task::GraphCls => MetricKind::AccuracyWeighted,
            Task::EdgeCls => MetricKind::F1Positive,
            Task::GraphReg => MetricKind::Mae,
        },
    };
    let hits_k = keys.parsed("hits_k")?.unwrap_or(10usize);
    let class_weights = keys.parsed("class_weights")?.unwrap_or(task == Task::NodeCls);

    let dataset_seed = keys.parsed("dataset.seed")?.unwrap_or(1u64);
    let kind = keys.take("dataset.kind").ok_or(ConfigError::Missing { key: "dataset.kind" })?;
    let dataset = match kind.as_str() {
        "sbm" => DatasetSpec::Sbm {
            graphs: keys.parsed("dataset.graphs")?.unwrap_or(60),
            blocks: keys.parsed("dataset.blocks")?.unwrap_or(4),
            block_size: keys.parsed("dataset.block_size")?.unwrap_or(15),
            p_intra: keys.parsed("dataset.p_intra")?.unwrap_or(0.5),
            p_inter: keys.parsed("dataset.p_inter")?.unwrap_or(0.1),
            noise: keys.parsed("dataset.noise")?.unwrap_or(0.3),
            semi_supervised: keys.parsed("dataset.semi_supervised")?.unwrap_or(false),
            seed: dataset_seed,
        },
        "tsp" => DatasetSpec::Tsp {
            graphs: keys.parsed("dataset.graphs")?.unwrap_or(100),
            nodes: keys.parsed("dataset.nodes")?.unwrap_or(10),
            neighbors: keys.parsed("dataset.neighbors")?.unwrap_or(3),
            mode: match keys.take("dataset.tsp_mode").as_deref() {
                None | Some("exact") => TspLabelMode::Exact,
                Some("two_opt") => TspLabelMode::TwoOpt,
                Some(other) => {
                    return Err(ConfigError::Invalid {
                        key: "dataset.tsp_mode".into(),
                        msg: format!("unknown mode '{other}' (expected exact or two_opt)"),
                    })
                }
            },
            seed: dataset_seed,
        },
        "reg" => DatasetSpec::Reg {
            graphs: keys.parsed("dataset.graphs")?.unwrap_or(200),
            min_nodes: keys.parsed("dataset.min_nodes")?.unwrap_or(8),
            max_nodes: keys.parsed("dataset.max_nodes")?.unwrap_or(16),
            seed: dataset_seed,
        },
        "cls" => DatasetSpec::Cls {
            graphs: keys.parsed("dataset.graphs")?.unwrap_or(30),
            min_nodes: keys.parsed("dataset.min_nodes")?.unwrap_or(8),
            max_nodes: keys.parsed("dataset.max_nodes")?.unwrap_or(16),
            classes: keys.parsed("dataset.classes")?.unwrap_or(2),
            seed: dataset_seed,
        },
        "file" => DatasetSpec::File {
            path: PathBuf::from(
                keys.take("dataset.path").ok_or(ConfigError::Missing { key: "dataset.path" })?,
            ),
            seed: dataset_seed,
        },
        other => {
            return Err(ConfigError::Invalid {
                key: "dataset.kind".into(),
                msg: format!("unknown kind '{other}' (expected sbm, tsp, reg, cls, or file)"),
            })
        }
    };
    check_task_dataset(task, &dataset)?;

    let split: (f64, f64, f64) = (
        keys.parsed("split.train")?.unwrap_or(0.6),
        keys.parsed("split.val")?.unwrap_or(0.2),
        keys.parsed("split.test")?.unwrap_or(0.2),
    );
    let total = split.0 + split.1 + split.2;
    if (total - 1.0).abs() > 1e-9 || split.0 <= 0.0 || split.1 <= 0.0 || split.2 <= 0.0 {
        return Err(ConfigError::Invalid {
            key: "split.train".into(),
            msg: format!("split fractions must be positive and sum to 1, got {total}"),
        });
    }

    let train = TrainSettings {
        lr: keys.parsed("train.lr")?.unwrap_or(1e-3),
        gamma: keys.parsed("train.gamma")?.unwrap_or(0.5),
        patience: keys.parsed("train.patience")?.unwrap_or(5),
        max_epochs: keys.parsed("train.max_epochs")?.unwrap_or(100),
        batch_size: keys.parsed("train.batch_size")?.unwrap_or(32),
    };
    if !(0.0..1.0).contains(&train.gamma) {
        return Err(ConfigError::Invalid {
            key: "train.gamma".into(),
            msg: "decay factor must lie in (0, 1)".into(),
        });
    }
    if train.patience == 0 {
        return Err(ConfigError::Invalid {
            key: "train.patience".into(),
            msg: "patience must be at least 1".into(),
        });
    }

    let seeds = keys.list_u64("seeds")?.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let arms = match keys.list_str("arms")? {
        None => vec![Arm::Baseline, Arm::Clfe],
        Some(list) => {
            let mut arms = Vec::with_capacity(list.len());
            for a in list {
                arms.push(a.parse::<Arm>().map_err(|msg| ConfigError::Invalid {
                    key: "arms".into(),
                    msg,
                })?);
            }
            arms
        }
    };
    let out = PathBuf::from(keys.take("out").unwrap_or_else(|| "results".into()));

    if let Some(key) = keys.map.keys().next() {
        return Err(ConfigError::Unknown { key: key.clone() });
    }
    for (key, empty) in [
        ("backbone", backbones.is_empty()),
        ("layers", layer_counts.is_empty()),
        ("seeds", seeds.is_empty()),
        ("arms", arms.is_empty()),
    ] {
        if empty {
            return Err(ConfigError::Invalid { key: key.into(), msg: "list is empty".into() });
        }
    }

    Ok(ExperimentConfig {
        task,
        backbones,
        layer_counts,
        hidden,
        activation,
        norm,
        skip,
        heads,
        kernels,
        metric,
        hits_k,
        class_weights,
        dataset,
        split,
        train,
        seeds,
        arms,
        out,
    })
}

fn check_task_dataset(task: Task, dataset: &DatasetSpec) -> Result<(), ConfigError> {
    let ok = matches!(
        (task, dataset.kind()),
        (Task::NodeCls, "sbm")
            | (Task::EdgeCls, "tsp")
            | (Task::GraphReg, "reg")
            | (Task::GraphCls, "cls")
            | (_, "file")
    );
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key: "dataset.kind".into(),
            msg: format!("generator '{}' does not produce {} labels", dataset.kind(), task.name()),
        })
    }
}

impl ExperimentConfig {
    /// Canonical key-value form; parsing it reproduces this config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "task = {}", self.task.name());
        let _ = writeln!(w, "backbone = {}", self.backbones.join(","));
        let _ = writeln!(
            w,
            "layers = {}",
            self.layer_counts.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(w, "hidden = {}", self.hidden);
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Identity => "identity",
        };
        let _ = writeln!(w, "activation = {act}");
        let _ = writeln!(w, "norm = {}", if self.norm == Norm::Batch { "batch" } else { "none" });
        let _ = writeln!(w, "skip = {}", self.skip);
        let _ = writeln!(w, "heads = {}", self.heads);
        let _ = writeln!(w, "kernels = {}", self.kernels);
        let _ = writeln!(w, "metric = {}", self.metric.name());
        let _ = writeln!(w, "hits_k = {}", self.hits_k);
        let _ = writeln!(w, "class_weights = {}", self.class_weights);
        let _ = writeln!(w, "dataset.kind = {}", self.dataset.kind());
        match &self.dataset {
            DatasetSpec::Sbm {
                graphs,
                blocks,
                block_size,
                p_intra,
                p_inter,
                noise,
                semi_supervised,
                ..
            } => {
                let _ = writeln!(w, "dataset.graphs = {graphs}");
                let _ = writeln!(w, "dataset.blocks = {blocks}");
                let _ = writeln!(w, "dataset.block_size = {block_size}");
                let _ = writeln!(w, "dataset.p_intra = {p_intra}");
                let _ = writeln!(w, "dataset.p_inter = {p_inter}");
                let _ = writeln!(w, "dataset.noise = {noise}");
                let _ = writeln!(w, "dataset.semi_supervised = {semi_supervised}");
            }
            DatasetSpec::Tsp { graphs, nodes, neighbors, mode, .. } => {
                let _ = writeln!(w, "dataset.graphs = {graphs}");
                let _ = writeln!(w, "dataset.nodes = {nodes}");
                let _ = writeln!(w, "dataset.neighbors = {neighbors}");
                let _ = writeln!(
                    w,
                    "dataset.tsp_mode = {}",
                    if *mode == TspLabelMode::Exact { "exact" } else { "two_opt" }
                );
            }
            DatasetSpec::Reg { graphs, min_nodes, max_nodes, .. } => {
                let _ = writeln!(w, "dataset.graphs = {graphs}");
                let _ = writeln!(w, "dataset.min_nodes = {min_nodes}");
                let _ = writeln!(w, "dataset.max_nodes = {max_nodes}");
            }
            DatasetSpec::Cls { graphs, min_nodes, max_nodes, classes, .. } => {
                let _ = writeln!(w, "dataset.graphs = {graphs}");
                let _ = writeln!(w, "dataset.min_nodes = {min_nodes}");
                let _ = writeln!(w, "dataset.max_nodes = {max_nodes}");
                let _ = writeln!(w, "dataset.classes = {classes}");
            }
            DatasetSpec::File { path, .. } => {
                let _ = writeln!(w, "dataset.path = {}", path.display());
            }
        }
        let _ = writeln!(w, "dataset.seed = {}", self.dataset.seed());
        let _ = writeln!(w, "split.train = {}", self.split.0);
        let _ = writeln!(w, "split.val = {}", self.split.1);
        let _ = writeln!(w, "split.test = {}", self.split.2);
        let _ = writeln!(w, "train.lr = {}", self.train.lr);
        let _ = writeln!(w, "train.gamma = {}", self.train.gamma);
        let _ = writeln!(w, "train.patience = {}", self.train.patience);
        let _ = writeln!(w, "train.max_epochs = {}", self.train.max_epochs);
        let _ = writeln!(w, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(
            w,
            "seeds = {}",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            w,
            "arms = {}",
            self.arms.iter().map(|a| a.name().to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(w, "out = {}", self.out.display());
        s
    }
}

struct Consumed {
    map: BTreeMap<String, String>,
}

impl Consumed {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn required<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.take(key).ok_or(ConfigError::Missing { key })?;
        raw.parse().map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), msg: e.to_string() })
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), msg: e.to_string() }),
        }
    }

    fn list_str(&mut self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        Ok(self.take(key).map(|raw| {
            raw.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
        }))
    }

    fn list_usize(&mut self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        self.list_generic(key)
    }

    fn list_u64(&mut self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        self.list_generic(key)
    }

    fn list_generic<T: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse().map_err(|e: T::Err| ConfigError::Invalid {
                        key: key.into(),
                        msg: e.to_string(),
                    })
                })
                .collect::<Result<Vec<T>, ConfigError>>()
                .map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults_and_roundtrips() {
        let cfg = parse_config_str("task = node_cls\nbackbone = gcn\ndataset.kind = sbm\n").unwrap();
        assert_eq!(cfg.layer_counts, vec![4]);
        assert_eq!(cfg.hidden, 16);
        assert_eq!(cfg.seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(cfg.arms, vec![Arm::Baseline, Arm::Clfe]);
        assert_eq!(cfg.metric, MetricKind::AccuracyWeighted);
        assert!(cfg.class_weights);
        let again = parse_config_str(&cfg.echo()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err =
            parse_config_str("task = node_cls\nbackbone = gcn\ndataset.kind = sbm\nlayrs = 4\n")
                .unwrap_err();
        assert!(matches!(err, ConfigError::Unknown { ref key } if key == "layrs"), "{err}");
    }

    #[test]
    fn zero_layers_is_a_validation_error() {
        let err =
            parse_config_str("task = node_cls\nbackbone = gcn\ndataset.kind = sbm\nlayers = 0\n")
                .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "layers"));
    }

    #[test]
    fn comments_and_lists_parse() {
        let text = "\
# full line comment
task = edge_cls
backbone = gcn, gat   # two rows
layers = 4,16
dataset.kind = tsp
dataset.nodes = 9
seeds = 1,2
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.backbones, vec!["gcn", "gat"]);
        assert_eq!(cfg.layer_counts, vec![4, 16]);
        assert_eq!(cfg.metric, MetricKind::F1Positive);
        assert_eq!(cfg.seeds, vec![1, 2]);
        let again = parse_config_str(&cfg.echo()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn empty_lists_are_rejected() {
        let err = parse_config_str(
            "task = node_cls\nbackbone = gcn\ndataset.kind = sbm\nseeds = ,\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "seeds"));
    }

    #[test]
    fn task_generator_mismatch_is_rejected() {
        let err = parse_config_str("task = graph_reg\nbackbone = gcn\ndataset.kind = sbm\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "dataset.kind"));
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config_str(
            "task = node_cls\nbackbone = gcn\ndataset.kind = sbm\nhidden = lots\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "hidden"));
    }

    #[test]
    fn every_dataset_kind_roundtrips() {
        for (task, extra) in [
            ("node_cls", "dataset.kind = sbm\ndataset.semi_supervised = true"),
            ("edge_cls", "dataset.kind = tsp\ndataset.tsp_mode = two_opt"),
            ("graph_reg", "dataset.kind = reg\ndataset.min_nodes = 5"),
            ("graph_cls", "dataset.kind = cls\ndataset.classes = 3"),
            ("node_cls", "dataset.kind = file\ndataset.path = graphs.jsonl"),
        ] {
            let text = format!("task = {task}\nbackbone = monet\n{extra}\n");
            let cfg = parse_config_str(&text).unwrap();
            assert_eq!(parse_config_str(&cfg.echo()).unwrap(), cfg);
        }
    }
}

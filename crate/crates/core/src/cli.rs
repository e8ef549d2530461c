//! Command-line surface: gridding, evaluation, dataset synthesis, training,
//! and inference.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gridding::{gridding_forward, voxelize};
use crate::io::{clamp_to_cube, read_cloud, read_grid, write_cloud, write_grid};
use crate::losses::{chamfer_l1, chamfer_l2};
use crate::metrics::{bbox_diagonal, consistency, f_score, fidelity, mmd, uniformity};
use crate::mininet::checkpoint::{load_checkpoint, save_checkpoint};
use crate::mininet::{train_from, MiniNet, Params, Sample};
use crate::reverse::gridding_reverse_forward;
use crate::run_config::RunConfig;
use crate::synth::{generate_complete, split_partial, ShapeKind, ShapeSpec};
use crate::PointCloud;

#[derive(Debug, Parser)]
#[command(
    name = "grnet",
    version,
    about = "Point-cloud gridding, completion, and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid a point cloud with trilinear weights.
    Grid {
        input: PathBuf,
        #[arg(short = 'N', long = "resolution")]
        resolution: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Turn a grid back into a point cloud, one point per nonzero cell.
    Ungrid {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Binary occupancy grid of a point cloud.
    Voxelize {
        input: PathBuf,
        #[arg(short = 'N', long = "resolution")]
        resolution: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare predicted clouds against ground truth; prints CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Partial inputs for fidelity; the ground truth is used when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "cd-l1,cd-l2,fscore")]
        metrics: Vec<String>,
        /// F-Score threshold as a fraction of the ground-truth bounding-box
        /// diagonal [default: 0.01].
        #[arg(long)]
        d: Option<f64>,
        /// Uniformity patch area fraction [default: 0.01].
        #[arg(long)]
        p: Option<f64>,
        /// Uniformity patch count [default: 10].
        #[arg(long)]
        patches: Option<usize>,
        /// Seeds uniformity patch selection [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Run configuration supplying metric defaults; flags take priority.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the CSV here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write complete/ and partial/ clouds of synthetic shapes.
    Synth {
        /// Shape kinds, cycled over the shapes.
        #[arg(long, value_delimiter = ',', default_value = "sphere")]
        kind: Vec<ShapeKind>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.5)]
        partial_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points per complete cloud.
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the completion network on a synthesized dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete a partial cloud with a trained checkpoint.
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds the coarse-point subsampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs one parsed command, writing progress to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::Grid {
            input,
            resolution,
            output,
        } => {
            let (grid, _) = gridding_forward(&read_cloud(&input)?, resolution)?;
            write_grid(&output, &grid)
        }
        Command::Ungrid { input, output } => {
            let (cloud, _) = gridding_reverse_forward(&read_grid(&input)?)?;
            write_cloud(&output, &cloud)
        }
        Command::Voxelize {
            input,
            resolution,
            output,
        } => write_grid(&output, &voxelize(&read_cloud(&input)?, resolution)?),
        Command::Eval {
            pred,
            gt,
            input,
            metrics,
            d,
            p,
            patches,
            seed,
            config,
            output,
        } => {
            let mut run = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            run.fscore_threshold = d.unwrap_or(run.fscore_threshold);
            run.uniformity_p = p.unwrap_or(run.uniformity_p);
            run.uniformity_patches = patches.unwrap_or(run.uniformity_patches);
            run.metric_seed = seed.unwrap_or(run.metric_seed);
            run.validate()?;
            let options = EvalOptions {
                metrics: parse_metrics(&metrics)?,
                d: run.fscore_threshold,
                p: run.uniformity_p,
                patches: run.uniformity_patches,
                seed: run.metric_seed,
            };
            let csv = evaluate(&pred, &gt, input.as_deref(), &options)?;
            match output {
                Some(path) => fs::write(&path, csv).map_err(|e| Error::io(path, e)),
                None => out
                    .write_all(csv.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e)),
            }
        }
        Command::Synth {
            kind,
            count,
            partial_frac,
            seed,
            points,
            output,
        } => synthesize(&kind, count, partial_frac, seed, points, &output),
        Command::Train {
            config,
            data,
            out: ckpt,
        } => {
            let config = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            train_command(&config, &data, &ckpt, out)
        }
        Command::Complete {
            ckpt,
            input,
            out: path,
            seed,
        } => {
            let (config, params) = load_checkpoint(&ckpt)?;
            let net = MiniNet::new(config)?;
            let result = net.forward(&params, &read_cloud(&input)?, seed)?;
            let points = clamp_to_cube(result.complete.points());
            write_cloud(&path, &PointCloud::new(points)?)
        }
    }
}

/// Evaluation metrics in their fixed CSV column order.
pub const METRICS: [&str; 7] = [
    "cd-l1",
    "cd-l2",
    "fscore",
    "uniformity",
    "consistency",
    "fidelity",
    "mmd",
];

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Indices into [`METRICS`], sorted.
    pub metrics: Vec<usize>,
    /// F-Score threshold relative to the ground-truth bounding-box diagonal.
    pub d: f64,
    pub p: f64,
    pub patches: usize,
    pub seed: u64,
}

pub fn parse_metrics(names: &[String]) -> Result<Vec<usize>> {
    let mut picked = Vec::new();
    for name in names {
        let name = name.trim();
        let i = METRICS
            .iter()
            .position(|m| *m == name)
            .ok_or_else(|| Error::Config(format!("unknown metric '{name}'")))?;
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    if picked.is_empty() {
        return Err(Error::Config("no metrics requested".into()));
    }
    picked.sort_unstable();
    Ok(picked)
}

fn is_cloud_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("xyz") || e.eq_ignore_ascii_case("ply"))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Cloud files of a directory keyed by stem.
fn list_clouds(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut found = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !is_cloud_file(&path) {
            continue;
        }
        if let Some(prev) = found.insert(stem_of(&path), path.clone()) {
            return Err(Error::Config(format!(
                "{} and {} share a stem",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(found)
}

/// Pairs two files, or two directories by identical stem, sorted by stem.
/// Stems present on only one side are an error.
pub fn pair_clouds(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    match (a.is_dir(), b.is_dir()) {
        (false, false) => Ok(vec![(stem_of(a), a.to_path_buf(), b.to_path_buf())]),
        (true, true) => {
            let (left, mut right) = (list_clouds(a)?, list_clouds(b)?);
            let mut pairs = Vec::new();
            let mut only_left = Vec::new();
            for (stem, path) in left {
                match right.remove(&stem) {
                    Some(other) => pairs.push((stem, path, other)),
                    None => only_left.push(stem),
                }
            }
            if !only_left.is_empty() || !right.is_empty() {
                return Err(Error::Config(format!(
                    "unmatched stems: only in {}: [{}]; only in {}: [{}]",
                    a.display(),
                    only_left.join(" "),
                    b.display(),
                    right.keys().cloned().collect::<Vec<_>>().join(" ")
                )));
            }
            if pairs.is_empty() {
                return Err(Error::Config(format!("no clouds found in {}", a.display())));
            }
            Ok(pairs)
        }
        _ => Err(Error::Config(format!(
            "{} and {} must both be files or both be directories",
            a.display(),
            b.display()
        ))),
    }
}

/// CSV with a header, one row per pair sorted by stem, and a final `mean`
/// row. Values print in shortest round-trip form; consistency is blank on
/// the first row, where there is no previous frame.
pub fn evaluate(
    pred: &Path,
    gt: &Path,
    input: Option<&Path>,
    opts: &EvalOptions,
) -> Result<String> {
    let pairs = pair_clouds(pred, gt)?;
    let inputs = match input {
        Some(dir) => {
            let by_stem: BTreeMap<String, PathBuf> = pair_clouds(pred, dir)?
                .into_iter()
                .map(|(s, _, i)| (s, i))
                .collect();
            Some(by_stem)
        }
        None => None,
    };
    let mut preds = Vec::with_capacity(pairs.len());
    let mut gts = Vec::with_capacity(pairs.len());
    for (_, p, g) in &pairs {
        preds.push(read_cloud(p)?);
        gts.push(read_cloud(g)?);
    }

    let mut rows: Vec<Vec<Option<f64>>> = Vec::with_capacity(pairs.len());
    for (k, (stem, _, _)) in pairs.iter().enumerate() {
        let (p, g) = (&preds[k], &gts[k]);
        let mut row = Vec::with_capacity(opts.metrics.len());
        for &m in &opts.metrics {
            let value = match METRICS[m] {
                "cd-l1" => Some(chamfer_l1(p, g)?.value),
                "cd-l2" => Some(chamfer_l2(p, g)?.value),
                "fscore" => {
                    let diagonal = bbox_diagonal(g);
                    if diagonal == 0.0 {
                        return Err(Error::Domain(format!(
                            "{stem}: ground truth has a degenerate bounding box; F-Score threshold is undefined"
                        )));
                    }
                    Some(f_score(p, g, opts.d * diagonal)?)
                }
                "uniformity" => Some(uniformity(p, opts.p, opts.patches, opts.seed)?),
                "consistency" => match k {
                    0 => None,
                    _ => Some(consistency(&[preds[k - 1].clone(), p.clone()])?),
                },
                "fidelity" => {
                    let reference = match &inputs {
                        Some(map) => read_cloud(&map[stem])?,
                        None => g.clone(),
                    };
                    Some(fidelity(&reference, p)?)
                }
                "mmd" => Some(mmd(p, &gts)?),
                other => unreachable!("metric {other} is validated on parse"),
            };
            row.push(value);
        }
        rows.push(row);
    }

    let mut csv = String::from("stem");
    for &m in &opts.metrics {
        csv.push(',');
        csv.push_str(METRICS[m]);
    }
    csv.push('\n');
    let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for ((stem, _, _), row) in pairs.iter().zip(&rows) {
        csv.push_str(stem);
        for v in row {
            let _ = write!(csv, ",{}", cell(*v));
        }
        csv.push('\n');
    }
    csv.push_str("mean");
    for c in 0..opts.metrics.len() {
        let present: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
        let mean =
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        let _ = write!(csv, ",{}", cell(mean));
    }
    csv.push('\n');
    Ok(csv)
}

/// Writes `count` shapes as `complete/shape_NNNN.xyz` and
/// `partial/shape_NNNN.xyz` under `dir`.
pub fn synthesize(
    kinds: &[ShapeKind],
    count: usize,
    partial_frac: f64,
    seed: u64,
    points: usize,
    dir: &Path,
) -> Result<()> {
    if kinds.is_empty() {
        return Err(Error::Config("no shape kinds given".into()));
    }
    if count == 0 || points < 2 {
        return Err(Error::Config(
            "count must be positive and points at least 2".into(),
        ));
    }
    if !(partial_frac > 0.0 && partial_frac < 1.0) {
        return Err(Error::Config(format!(
            "partial fraction must lie in (0, 1), got {partial_frac}"
        )));
    }
    let complete_dir = dir.join("complete");
    let partial_dir = dir.join("partial");
    for d in [&complete_dir, &partial_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let shape_seed: u64 = rng.gen();
        let spec = ShapeSpec::random(kinds[i % kinds.len()], points, shape_seed);
        let complete = generate_complete(&spec)?;
        let (partial, _) = split_partial(&complete, partial_frac, shape_seed)?;
        let name = format!("shape_{i:04}.xyz");
        write_cloud(&complete_dir.join(&name), &complete)?;
        write_cloud(&partial_dir.join(&name), &partial)?;
    }
    Ok(())
}

/// Loads `dir/partial` and `dir/complete` pairs, sorted by stem.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    pair_clouds(&dir.join("partial"), &dir.join("complete"))?
        .into_iter()
        .map(|(_, p, c)| {
            Ok(Sample {
                partial: read_cloud(&p)?,
                complete: read_cloud(&c)?,
            })
        })
        .collect()
}

fn train_command(
    config: &RunConfig,
    data: &Path,
    ckpt: &Path,
    out: &mut dyn std::io::Write,
) -> Result<()> {
    let dataset = load_dataset(data)?;
    let train = &config.train;
    let params = Params::init(&train.net, train.seed)?;
    let mut write_error = None;
    let outcome = train_from(&dataset, train, params, |log| {
        let l = &log.loss;
        let line = format!(
            "step={} epoch={} lr={} loss={} coarse_gridding={} complete_gridding={} chamfer={} coarse_chamfer={}\n",
            log.step, log.epoch, log.learning_rate, l.total, l.coarse_gridding, l.complete_gridding,
            l.chamfer, l.coarse_chamfer
        );
        if let Err(e) = out.write_all(line.as_bytes()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(Error::io("<stdout>", e));
    }
    save_checkpoint(ckpt, &train.net, &outcome.params)
}

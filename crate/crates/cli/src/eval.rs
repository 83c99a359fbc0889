use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use metapu_core::data::{make_pair, read_mesh, read_xyz, Manifest, Record, RecordKind, Split, MANIFEST_FILE};
use metapu_core::geom::TriMesh;
use metapu_core::metrics::{evaluate, EmdMethod, MetricReport};
use metapu_core::net::upsample;
use metapu_core::train::Checkpoint;

use crate::config::{default_input_points, parse_scales, write_json, RunConfig};
use crate::exit;
use crate::provenance::sha256_file;
use crate::Common;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory holding the manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated scale factors.
    #[arg(long, default_value = "2,2.5,4")]
    pub scales: String,
    /// JSON report to write.
    #[arg(long)]
    pub report: PathBuf,
    /// Compute the mesh-based metrics (NUC and point-to-surface deviation).
    #[arg(long)]
    pub with_meshes: bool,
    /// Look for meshes as `<model>.off` or `<model>.ply` here instead of the
    /// paths in the manifest. Implies `--with-meshes`.
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Input points per shape; by default 5000 up to R = 4, 4000 up to 6,
    /// 3000 up to 12 and 2500 beyond.
    #[arg(long)]
    pub input_points: Option<usize>,
}

#[derive(Serialize)]
struct ShapeResult {
    name: String,
    #[serde(flatten)]
    metrics: MetricReport,
}

#[derive(Serialize)]
struct ScaleBlock {
    scale: f64,
    input_points: usize,
    output_points: usize,
    aggregate: MetricReport,
    shapes: Vec<ShapeResult>,
}

#[derive(Serialize)]
struct CheckpointInfo {
    path: String,
    sha256: String,
    step: u64,
}

#[derive(Serialize)]
struct Report<'a> {
    tool_version: &'static str,
    config: &'a RunConfig,
    checkpoint: CheckpointInfo,
    manifest: String,
    seed: u64,
    mesh_metrics: bool,
    scales: Vec<ScaleBlock>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.map(|v| mean(v.into_iter()))
}

fn aggregate(shapes: &[ShapeResult]) -> MetricReport {
    let m = || shapes.iter().map(|s| &s.metrics);
    let mut notes: Vec<String> = m().flat_map(|r| r.notes.iter().cloned()).collect();
    notes.sort();
    notes.dedup();
    MetricReport {
        cd: mean(m().map(|r| r.cd)),
        emd: mean(m().map(|r| r.emd)),
        emd_method: if m().all(|r| r.emd_method == EmdMethod::Exact) {
            EmdMethod::Exact
        } else {
            EmdMethod::Sinkhorn
        },
        fscore: mean(m().map(|r| r.fscore)),
        nuc_p008: mean_opt(m().map(|r| r.nuc_p008)),
        dev_mean: mean_opt(m().map(|r| r.dev_mean)),
        dev_std: mean_opt(m().map(|r| r.dev_std)),
        notes,
    }
}

fn find_mesh(record: &Record, dir: &Path, mesh_dir: Option<&Path>) -> anyhow::Result<TriMesh> {
    let path = match mesh_dir {
        Some(d) => ["off", "ply"]
            .iter()
            .map(|ext| d.join(format!("{}.{ext}", record.source_model)))
            .find(|p| p.exists())
            .ok_or_else(|| {
                exit::data(format!(
                    "no mesh for {} in {} (expected {0}.off or {0}.ply)",
                    record.source_model,
                    d.display()
                ))
            })?,
        None => dir.join(record.mesh.as_ref().ok_or_else(|| {
            exit::data(format!("manifest has no mesh for test shape {}", record.source_model))
        })?),
    };
    Ok(read_mesh(&path)?)
}

/// Random stream for one (scale, shape) cell, independent of evaluation order.
fn cell_rng(seed: u64, scale_index: usize, shape_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((scale_index as u64) << 32) | shape_index as u64);
    rng
}

pub fn run(common: &Common, args: EvalArgs) -> anyhow::Result<()> {
    let scales = parse_scales(&args.scales)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    for &r in &scales {
        ckpt.net.check_scale(r)?;
    }
    let mut cfg = RunConfig::resolve(common)?;
    cfg.net = ckpt.net.clone();
    cfg.train = ckpt.train.clone();

    let manifest_file = if args.data.is_file() {
        args.data.clone()
    } else {
        args.data.join(MANIFEST_FILE)
    };
    let dir = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = Manifest::load(&manifest_file)?;
    let mut records: Vec<&Record> = manifest.records(Split::Test, RecordKind::Shape).collect();
    if records.is_empty() {
        records = manifest.records(Split::Test, RecordKind::Patch).collect();
    }
    if records.is_empty() {
        return Err(exit::data(format!("{} has an empty test split", manifest_file.display())));
    }
    let with_meshes = args.with_meshes || args.mesh_dir.is_some();
    let shapes = records
        .iter()
        .map(|r| {
            let cloud = read_xyz(dir.join(&r.path))?;
            let mesh = if with_meshes {
                Some(find_mesh(r, &dir, args.mesh_dir.as_deref())?)
            } else {
                None
            };
            Ok((r.source_model.clone(), cloud, mesh))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut blocks = Vec::new();
    for (si, &r) in scales.iter().enumerate() {
        let n = args.input_points.unwrap_or_else(|| default_input_points(r));
        let results = shapes
            .par_iter()
            .enumerate()
            .map(|(i, (name, dense, mesh))| {
                let mut rng = cell_rng(cfg.seed, si, i);
                let pair = make_pair(dense, r, n, name, &mut rng)?;
                let yp = upsample(&pair.input, r, None, &ckpt.params, &ckpt.net)?;
                let metrics = evaluate(&yp, &pair.target, mesh.as_ref(), &cfg.metrics, &mut rng)?;
                Ok(ShapeResult {
                    name: name.clone(),
                    metrics,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let agg = aggregate(&results);
        println!(
            "event=eval scale={r} shapes={} cd={:.6e} emd={:.6e} fscore={:.4}",
            results.len(),
            agg.cd,
            agg.emd,
            agg.fscore
        );
        blocks.push(ScaleBlock {
            scale: r,
            input_points: n,
            output_points: metapu_core::net::output_count(r, n),
            aggregate: agg,
            shapes: results,
        });
    }
    let unconverged = blocks
        .iter()
        .flat_map(|b| &b.shapes)
        .filter(|s| s.metrics.notes.iter().any(|n| n.contains("max_iters")))
        .count();

    let report = Report {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        checkpoint: CheckpointInfo {
            path: args.ckpt.display().to_string(),
            sha256: sha256_file(&args.ckpt)?,
            step: ckpt.step,
        },
        manifest: manifest_file.display().to_string(),
        seed: cfg.seed,
        mesh_metrics: with_meshes,
        scales: blocks,
    };
    write_json(&args.report, &report)?;
    println!("event=report path={}", args.report.display());
    if unconverged > 0 {
        let msg = format!("EMD Sinkhorn hit its iteration cap for {unconverged} shape/scale cell(s)");
        if common.strict {
            return Err(exit::numeric(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

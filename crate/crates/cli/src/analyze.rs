use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::Serialize;

use metapu_core::data::read_xyz;
use metapu_core::geom::{dist2, normalize_unit_sphere, PointCloud};
use metapu_core::net::{closest_dense_output, receptive_field};
use metapu_core::train::Checkpoint;

use crate::config::{parse_scales, write_json, RunConfig};
use crate::exit;
use crate::provenance::sha256_file;
use crate::Common;

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input XYZ cloud.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated scale factors.
    #[arg(long, default_value = "2,4")]
    pub scales: String,
    /// Output directory for labeled clouds and the summary.
    #[arg(long)]
    pub out: PathBuf,
    /// Input point used as the centroid; defaults to the point nearest the
    /// cloud's center of mass.
    #[arg(long)]
    pub centroid: Option<usize>,
    /// Field threshold relative to the largest gradient magnitude.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

#[derive(Serialize)]
struct ScaleField {
    scale: f64,
    /// Dense output whose gradient is traced back.
    output_index: usize,
    /// Number of input points in the field.
    field_size: usize,
    file: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    tool_version: &'static str,
    config: &'a RunConfig,
    checkpoint_sha256: String,
    input: String,
    centroid: usize,
    threshold: f64,
    fields: Vec<ScaleField>,
}

fn nearest_to_mean(x: &PointCloud) -> usize {
    let n = x.len() as f64;
    let c = x
        .points()
        .iter()
        .fold([0.0; 3], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n, a[2] + p[2] / n]);
    (0..x.len())
        .min_by(|&i, &j| dist2(&x.points()[i], &c).total_cmp(&dist2(&x.points()[j], &c)))
        .expect("non-empty cloud")
}

/// `x y z label` rows; labels are `centroid`, `in_field` and `out_of_field`.
fn labeled(x: &PointCloud, centroid: usize, field: &[usize]) -> String {
    let mut in_field = vec![false; x.len()];
    field.iter().for_each(|&i| in_field[i] = true);
    let mut text = String::new();
    for (i, p) in x.points().iter().enumerate() {
        let label = if i == centroid {
            "centroid"
        } else if in_field[i] {
            "in_field"
        } else {
            "out_of_field"
        };
        let _ = writeln!(text, "{:.16e} {:.16e} {:.16e} {label}", p[0], p[1], p[2]);
    }
    text
}

pub fn run(common: &Common, args: AnalyzeArgs) -> anyhow::Result<()> {
    let scales = parse_scales(&args.scales)?;
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(exit::usage(format!("threshold must lie in (0, 1), got {}", args.threshold)));
    }
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let mut cfg = RunConfig::resolve(common)?;
    cfg.net = ckpt.net.clone();
    cfg.train = ckpt.train.clone();
    let raw = read_xyz(&args.input)?;
    let (x, _, _) = normalize_unit_sphere(&raw);
    let centroid = match args.centroid {
        Some(i) if i >= x.len() => {
            return Err(exit::usage(format!("centroid {i} out of range for {} points", x.len())))
        }
        Some(i) => i,
        None => nearest_to_mean(&x),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut fields = Vec::new();
    for &r in &scales {
        let output_index = closest_dense_output(&x, r, &ckpt.params, &ckpt.net, centroid)?;
        let field = receptive_field(&x, r, &ckpt.params, &ckpt.net, output_index, args.threshold)?;
        let file = format!("rf_R{r}.txt");
        let path = args.out.join(&file);
        fs::write(&path, labeled(&raw, centroid, &field.indices))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("event=field scale={r} centroid={centroid} field_size={}", field.size());
        fields.push(ScaleField {
            scale: r,
            output_index,
            field_size: field.size(),
            file,
        });
    }
    write_json(
        &args.out.join("summary.json"),
        &Summary {
            tool_version: env!("CARGO_PKG_VERSION"),
            config: &cfg,
            checkpoint_sha256: sha256_file(&args.ckpt)?,
            input: args.input.display().to_string(),
            centroid,
            threshold: args.threshold,
            fields,
        },
    )
}

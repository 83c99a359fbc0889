use std::path::PathBuf;

use clap::Args;

use metapu_core::data::{read_xyz, write_xyz};
use metapu_core::geom::{denormalize, normalize_unit_sphere};
use metapu_core::net::{output_count, upsample};
use metapu_core::train::Checkpoint;

use crate::config::RunConfig;
use crate::provenance::{sha256_file, write_sidecar, Provenance};
use crate::Common;

#[derive(Args, Debug)]
pub struct UpsampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input XYZ cloud.
    #[arg(long)]
    pub input: PathBuf,
    /// Scale factor R in (1, r_max]; need not be an integer.
    #[arg(long)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Scale fed to the weight-predicting subnetworks instead of `--scale`.
    /// The output still holds floor(scale * n) points.
    #[arg(long)]
    pub meta_scale: Option<f64>,
    /// Feed raw coordinates instead of normalizing to the unit sphere first.
    #[arg(long)]
    pub no_normalize: bool,
}

pub fn run(common: &Common, args: UpsampleArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let mut cfg = RunConfig::resolve(common)?;
    cfg.net = ckpt.net.clone();
    cfg.train = ckpt.train.clone();
    if let Some(m) = args.meta_scale {
        ckpt.net.check_scale(m)?;
    }
    let x = read_xyz(&args.input)?;
    let out = if args.no_normalize {
        upsample(&x, args.scale, args.meta_scale, &ckpt.params, &ckpt.net)?
    } else {
        let (xn, centroid, radius) = normalize_unit_sphere(&x);
        let y = upsample(&xn, args.scale, args.meta_scale, &ckpt.params, &ckpt.net)?;
        denormalize(&y, &centroid, radius)
    };
    debug_assert_eq!(out.len(), output_count(args.scale, x.len()));
    write_xyz(&args.out, &out)?;
    write_sidecar(
        &args.out,
        &Provenance {
            command: "upsample",
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            checkpoint_sha256: Some(sha256_file(&args.ckpt)?),
            config: &cfg,
            details: serde_json::json!({
                "input": args.input.display().to_string(),
                "input_points": x.len(),
                "scale": args.scale,
                "meta_scale": args.meta_scale,
                "output_points": out.len(),
                "normalized": !args.no_normalize,
            }),
        },
    )?;
    println!(
        "event=upsample input_points={} scale={} output_points={} out={}",
        x.len(),
        args.scale,
        out.len(),
        args.out.display()
    );
    Ok(())
}

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use metapu_core::data::{load_patches, Manifest, Split, MANIFEST_FILE};
use metapu_core::train::{Checkpoint, TraceRow, TrainError, Trainer};

use crate::config::RunConfig;
use crate::exit;
use crate::provenance::{sha256_file, write_sidecar, Provenance};
use crate::Common;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory holding the manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-trace CSV; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Continue from this checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total optimizer steps (overrides epochs).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Stop once this many steps are done; the schedule still spans the
    /// full run, so a later `--resume` continues it unchanged.
    #[arg(long)]
    pub until: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Save a checkpoint every this many steps.
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: u64,
    /// Print a log line every this many steps.
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_file() {
        data.to_path_buf()
    } else {
        data.join(MANIFEST_FILE)
    }
}

/// Rows of an existing trace that precede `step`.
fn trace_prefix(path: &Path, step: u64) -> anyhow::Result<Vec<TraceRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = reader
        .deserialize::<TraceRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| exit::data(format!("{}: {e}", path.display())))?;
    Ok(rows.into_iter().filter(|r| r.step < step).collect())
}

pub fn run(common: &Common, args: TrainArgs) -> anyhow::Result<()> {
    let manifest_file = manifest_path(&args.data);
    let dir = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = Manifest::load(&manifest_file)?;
    let patches = load_patches(&manifest, &dir, Split::Train)?;
    if patches.is_empty() {
        return Err(exit::data(format!("{} has no training patches", manifest_file.display())));
    }
    let trace_path = args.trace.clone().unwrap_or_else(|| args.out.with_extension("csv"));

    let mut cfg = RunConfig::resolve(common)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(steps) = args.steps {
                ckpt.train.max_steps = Some(steps);
            }
            cfg.net = ckpt.net.clone();
            cfg.train = ckpt.train.clone();
            cfg.seed = ckpt.train.seed;
            Trainer::resume(patches, ckpt)?
        }
        None => {
            let t = &mut cfg.train;
            if let Some(v) = args.steps {
                t.max_steps = Some(v);
            }
            if let Some(v) = args.epochs {
                t.epochs = v;
            }
            if let Some(v) = args.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = args.n_max {
                t.n_max = v;
            }
            Trainer::new(patches, cfg.net.clone(), cfg.train.clone())?
        }
    };

    let start = trainer.step_index();
    let prefix = if args.resume.is_some() {
        trace_prefix(&trace_path, start)?
    } else {
        Vec::new()
    };
    let file = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in &prefix {
        writer.serialize(row)?;
    }
    writer.flush()?;

    println!(
        "event=start step={start} total_steps={} patches={} scales={}",
        trainer.total_steps(),
        manifest.records(Split::Train, metapu_core::data::RecordKind::Patch).count(),
        trainer.scales().len()
    );
    let strict = common.strict;
    let mut unconverged = 0u64;
    let result = trainer.run_until(args.until.unwrap_or(u64::MAX), |row, t| {
        writer
            .serialize(row)
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|e| TrainError::Io {
                path: trace_path.clone(),
                source: std::io::Error::other(e),
            })?;
        if !row.converged {
            unconverged += 1;
        }
        let done = t.step_index();
        if args.log_every > 0 && (done % args.log_every == 0 || done == t.total_steps()) {
            println!(
                "event=step step={} R={} loss={:.6e} rec={:.6e} uni={:.6e} rep={:.6e} lr_fc={:.3e} lr_other={:.3e} converged={}",
                row.step, row.r, row.loss, row.rec, row.uni, row.rep, row.lr_fc, row.lr_other, row.converged
            );
        }
        if args.checkpoint_every > 0 && done % args.checkpoint_every == 0 {
            t.checkpoint().save(&args.out)?;
        }
        Ok(())
    });
    // keep whatever was reached so a failed run can be inspected or resumed
    trainer.checkpoint().save(&args.out)?;
    result?;

    let sha = sha256_file(&args.out)?;
    write_sidecar(
        &trace_path,
        &Provenance {
            command: "train",
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            checkpoint_sha256: Some(sha.clone()),
            config: &cfg,
            details: serde_json::json!({
                "manifest": manifest_file.display().to_string(),
                "resumed_from_step": args.resume.as_ref().map(|_| start),
                "final_step": trainer.step_index(),
                "unconverged_steps": unconverged,
            }),
        },
    )?;
    println!(
        "event=done step={} checkpoint={} sha256={sha} trace={}",
        trainer.step_index(),
        args.out.display(),
        trace_path.display()
    );
    if unconverged > 0 {
        let msg = format!("Sinkhorn hit its iteration cap in {unconverged} step(s)");
        if strict {
            return Err(exit::numeric(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

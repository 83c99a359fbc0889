use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use metapu_core::data::{
    build_dataset, builtin_models, read_mesh, Builtin, ModelEntry, ModelInput, ModelSource, Split,
    MANIFEST_FILE,
};

use crate::config::RunConfig;
use crate::exit;
use crate::Common;

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Builtin training shapes, comma separated (sphere, torus, relief, cylinder).
    #[arg(long, value_delimiter = ',')]
    pub builtin: Vec<Builtin>,
    /// Builtin test shapes.
    #[arg(long, value_delimiter = ',')]
    pub test_builtin: Vec<Builtin>,
    /// Directory of OFF/PLY training meshes.
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    /// Directory of OFF/PLY test meshes.
    #[arg(long)]
    pub test_meshes: Option<PathBuf>,
    /// Grid resolution of builtin meshes.
    #[arg(long, default_value_t = 48)]
    pub resolution: usize,
    /// Patches per training model.
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub dense_factor: Option<usize>,
    #[arg(long)]
    pub shape_points: Option<usize>,
    /// Held-out patches per test model.
    #[arg(long)]
    pub test_patches: Option<usize>,
    /// Overwrite a nonempty output directory.
    #[arg(long)]
    pub force: bool,
}

fn mesh_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading mesh directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    files.retain(|p| {
        matches!(
            p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("off" | "ply")
        )
    });
    files.sort();
    if files.is_empty() {
        return Err(exit::data(format!("no .off or .ply meshes in {}", dir.display())));
    }
    Ok(files)
}

fn file_models(dir: &Path, split: Split) -> anyhow::Result<Vec<ModelInput>> {
    mesh_files(dir)?
        .into_iter()
        .map(|path| {
            let mesh = read_mesh(&path)?;
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(ModelInput {
                entry: ModelEntry {
                    name,
                    split,
                    source: ModelSource::File {
                        path: path.display().to_string(),
                    },
                },
                mesh,
            })
        })
        .collect()
}

pub fn run(common: &Common, args: MakeDatasetArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::resolve(common)?;
    let d = &mut cfg.dataset;
    if let Some(v) = args.patches {
        d.patches_per_model = v;
    }
    if let Some(v) = args.n_max {
        d.n_max = v;
    }
    if let Some(v) = args.dense_factor {
        d.dense_factor = v;
    }
    if let Some(v) = args.shape_points {
        d.shape_points = v;
    }
    if let Some(v) = args.test_patches {
        d.test_patches = v;
    }
    if args.out.exists() {
        let nonempty = fs::read_dir(&args.out)
            .with_context(|| format!("reading {}", args.out.display()))?
            .next()
            .is_some();
        if nonempty && !args.force {
            return Err(exit::usage(format!(
                "{} is not empty; pass --force to overwrite",
                args.out.display()
            )));
        }
        if nonempty {
            for sub in ["train", "test"] {
                let p = args.out.join(sub);
                if p.exists() {
                    fs::remove_dir_all(&p).with_context(|| format!("clearing {}", p.display()))?;
                }
            }
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut shapes: Vec<(Builtin, Split)> = args.builtin.iter().map(|&b| (b, Split::Train)).collect();
    shapes.extend(args.test_builtin.iter().map(|&b| (b, Split::Test)));
    let mut models = builtin_models(&shapes, args.resolution);
    if let Some(dir) = &args.meshes {
        models.extend(file_models(dir, Split::Train)?);
    }
    if let Some(dir) = &args.test_meshes {
        models.extend(file_models(dir, Split::Test)?);
    }
    if models.is_empty() {
        return Err(exit::usage("no models: pass --builtin, --test-builtin, --meshes or --test-meshes"));
    }
    let manifest = build_dataset(&models, &cfg.dataset, &args.out)?;
    let train = manifest.records.iter().filter(|r| r.split == Split::Train).count();
    println!(
        "event=dataset models={} train_records={} test_records={} manifest={}",
        manifest.models.len(),
        train,
        manifest.records.len() - train,
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

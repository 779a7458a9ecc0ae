use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use profd_core::data::{
    corrupt_masks, generate_dataset, load_dataset, load_image, save_dataset, CorruptionMode, Dataset, SyntheticSpec,
};
use profd_core::export::{attention_grids, write_pfm};
use profd_core::retrieval::{write_embeddings, MetricsReport};
use profd_core::train::{
    ablation_rows, ablation_suite, embed_samples, evaluate, load_checkpoint, save_checkpoint, AblationTable,
    TrainConfig, TrainState, CHECKPOINT_FILE,
};
use profd_core::Dims;

#[derive(Parser)]
#[command(
    name = "profd",
    version,
    about = "Prompt-guided part features for occluded person re-identification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset in Market1501 layout with PFMK masks.
    GenData {
        /// TOML synthetic spec; every key is optional.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write `checkpoint.pfck`, `train_log.jsonl` and the resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score query against gallery; writes PFEM files and `metrics.json`.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed one split into a PFEM file.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Gallery)]
        split: Split,
    },
    /// Write per-part attention maps of one image as PFM files.
    AttnDump {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory (defaults to the current one).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the attention, memory and loss ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seeds; each row is trained once per seed.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64])]
        seeds: Vec<u64>,
        /// Fraction of masks to corrupt in every split before training.
        #[arg(long, default_value_t = 0.0)]
        corrupt_rate: f64,
        /// Only run rows of this group (attention, memory or losses).
        #[arg(long)]
        group: Option<String>,
        /// Also write the table as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Query,
    Gallery,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::GenData { spec, out } => gen_data(&spec, &out),
        Cmd::Train { config, data, out } => train(&config, &data, &out),
        Cmd::Eval { ckpt, data, out } => eval(&ckpt, &data, out.as_deref()),
        Cmd::Embed { ckpt, data, out, split } => embed(&ckpt, &data, &out, split),
        Cmd::AttnDump { ckpt, image, out } => attn_dump(&ckpt, &image, &out),
        Cmd::Ablate {
            config,
            data,
            seeds,
            corrupt_rate,
            group,
            json,
        } => ablate(&config, &data, &seeds, corrupt_rate, group.as_deref(), json.as_deref()),
    }
}

fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: SyntheticSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    let ds = generate_dataset(&spec)?;
    save_dataset(out, &ds)?;
    println!(
        "wrote {} train, {} query, {} gallery images to {}",
        ds.train.len(),
        ds.query.len(),
        ds.gallery.len(),
        out.display()
    );
    Ok(())
}

/// Dims for reading images before the identity count is known.
fn load_dims(cfg: &TrainConfig) -> Dims {
    cfg.dims(1)
}

fn load_data(path: &Path, dims: &Dims) -> Result<Dataset> {
    load_dataset(path, dims).with_context(|| format!("loading dataset {}", path.display()))
}

fn train(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let ds = load_data(data, &load_dims(&cfg))?;
    if cfg.needs_masks() && !ds.has_masks() {
        bail!(
            "the configured losses need part masks but {} has images without one",
            data.display()
        );
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let t0 = Instant::now();
    let mut st = TrainState::init(cfg, &ds)?;
    let mut failure = None;
    while st.epoch < st.config.schedule.epochs {
        let mut last = None;
        st.train_epoch(&ds, &mut |r| {
            if failure.is_none() {
                if let Err(e) = serde_json::to_writer(&mut log, r)
                    .map_err(anyhow::Error::from)
                    .and_then(|_| {
                        log.write_all(b"\n")?;
                        Ok(())
                    })
                {
                    failure = Some(e);
                }
            }
            last = Some(r.report.total);
        })?;
        if let Some(e) = failure.take() {
            return Err(e.context("writing train_log.jsonl"));
        }
        info!(
            "epoch {}/{} loss {:.4} ({:.1}s)",
            st.epoch,
            st.config.schedule.epochs,
            last.unwrap_or(f64::NAN),
            t0.elapsed().as_secs_f64()
        );
    }
    log.flush()?;
    let path = out.join(CHECKPOINT_FILE);
    save_checkpoint(&path, &st)?;
    println!("checkpoint: {}", path.display());
    Ok(())
}

fn open(ckpt: &Path, data: &Path) -> Result<(TrainState, Dataset)> {
    let st = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let ds = load_data(data, st.model.dims())?;
    Ok((st, ds))
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    #[serde(flatten)]
    metrics: &'a MetricsReport,
    visibility_accuracy: Option<f64>,
}

fn eval(ckpt: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let (st, ds) = open(ckpt, data)?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&out)?;
    let ev = evaluate(&st.model, &ds, st.config.eval.binarize_visibility)?;
    write_embeddings(&out.join("query.pfem"), &ev.query)?;
    write_embeddings(&out.join("gallery.pfem"), &ev.gallery)?;
    let record = EvalRecord {
        metrics: &ev.metrics,
        visibility_accuracy: ev.visibility_accuracy,
    };
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&record)?)?;
    print!("{}", ev.metrics.to_text());
    if let Some(v) = ev.visibility_accuracy {
        println!("visibility_accuracy={v:.6}");
    }
    Ok(())
}

fn embed(ckpt: &Path, data: &Path, out: &Path, split: Split) -> Result<()> {
    let (st, ds) = open(ckpt, data)?;
    let samples = match split {
        Split::Train => &ds.train,
        Split::Query => &ds.query,
        Split::Gallery => &ds.gallery,
    };
    let set = embed_samples(&st.model, samples)?;
    write_embeddings(out, &set)?;
    println!("wrote {} embeddings to {}", set.len(), out.display());
    Ok(())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

fn attn_dump(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let st = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let img = load_image(image, st.model.dims())?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    std::fs::create_dir_all(out)?;
    for (b, parts) in attention_grids(&st.model, &img)?.iter().enumerate() {
        for (grid, name) in parts.iter().zip(&st.model.cfg.parts) {
            let path = out.join(format!("{stem}_block{b}_{}.pfm", slug(name)));
            write_pfm(&path, grid)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn ablate(
    config: &Path,
    data: &Path,
    seeds: &[u64],
    corrupt_rate: f64,
    group: Option<&str>,
    json: Option<&Path>,
) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let mut ds = load_data(data, &load_dims(&cfg))?;
    if corrupt_rate > 0.0 {
        // parser noise hits every split, not just the training images
        for (k, split) in [&mut ds.train, &mut ds.query, &mut ds.gallery].into_iter().enumerate() {
            let n = corrupt_masks(
                split,
                corrupt_rate,
                CorruptionMode::Any,
                cfg.seed.wrapping_add(k as u64),
            )?;
            info!("corrupted {n} of {} masks", split.len());
        }
    }
    let rows: Vec<_> = ablation_rows()
        .into_iter()
        .filter(|r| group.is_none_or(|g| r.group == g))
        .collect();
    if rows.is_empty() {
        bail!("no ablation rows in group {:?}", group.unwrap_or_default());
    }
    let table: AblationTable = ablation_suite(&cfg, &ds, &rows, seeds)?;
    print!("{}", table.to_text());
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

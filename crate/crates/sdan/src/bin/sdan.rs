//! Command-line surface: `train | eval | sr | info | degrade`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric abort.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use sdan::checkpoint::{self, Checkpoint};
use sdan::config::RunConfig;
use sdan::data::{bicubic_resize, read_png, scan_pairs, write_png, PatchSampler};
use sdan::error::{Error, Result};
use sdan::metrics::{psnr, rgb_to_y, ssim};
use sdan::model::{count_flops, count_params, super_resolve, Sdan};
use sdan::optim::{train, TrainStatus};

#[derive(Parser)]
#[command(name = "sdan", version, about = "Lightweight single-image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run-config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Progress line interval in iterations (0 disables).
        #[arg(long, default_value_t = 100)]
        log_interval: usize,
    },
    /// Evaluate a checkpoint on a dataset: Y-channel PSNR/SSIM per image.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scale: usize,
    },
    /// Super-resolve one PNG.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Report parameter and FLOP counts for a config or checkpoint.
    Info {
        #[arg(long, conflicts_with = "model")]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Crop HR images to a multiple of the scale and write the LR_x{s} tree.
    Degrade {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        scale: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, log_interval } => cmd_train(&config, log_interval),
        Command::Eval { model, data, scale } => cmd_eval(&model, &data, scale),
        Command::Sr { model, input, output } => cmd_sr(&model, &input, &output),
        Command::Info { config, model } => cmd_info(config.as_deref(), model.as_deref()),
        Command::Degrade { hr, scale } => cmd_degrade(&hr, scale),
    }
}

fn cmd_train(config_path: &Path, log_interval: usize) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", config_path.display())))?;
    let cfg = RunConfig::parse(&text)?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let resolved_path = cfg.out_dir.join("config.resolved");
    fs::write(&resolved_path, cfg.to_text()).map_err(|e| Error::io(&resolved_path, e))?;

    let pairs = scan_pairs(&cfg.data_root, cfg.model.scale)?;
    let mut sampler = PatchSampler::new(&pairs, cfg.train.patch_size, cfg.train.seed)?;

    let model: Sdan<f32> = Sdan::new(&cfg.model, cfg.train.seed)?;
    let log_path = cfg.out_dir.join("run.log");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let outcome = train(&model, &mut sampler, &cfg.train, log_interval, |record| {
        println!("{record}");
        let _ = writeln!(log, "{record}");
    })?;

    let ckpt_path = cfg.out_dir.join("model.ckpt");
    checkpoint::save(&ckpt_path, &outcome.checkpoint)?;

    match outcome.status {
        TrainStatus::Completed => Ok(()),
        TrainStatus::AbortedNonFinite { at_iter } => Err(Error::numeric(format!(
            "training aborted at iteration {at_iter} on a non-finite loss; \
             last good checkpoint saved to {}",
            ckpt_path.display()
        ))),
    }
}

fn cmd_eval(model_path: &Path, data_root: &Path, scale: usize) -> Result<()> {
    let (model, ckpt) = checkpoint::load_model(model_path, true)?;
    if ckpt.config.scale != scale {
        return Err(Error::config(format!(
            "checkpoint was trained for scale {}, requested {scale}",
            ckpt.config.scale
        )));
    }
    let pairs = scan_pairs(data_root, scale)?;
    if pairs.pairs.is_empty() {
        return Err(Error::data(format!("no image pairs under {}", data_root.display())));
    }
    let shave = scale;
    let mut sum_psnr = 0.0;
    let mut sum_ssim = 0.0;
    let mut sum_bi_psnr = 0.0;
    let mut sum_bi_ssim = 0.0;
    let count = pairs.pairs.len() as f64;
    for pair in &pairs.pairs {
        let lr = read_png(&pair.lr_path)?;
        let hr = read_png(&pair.hr_path)?;
        if hr.width != scale * lr.width || hr.height != scale * lr.height {
            return Err(Error::config(format!(
                "pair '{}': HR {}x{} is not {scale}x the LR {}x{}",
                pair.stem, hr.width, hr.height, lr.width, lr.height
            )));
        }
        let sr = super_resolve(&model, &lr)?;
        let y_hr = rgb_to_y(&hr);
        let y_sr = rgb_to_y(&sr);
        let p = psnr(&y_hr, &y_sr, shave)?;
        let s = ssim(&y_hr, &y_sr, shave)?;
        let bicubic = bicubic_resize(&lr, hr.width, hr.height)?;
        let y_bi = rgb_to_y(&bicubic);
        let bp = psnr(&y_hr, &y_bi, shave)?;
        let bs = ssim(&y_hr, &y_bi, shave)?;
        println!("image={} psnr={:.4} ssim={:.6}", pair.stem, p, s);
        sum_psnr += p;
        sum_ssim += s;
        sum_bi_psnr += bp;
        sum_bi_ssim += bs;
    }
    println!("aggregate psnr={:.4} ssim={:.6}", sum_psnr / count, sum_ssim / count);
    println!(
        "bicubic_baseline psnr={:.4} ssim={:.6}",
        sum_bi_psnr / count,
        sum_bi_ssim / count
    );
    Ok(())
}

fn cmd_sr(model_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let (model, _) = checkpoint::load_model(model_path, true)?;
    let img = read_png(input)?;
    let sr = super_resolve(&model, &img)?;
    write_png(output, &sr)
}

fn cmd_info(config: Option<&Path>, model: Option<&Path>) -> Result<()> {
    let model_cfg = match (config, model) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text)?.model
        }
        (None, Some(path)) => {
            let ckpt: Checkpoint<f32> = checkpoint::load(path)?;
            ckpt.config
        }
        _ => return Err(Error::config("info: pass exactly one of --config or --model")),
    };
    let params = count_params(&model_cfg);
    let flops = count_flops(&model_cfg, 720, 1280);
    println!("params={params} flops_x{}@1280x720={flops}", model_cfg.scale);
    Ok(())
}

fn cmd_degrade(hr_dir: &Path, scale: usize) -> Result<()> {
    if !matches!(scale, 2 | 3 | 4) {
        return Err(Error::config(format!("scale must be 2, 3 or 4, got {scale}")));
    }
    let entries = fs::read_dir(hr_dir)
        .map_err(|e| Error::data(format!("cannot read directory {}: {e}", hr_dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::data(format!("no PNG files in {}", hr_dir.display())));
    }
    let parent = hr_dir.parent().unwrap_or_else(|| Path::new("."));
    let lr_dir = parent.join(format!("LR_x{scale}"));
    fs::create_dir_all(&lr_dir).map_err(|e| Error::io(&lr_dir, e))?;
    for path in files {
        let img = read_png(&path)?;
        let w = (img.width / scale) * scale;
        let h = (img.height / scale) * scale;
        if w == 0 || h == 0 {
            return Err(Error::data(format!(
                "{}: {}x{} too small for scale {scale}",
                path.display(),
                img.width,
                img.height
            )));
        }
        let cropped = if (w, h) == (img.width, img.height) {
            img
        } else {
            let cropped = img.crop(0, 0, w, h)?;
            write_png(&path, &cropped)?;
            cropped
        };
        let lr = bicubic_resize(&cropped, w / scale, h / scale)?;
        let name = path.file_name().expect("png file name");
        write_png(&lr_dir.join(name), &lr)?;
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use image::Rgb;

use lesionseg::ablation::{run_ablation, AblationConfig, DetectorUse};
use lesionseg::data::{
    load_all, load_image, read_manifest, save_mask_png, split, synth_dataset, tensor_to_rgb, SynthConfig,
};
use lesionseg::detector::{BBox, Detector};
use lesionseg::error::{Error, Result};
use lesionseg::nn::{SegMentorConfig, Segmentor};
use lesionseg::pipeline::{Fallback, Pipeline, PipelineConfig};
use lesionseg::train::{read_config, run_segmentor_schedule, train_detector, DetectorTrainConfig, SegmentorTrainConfig, StageKind};

#[derive(Parser)]
#[command(name = "lesionseg", version, about = "Lesion detection and segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with images/, masks/ and meta.jsonl.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the detector in RPN, head and joint stages.
    TrainDetector {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the segmentor through its staged schedule and write a pipeline config.
    TrainSegmentor {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stage list such as "AE_ONLY:5,HG_1_ONLY:5,END_TO_END:15".
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Detector checkpoint to reference from the written pipeline config.
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Segment one image.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the box overlay, crops, crop masks and restored mask.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Evaluate a pipeline over a manifest.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hourglass-count ablation with and without the detector.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        hg: Vec<usize>,
        #[arg(long, default_value = "both")]
        with_detector: DetectorUse,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Checkpoint directory; defaults to a sibling of --out.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { count, size, out, seed } => {
            let records = synth_dataset(&out, count, size, seed, &SynthConfig::default())?;
            println!("wrote {} samples to {}", records.len(), out.display());
            Ok(())
        }
        Command::TrainDetector { manifest, config, out } => {
            let cfg: DetectorTrainConfig = read_config(config.as_deref())?;
            let samples = load_all(&read_manifest(&manifest)?)?;
            let (train, val) = split(&samples, cfg.val_count, cfg.seed)?;
            let mut det = Detector::new(cfg.arch.clone(), cfg.seed)?;
            let report = train_detector(&mut det, &cfg.schedule(&out), &train, &val, &cfg.options)?;
            println!("detector checkpoint: {}", report.final_checkpoint.display());
            if let Some(v) = report.final_val() {
                println!("{}: {v:.4}", report.val_metric_name);
            }
            Ok(())
        }
        Command::TrainSegmentor { manifest, config, stages, out, detector } => {
            let cfg: SegmentorTrainConfig = read_config(config.as_deref())?;
            let samples = load_all(&read_manifest(&manifest)?)?;
            let (train, val) = split(&samples, cfg.val_count, cfg.seed)?;
            let schedule = cfg.schedule(stages.as_deref(), &out)?;
            // Hourglasses are grown by the schedule when it starts from the bare autoencoder.
            let start = match schedule.stages.first().map(|s| s.kind) {
                Some(StageKind::AeOnly) => 0,
                _ => cfg.arch.hourglass_count,
            };
            let mut seg = Segmentor::new(SegMentorConfig { hourglass_count: start, ..cfg.arch.clone() }, cfg.seed)?;
            let report = run_segmentor_schedule(&mut seg, &schedule, &train, &val, &cfg.options)?;
            let detector_checkpoint = detector.map(|d| std::path::absolute(&d)).transpose()?;
            let pcfg = PipelineConfig {
                detector_checkpoint,
                segmentor_checkpoint: PathBuf::from(report.final_checkpoint.file_name().expect("checkpoint file")),
                segmentor_arch: seg.config().clone(),
                score_threshold: 0.5,
                nms_threshold: 0.5,
                fallback: Fallback::WholeImage,
            };
            let pipeline_path = out.join("pipeline.json");
            std::fs::write(&pipeline_path, serde_json::to_string_pretty(&pcfg)?)?;
            println!("segmentor checkpoint: {}", report.final_checkpoint.display());
            if let Some(v) = report.final_val() {
                println!("{}: {v:.4}", report.val_metric_name);
            }
            println!("pipeline config: {}", pipeline_path.display());
            Ok(())
        }
        Command::Infer { config, image, out, debug_dir } => {
            let pipeline = Pipeline::load(PipelineConfig::from_file(&config)?)?;
            let img = load_image(&image)?;
            let seg = pipeline.segment_image(&img)?;
            save_mask_png(&seg.mask, &out)?;
            for b in &seg.boxes {
                println!("box {:.1} {:.1} {:.1} {:.1}", b.x1, b.y1, b.x2, b.y2);
            }
            if let Some(dir) = debug_dir {
                write_panels(&dir, &img, &seg)?;
            }
            Ok(())
        }
        Command::Eval { config, manifest, out } => {
            let pipeline = Pipeline::load(PipelineConfig::from_file(&config)?)?;
            let report = pipeline.evaluate(&read_manifest(&manifest)?)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            print!("{}", report.to_table());
            let failures = report.failures();
            if failures > 0 {
                return Err(Error::Contract(format!("{failures} records failed to evaluate")));
            }
            Ok(())
        }
        Command::Ablate { manifest, hg, with_detector, out, config, seeds, work_dir } => {
            let mut cfg: AblationConfig = read_config(config.as_deref())?;
            cfg.hourglass_counts = hg;
            cfg.detector_use = with_detector;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let work = work_dir.unwrap_or_else(|| out.with_extension("work"));
            let samples = load_all(&read_manifest(&manifest)?)?;
            let table = run_ablation(&samples, &cfg, &work)?;
            let text = table.to_text();
            std::fs::write(&out, &text)?;
            std::fs::write(out.with_extension("json"), serde_json::to_string_pretty(&table)?)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn draw_box(img: &mut image::RgbImage, b: &BBox) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x1 = (b.x1.floor() as i64).clamp(0, w - 1);
    let y1 = (b.y1.floor() as i64).clamp(0, h - 1);
    let x2 = (b.x2.ceil() as i64 - 1).clamp(0, w - 1);
    let y2 = (b.y2.ceil() as i64 - 1).clamp(0, h - 1);
    let red = Rgb([255, 0, 0]);
    for x in x1..=x2 {
        img.put_pixel(x as u32, y1 as u32, red);
        img.put_pixel(x as u32, y2 as u32, red);
    }
    for y in y1..=y2 {
        img.put_pixel(x1 as u32, y as u32, red);
        img.put_pixel(x2 as u32, y as u32, red);
    }
}

fn write_panels(dir: &Path, img: &lesionseg::tensor::Tensor, seg: &lesionseg::pipeline::Segmentation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut overlay = tensor_to_rgb(img)?;
    for b in &seg.boxes {
        draw_box(&mut overlay, b);
    }
    overlay.save(dir.join("overlay.png"))?;
    for (k, c) in seg.crops.iter().enumerate() {
        tensor_to_rgb(&c.crop)?.save(dir.join(format!("crop_{k}.png")))?;
        save_mask_png(&c.crop_mask, &dir.join(format!("crop_mask_{k}.png")))?;
    }
    save_mask_png(&seg.mask, &dir.join("restored.png"))
}

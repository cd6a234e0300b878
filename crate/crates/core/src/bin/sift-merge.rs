use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sift_merge::error::{Error, Stage};
use sift_merge::features::fitting_octaves;
use sift_merge::pipeline::{self, synthetic, PipelineConfig};
use sift_merge::raster::{load_image, save_gray16, save_image, GrayImage, RasterImage};
use sift_merge::scale_space::{build_dog_pyramid, build_gaussian_pyramid, PyramidConfig};

#[derive(Parser)]
#[command(name = "sift-merge", version, about = "Keypoint-seeded region merging object detector")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. `--set ratio_threshold=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an object model from training images.
    Train {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Detect the trained object in a test image.
    Detect {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        image: PathBuf,
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        merge_log: Option<PathBuf>,
        /// Write label map, region colours and DoG planes here.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Compute the accuracy rate over a directory or generated scenes.
    Eval {
        #[arg(short, long, required_unless_present = "synthetic")]
        model: Option<PathBuf>,
        #[arg(short = 'd', long, required_unless_present = "synthetic")]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Evaluate N generated texture seeds (two scenes each) instead of a directory.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write generated training images, scenes and truth masks.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output<T>(r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        s @ Error::Staged { .. } => s,
        other => Error::Staged {
            stage: Stage::Output,
            source: Box::new(other),
        },
    })
}

fn dump_debug(dir: &Path, img: &RasterImage, det: &pipeline::Detection, cfg: &PipelineConfig) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let l = &det.labels;
    save_gray16(l.width, l.height, &l.to_u16(), dir.join("labels.pgm"))?;
    save_image(&RasterImage::Rgb(l.colorize()), dir.join("regions.ppm"))?;
    let gray = img.to_gray();
    let pyramid = PyramidConfig {
        num_octaves: fitting_octaves(gray.width(), gray.height(), cfg.features.pyramid.num_octaves),
        ..cfg.features.pyramid
    };
    let dog = build_dog_pyramid(&build_gaussian_pyramid(&gray, &pyramid)?);
    for (o, planes) in dog.octaves.iter().enumerate() {
        for (p, plane) in planes.iter().enumerate() {
            // map [-0.1, 0.1] onto the full gray range
            let vis = GrayImage::from_fn(plane.width(), plane.height(), |x, y| 0.5 + 5.0 * plane.get(x, y));
            save_image(&RasterImage::Gray(vis), dir.join(format!("dog_o{o}_p{p}.pgm")))?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli).map_err(|e| Error::Staged {
        stage: Stage::Config,
        source: Box::new(e),
    })?;
    match &cli.command {
        Command::Train { output: out, name, images } => {
            let model = pipeline::train_paths(images, name.as_deref(), &cfg)?;
            output(pipeline::save_model(&model, out))?;
            if cli.verbose {
                eprintln!("trained {} entries from {} image(s)", model.len(), model.source_count);
            }
            println!("{}: {} keypoints", out.display(), model.len());
        }
        Command::Detect {
            model,
            image,
            overlay,
            mask,
            merge_log,
            dump_dir,
        } => {
            let model = pipeline::load_model(model).map_err(|e| Error::Staged {
                stage: Stage::Load,
                source: Box::new(e),
            })?;
            let img = load_image(image).map_err(|e| Error::Staged {
                stage: Stage::Load,
                source: Box::new(e),
            })?;
            let det = pipeline::detect(&model, &img, &cfg)?;
            let r = &det.result;
            if cli.verbose {
                eprintln!(
                    "{} matches, {} initial regions, seeds object={} background={}, {} merges",
                    det.matches.len(),
                    det.initial_regions,
                    r.seed_counts.object,
                    r.seed_counts.background,
                    r.merge_steps
                );
            }
            if let Some(p) = overlay {
                output(save_image(&RasterImage::Rgb(pipeline::overlay(&img.to_rgb(), &det)), p))?;
            }
            if let Some(p) = mask {
                output(save_image(&pipeline::mask_image(r), p))?;
            }
            if let Some(p) = merge_log {
                output(std::fs::write(p, &det.merge_log).map_err(Error::from))?;
            }
            if let Some(dir) = dump_dir {
                output(dump_debug(dir, &img, &det, &cfg))?;
            }
            println!(
                "object pixels={} contours={} matches={}",
                r.object_pixels(),
                r.boundaries.len(),
                det.matches.len()
            );
        }
        Command::Eval {
            model,
            test_dir,
            truth,
            synthetic: n,
            seed,
            report,
        } => {
            let rep = match n {
                Some(n) => pipeline::evaluate_synthetic(*n, *seed, &cfg)?,
                None => {
                    let (Some(model), Some(dir)) = (model, test_dir) else {
                        return Err(Error::Parameter("eval needs --model and --test-dir".into()));
                    };
                    let model = pipeline::load_model(model).map_err(|e| Error::Staged {
                        stage: Stage::Load,
                        source: Box::new(e),
                    })?;
                    pipeline::evaluate(&model, dir, truth.as_deref(), &cfg)?
                }
            };
            let text = rep.to_text();
            if let Some(p) = report {
                output(std::fs::write(p, &text).map_err(Error::from))?;
            }
            print!("{text}");
        }
        Command::Synth { output: out, count, seed } => {
            output((|| {
                std::fs::create_dir_all(out)?;
                for i in 0..*count as u64 {
                    let texture = synthetic::ObjectTexture::random(seed + i);
                    save_image(
                        &RasterImage::Rgb(synthetic::training_image(&texture)),
                        out.join(format!("train_seed{}.ppm", seed + i)),
                    )?;
                }
                for case in synthetic::synthetic_suite(*count, *seed) {
                    save_image(&RasterImage::Rgb(case.scene.image.clone()), out.join(format!("{}.ppm", case.name)))?;
                    let mask = GrayImage::from_fn(synthetic::SCENE_SIZE, synthetic::SCENE_SIZE, |x, y| {
                        case.scene.truth[y * synthetic::SCENE_SIZE + x] as u8 as f64
                    });
                    save_image(&RasterImage::Gray(mask), out.join(format!("{}_mask.pgm", case.name)))?;
                }
                Ok(())
            })())?;
            println!("wrote {} scene(s) to {}", count * 2, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // anything not raised inside a stage is an argument or parameter problem
            let e = match e {
                s @ Error::Staged { .. } => s,
                other => Error::Staged {
                    stage: Stage::Config,
                    source: Box::new(other),
                },
            };
            eprintln!("error: {e}");
            if e.is_object_not_found() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

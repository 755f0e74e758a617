use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use shufseg::analysis::{count_costs, lint_guidelines, CostScope};
use shufseg::bench::{bench_image, synthetic_image, BenchConfig, BenchResult};
use shufseg::data::{blend, load_image, load_mask, preprocess, save_image, save_mask, Palette};
use shufseg::graph::{build_network, calibrate_batch_norm, forward, Graph, HeadKind, NetworkSpec};
use shufseg::metrics::{mean_present, ConfusionMatrix, Grouping};
use shufseg::train::{poly_lr, ScheduleConfig};
use shufseg::weights::{self, fold_all, init_random, WeightManifest};
use shufseg::Shape;

#[derive(Debug, Parser)]
#[command(
    name = "shufseg",
    version,
    about = "Lightweight semantic segmentation on the CPU"
)]
struct Cli {
    #[command(flatten)]
    net: NetArgs,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct NetArgs {
    #[arg(long, global = true, value_enum, default_value_t = Head::Dpc)]
    head: Head,
    #[arg(long, global = true, default_value_t = 16, value_parser = parse_output_stride)]
    output_stride: usize,
    #[arg(long, global = true, default_value_t = 19)]
    classes: usize,
    /// Weight file stem (`STEM.manifest` + `STEM.bin`); random weights when absent.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Head {
    Basic,
    Dpc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scope {
    Backbone,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Pretrain,
    FineTune,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer FLOPs, parameters and memory access.
    Analyze {
        /// Input size as WIDTHxHEIGHT.
        #[arg(long, default_value = "640x360", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, value_enum, default_value_t = Scope::Full)]
        scope: Scope,
        /// Count the graph with batch norms folded into convolutions.
        #[arg(long)]
        folded: bool,
        /// Also report design-guideline findings.
        #[arg(long)]
        lint: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Segments one image into a label PNG.
    Infer {
        input: PathBuf,
        /// Label map (one byte per pixel, the class id).
        #[arg(long, short)]
        output: PathBuf,
        /// Colorized prediction blended over the input.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Colour table, `id r g b name` per line; Cityscapes colours by default.
        #[arg(long)]
        palette: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
    },
    /// Latency over timed frames after a wall-clock warm-up.
    Bench {
        /// Image to run on; a seeded noise image otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Size of the noise image, WIDTHxHEIGHT.
        #[arg(long, default_value = "224x224", value_parser = parse_size)]
        size: (usize, usize),
        /// Intra-op threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        /// Warm-up duration in seconds.
        #[arg(long, default_value_t = 30.0)]
        warmup: f64,
        /// Time the forward pass only.
        #[arg(long)]
        no_pre_post: bool,
        #[arg(long, conflicts_with = "json")]
        csv: bool,
        #[arg(long)]
        json: bool,
    },
    /// Mean IOU of prediction label PNGs against ground truth with the same names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Class grouping, `class_id category` per line.
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Learning-rate schedule as CSV.
    LrTable {
        #[arg(long, value_enum, default_value_t = Preset::FineTune)]
        preset: Preset,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_iter: Option<u64>,
        #[arg(long)]
        power: Option<f64>,
        /// Print every N-th step.
        #[arg(long, default_value_t = 1000)]
        every: u64,
    },
    /// Graph document as JSON.
    ExportGraph {
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Writes seeded random weights for the configured network.
    InitWeights {
        /// Output stem; writes STEM.manifest and STEM.bin.
        output: PathBuf,
        /// Set batch-norm statistics from a noise image so activations stay at unit scale.
        #[arg(long)]
        calibrate: bool,
    },
}

fn parse_output_stride(s: &str) -> Result<usize, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("`{s}` is not 8 or 16")),
    }
}

/// `WIDTHxHEIGHT` to `(height, width)`.
fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not WIDTHxHEIGHT"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{v}` is not a positive integer")),
    };
    Ok((dim(h)?, dim(w)?))
}

impl NetArgs {
    fn graph(&self) -> Result<Graph> {
        let spec = NetworkSpec {
            head: match self.head {
                Head::Basic => HeadKind::Basic,
                Head::Dpc => HeadKind::Dpc,
            },
            output_stride: self.output_stride,
            num_classes: self.classes,
            ..Default::default()
        };
        build_network(&spec).context("building network")
    }

    fn weights(&self, graph: &Graph) -> Result<WeightManifest> {
        match &self.weights {
            Some(stem) => {
                let w = WeightManifest::load(stem)
                    .with_context(|| format!("loading weights {}", stem.display()))?;
                let report = weights::validate(&w, graph)?;
                ensure!(
                    report.is_clean(),
                    "weights do not match the network:\n{report}"
                );
                Ok(w)
            }
            None => {
                log::info!(
                    "no --weights given, using random weights (seed {})",
                    self.seed
                );
                Ok(init_random(graph, self.seed)?)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let net = &cli.net;
    match cli.cmd {
        Command::Analyze {
            size,
            scope,
            folded,
            lint,
            csv,
        } => {
            let mut graph = net.graph()?;
            if folded {
                graph = fold_all(&net.weights(&graph)?, &graph)?.1;
            }
            let scope = match scope {
                Scope::Backbone => CostScope::Backbone,
                Scope::Full => CostScope::Full,
            };
            let input = Shape::new(1, 3, size.0, size.1)?;
            let report = count_costs(&graph, input, scope)?;
            if csv {
                print!("{}", report.to_csv());
            } else {
                print!("{}", report.to_table());
            }
            if lint {
                let findings = lint_guidelines(&graph)?;
                eprintln!("element-wise nodes: {}", findings.elementwise_nodes);
                for f in &findings.findings {
                    eprintln!("{:?} {}: {}", f.rule, f.name, f.message);
                }
            }
        }
        Command::Infer {
            input,
            output,
            overlay,
            palette,
            alpha,
        } => {
            ensure!(
                (0.0..=1.0).contains(&alpha),
                "--alpha must be in [0, 1], got {alpha}"
            );
            let palette = load_palette(palette.as_deref(), net.classes)?;
            let graph = net.graph()?;
            let w = net.weights(&graph)?;
            let img = load_image(&input)?;
            let out = forward(&graph, &w, &preprocess(&img))?;
            let labels = &out.labels[0];
            save_mask(&output, labels)?;
            if let Some(path) = overlay {
                save_image(&path, &blend(&img, &palette.colorize(labels), alpha))?;
            }
        }
        Command::Bench {
            input,
            size,
            threads,
            frames,
            warmup,
            no_pre_post,
            csv,
            json,
        } => {
            let graph = net.graph()?;
            let w = net.weights(&graph)?;
            let cfg = BenchConfig {
                warmup_seconds: warmup,
                frames,
                input_size: size,
                threads,
                include_pre_post: !no_pre_post,
                seed: net.seed,
            };
            let img = match input {
                Some(p) => load_image(&p)?,
                None => synthetic_image(size.0, size.1, net.seed),
            };
            let r = bench_image(&graph, &w, &cfg, &img)?;
            if csv {
                println!("{}", BenchResult::csv_header());
                println!("{}", r.to_csv_row());
            } else if json {
                println!("{}", r.to_json());
            } else {
                print!("{}", r.to_text());
            }
        }
        Command::Eval {
            pred,
            gt,
            categories,
        } => eval(net.classes, &pred, &gt, categories.as_deref())?,
        Command::LrTable {
            preset,
            lr,
            max_iter,
            power,
            every,
        } => {
            ensure!(every > 0, "--every must be positive");
            let mut cfg = match preset {
                Preset::Pretrain => ScheduleConfig::pretrain(),
                Preset::FineTune => ScheduleConfig::fine_tune(),
            };
            cfg.lr_initial = lr.unwrap_or(cfg.lr_initial);
            cfg.max_iter = max_iter.unwrap_or(cfg.max_iter);
            cfg.power = power.unwrap_or(cfg.power);
            cfg.validate().map_err(anyhow::Error::msg)?;
            println!("step,lr");
            let mut k = 0;
            while k <= cfg.max_iter {
                println!("{k},{:e}", poly_lr(k, &cfg));
                k += every;
            }
        }
        Command::ExportGraph { output } => {
            let doc = net.graph()?.to_document();
            match output {
                Some(p) => {
                    fs::write(&p, doc).with_context(|| format!("writing {}", p.display()))?
                }
                None => println!("{doc}"),
            }
        }
        Command::InitWeights { output, calibrate } => {
            let graph = net.graph()?;
            let mut w = init_random(&graph, net.seed)?;
            if calibrate {
                let img = preprocess(&synthetic_image(224, 224, net.seed));
                calibrate_batch_norm(&graph, &mut w, &img)?;
            }
            w.save(&output)?;
        }
    }
    Ok(())
}

fn load_palette(path: Option<&Path>, classes: usize) -> Result<Palette> {
    let palette = match path {
        Some(p) => Palette::load(p)?,
        None => Palette::cityscapes(),
    };
    if palette.len() < classes {
        bail!(
            "palette has {} colours for {classes} classes; pass --palette",
            palette.len()
        );
    }
    Ok(palette)
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval(classes: usize, pred: &Path, gt: &Path, categories: Option<&Path>) -> Result<()> {
    let names = png_names(gt)?;
    ensure!(!names.is_empty(), "no PNG files in {}", gt.display());
    let mut cm = ConfusionMatrix::new(classes);
    for name in &names {
        let p = pred.join(name);
        ensure!(p.exists(), "no prediction for {name} in {}", pred.display());
        cm.update(&load_mask(&p)?, &load_mask(&gt.join(name))?)
            .with_context(|| name.clone())?;
    }
    let class_names: Vec<String> = if classes == 19 {
        Palette::cityscapes().names().to_vec()
    } else {
        (0..classes).map(|c| format!("class_{c}")).collect()
    };
    println!(
        "images {}  pixels {}  ignored {}",
        names.len(),
        cm.total(),
        cm.ignored_pixels()
    );
    print_ious(&class_names, &cm.class_iou());
    println!("mIOU {}", fmt_iou(cm.mean_iou()));
    if let Some(path) = categories {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let grouping = Grouping::parse(classes, &text)?;
        let ious = cm.category_iou(&grouping)?;
        print_ious(grouping.names(), &ious);
        println!("category mIOU {}", fmt_iou(mean_present(&ious)));
    }
    Ok(())
}

fn fmt_iou(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn print_ious(names: &[String], ious: &[Option<f64>]) {
    let width = names.iter().map(String::len).max().unwrap_or(0);
    for (name, iou) in names.iter().zip(ious) {
        println!("  {name:<width$}  {}", fmt_iou(*iou));
    }
}

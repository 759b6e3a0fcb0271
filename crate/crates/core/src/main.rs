use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use layoutjoint::depth::{layout_to_depth, refine_layout};
use layoutjoint::dump::{encode_state, mask_sidecar, mask_to_pgm};
use layoutjoint::eval::{evaluate_suite, EvalReport};
use layoutjoint::layout::{layout_to_json, load_layout, LayoutDocument, ValidatedLayout};
use layoutjoint::mask::{build_mask, MaskConfig};
use layoutjoint::pipeline::{run_layout, PipelineSettings};
use layoutjoint::suite::{generate_suite, SuiteOptions};
use layoutjoint::tokens::AttributeVocab;

const SEED_ENV: &str = "LAYOUTJOINT_SEED";

#[derive(Parser)]
#[command(name = "layoutjoint", version, about = "Layout-driven joint-attention masks, toy sampler and MIoU/ISR evaluation")]
struct Cli {
    /// JSON file whose keys stand in for flags; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write PGM masks and JSON sidecars for steps 0, gamma-1, gamma and the last step.
    BuildMask(LayoutArgs),
    /// Render one layout with the toy sampler and judge every instance.
    Run(LayoutArgs),
    /// Evaluate a generated suite or a directory of layouts.
    Evaluate(EvalArgs),
    /// Write the procedural depth map, optionally with tightened boxes.
    Depth(DepthArgs),
    /// Evaluate the six ablation configurations.
    Ablate(EvalArgs),
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct PipelineArgs {
    /// Image resolution in pixels (sets the grid and gamma).
    #[arg(long)]
    resolution: Option<u32>,
    /// Pixels per patch side.
    #[arg(long)]
    patch_size: Option<u32>,
    /// Sampling steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Strict-phase length; derived from the resolution when omitted.
    #[arg(long)]
    gamma: Option<usize>,
    /// Tokens per text segment.
    #[arg(long)]
    seg_len: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    attribute_gain: Option<f64>,
    /// Comma-separated attribute vocabulary.
    #[arg(long, value_delimiter = ',')]
    vocab: Option<Vec<String>>,
    /// IoU needed for a correctly placed instance.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Tighten boxes against the procedural depth map first.
    #[arg(long)]
    refine: bool,
    #[arg(long)]
    no_i2i: bool,
    #[arg(long)]
    no_i2t: bool,
    #[arg(long)]
    no_t2i: bool,
    #[arg(long)]
    no_t2t: bool,
    #[arg(long)]
    no_detail_renderer: bool,
    /// Falls back to $LAYOUTJOINT_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct LayoutArgs {
    /// Layout JSON file.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Write the state after every step as binary dumps (run only).
    #[arg(long)]
    dump_states: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct EvalArgs {
    /// Number of generated layouts.
    #[arg(long)]
    suite_count: Option<usize>,
    #[arg(long)]
    min_instances: Option<usize>,
    #[arg(long)]
    max_instances: Option<usize>,
    /// Generate layouts whose boxes never overlap.
    #[arg(long)]
    disjoint: bool,
    /// Evaluate every *.json layout in this directory instead of generating.
    #[arg(long)]
    layout_dir: Option<PathBuf>,
    /// Evaluate all six ablation configurations.
    #[arg(long)]
    ablation_grid: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct DepthArgs {
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Depth map height in pixels; defaults to the layout resolution.
    #[arg(long)]
    height: Option<usize>,
    /// Depth map width in pixels; defaults to the layout resolution.
    #[arg(long)]
    width: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Overlays command-line values on the config file; unset flags keep the file's value.
fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: &Option<Value>) -> CliResult<T> {
    let mut base = file.clone().unwrap_or_else(|| json!({}));
    let Value::Object(over) = serde_json::to_value(cli).map_err(anyhow::Error::from)? else {
        unreachable!("arg structs serialize to objects");
    };
    let target = base
        .as_object_mut()
        .ok_or_else(|| Failure::Usage("config file must hold a JSON object".into()))?;
    for (k, v) in over {
        if !v.is_null() && v != Value::Bool(false) {
            target.insert(k, v);
        }
    }
    serde_json::from_value(base).or_else(|e| usage(format!("config file: {e}")))
}

impl PipelineArgs {
    fn mask(&self) -> MaskConfig {
        MaskConfig {
            i2i_control: !self.no_i2i,
            i2t_control: !self.no_i2t,
            t2i_control: !self.no_t2i,
            t2t_control: !self.no_t2t,
            detail_renderer: !self.no_detail_renderer,
        }
    }

    fn settings(&self, layout_resolution: Option<u32>) -> CliResult<PipelineSettings> {
        let d = PipelineSettings::default();
        let s = PipelineSettings {
            resolution: self.resolution.or(layout_resolution).unwrap_or(d.resolution),
            patch_size: self.patch_size.unwrap_or(d.patch_size),
            seg_len: self.seg_len.unwrap_or(d.seg_len),
            dim: self.dim.unwrap_or(d.dim),
            heads: self.heads.unwrap_or(d.heads),
            total_steps: self.steps.unwrap_or(d.total_steps),
            gamma: self.gamma,
            vocab: self.vocab.clone().map(AttributeVocab::new).unwrap_or(d.vocab),
            attribute_gain: self.attribute_gain.unwrap_or(d.attribute_gain),
            iou_threshold: self.iou_threshold.unwrap_or(d.iou_threshold),
            refine: self.refine,
        };
        if s.resolution == 0 {
            return usage("--resolution must be positive");
        }
        if s.patch_size == 0 {
            return usage("--patch-size must be positive");
        }
        if s.seg_len == 0 {
            return usage("--seg-len must be at least 1");
        }
        if let Err(e) = s.schedule() {
            return usage(e.to_string());
        }
        Ok(s)
    }

    fn seed(&self) -> CliResult<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .or_else(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = self.out.clone().map_or_else(|| usage("--out is required"), Ok)?;
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(dir)
    }
}

fn read_layout(path: &Option<PathBuf>) -> CliResult<LayoutDocument> {
    let path = path.as_ref().map_or_else(|| usage("--layout is required"), Ok)?;
    Ok(load_layout(path).map_err(anyhow::Error::from)?)
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn cmd_build_mask(args: LayoutArgs) -> CliResult<()> {
    let doc = read_layout(&args.layout)?;
    let p = &args.pipeline;
    let settings = p.settings(Some(doc.resolution))?;
    let cfg = p.mask();
    let out = p.out_dir()?;
    let sched = settings.schedule().map_err(anyhow::Error::from)?;
    let total = sched.total_steps();
    if total == 0 {
        return usage("build-mask needs at least one step");
    }
    let (_, seg) = settings.prepare(&doc.layout).map_err(anyhow::Error::from)?;

    if !cfg.detail_renderer {
        let mask = build_mask(&seg, &sched, 0, &cfg).map_err(anyhow::Error::from)?;
        let steps: Vec<usize> = (0..total).collect();
        write(&out.join("mask_all_steps.pgm"), &mask_to_pgm(&mask))?;
        write_json(&out.join("mask_all_steps.json"), &mask_sidecar(&seg, &sched, &steps, &cfg))?;
        println!("wrote 1 mask (renderer off, side {})", mask.side());
        return Ok(());
    }

    let g = sched.gamma();
    let mut steps: Vec<usize> = [Some(0), g.checked_sub(1), Some(g), Some(total - 1)]
        .into_iter()
        .flatten()
        .filter(|&t| t < total)
        .collect();
    steps.sort_unstable();
    steps.dedup();
    for &t in &steps {
        let mask = build_mask(&seg, &sched, t, &cfg).map_err(anyhow::Error::from)?;
        write(&out.join(format!("mask_step_{t:02}.pgm")), &mask_to_pgm(&mask))?;
        write_json(
            &out.join(format!("mask_step_{t:02}.json")),
            &mask_sidecar(&seg, &sched, &[t], &cfg),
        )?;
    }
    println!("wrote {} masks, gamma {g}, side {}", steps.len(), seg.side());
    Ok(())
}

fn cmd_run(args: LayoutArgs) -> CliResult<()> {
    let doc = read_layout(&args.layout)?;
    let p = &args.pipeline;
    let settings = p.settings(Some(doc.resolution))?;
    let cfg = p.mask();
    let seed = p.seed()?;
    let out = p.out_dir()?;
    let run = run_layout(&doc.layout, &settings, &cfg, seed, args.dump_states)
        .map_err(anyhow::Error::from)?;

    if let Some(history) = &run.state.history {
        let dir = out.join("states");
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let init = layoutjoint::tokens::embed(&run.seg, &settings.vocab, settings.dim, seed)
            .map_err(anyhow::Error::from)?;
        let text_len = run.seg.text_len;
        write(&dir.join("state_000.bin"), &encode_state(&init, 0, text_len))?;
        for (t, block) in history.iter().enumerate() {
            write(
                &dir.join(format!("state_{:03}.bin", t + 1)),
                &encode_state(block, t + 1, text_len),
            )?;
        }
    }

    let vocab = &settings.vocab;
    let grid: Vec<Vec<Option<&str>>> = run
        .decoded
        .labels
        .chunks(run.decoded.grid_w)
        .map(|row| row.iter().map(|l| l.map(|i| vocab.word(i))).collect())
        .collect();
    let instances: Vec<Value> = doc
        .layout
        .instances()
        .iter()
        .zip(run.rendered.instances())
        .zip(&run.verdicts)
        .map(|((inst, rendered), v)| {
            json!({
                "id": inst.id,
                "text": inst.text,
                "attribute": inst.attribute,
                "box": inst.bbox.as_array(),
                "rendered_box": rendered.bbox.as_array(),
                "verdict": v,
            })
        })
        .collect();
    let sched = settings.schedule().map_err(anyhow::Error::from)?;
    let ok = run.verdicts.iter().filter(|v| v.success).count();
    write_json(
        &out.join("run.json"),
        &json!({
            "seed": seed,
            "total_steps": sched.total_steps(),
            "gamma": sched.gamma(),
            "config": cfg,
            "grid_h": run.decoded.grid_h,
            "grid_w": run.decoded.grid_w,
            "attributes": grid,
            "instances": instances,
        }),
    )?;
    println!("{ok}/{} instances succeeded", run.verdicts.len());
    Ok(())
}

fn load_suite(args: &EvalArgs, seed: u64) -> CliResult<Vec<ValidatedLayout>> {
    if let Some(dir) = &args.layout_dir {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("cannot read {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return usage(format!("no *.json layouts in {}", dir.display()));
        }
        return paths
            .iter()
            .map(|p| Ok(load_layout(p).map_err(anyhow::Error::from)?.layout))
            .collect();
    }
    let count = args.suite_count.map_or_else(|| usage("--suite-count or --layout-dir is required"), Ok)?;
    if count == 0 {
        return usage("suite is empty: --suite-count must be at least 1");
    }
    let lo = args.min_instances.unwrap_or(2);
    let hi = args.max_instances.unwrap_or(6);
    let opts = SuiteOptions {
        vocab: args
            .pipeline
            .vocab
            .clone()
            .map(AttributeVocab::new)
            .unwrap_or_default(),
        ..if args.disjoint {
            SuiteOptions::disjoint()
        } else {
            SuiteOptions::default()
        }
    };
    generate_suite(count, lo..=hi, seed, &opts).or_else(|e| usage(e.to_string()))
}

fn cmd_evaluate(args: EvalArgs, force_grid: bool) -> CliResult<()> {
    let p = &args.pipeline;
    let settings = p.settings(None)?;
    let seed = p.seed()?;
    let suite = load_suite(&args, seed)?;
    let out = p.out_dir()?;
    let jobs = match args.jobs {
        Some(0) => return usage("--jobs must be at least 1"),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(anyhow::Error::from)?;

    let configs: Vec<(String, MaskConfig)> = if force_grid || args.ablation_grid {
        MaskConfig::ablation_grid()
            .into_iter()
            .map(|(n, c)| (n.to_owned(), c))
            .collect()
    } else {
        let cfg = p.mask();
        let name = MaskConfig::ablation_grid()
            .into_iter()
            .find(|(_, c)| *c == cfg)
            .map_or("custom", |(n, _)| n);
        vec![(name.to_owned(), cfg)]
    };

    let mut reports = Vec::with_capacity(configs.len());
    for (name, cfg) in &configs {
        let report = pool
            .install(|| evaluate_suite(&suite, &settings, name, cfg, seed))
            .map_err(anyhow::Error::from)?;
        println!(
            "{name}: ISR {:.4} MIoU {:.4} SR {:.4} over {} instances",
            report.overall.isr, report.overall.miou, report.overall.sr, report.overall.instances
        );
        reports.push(report);
    }

    if configs.len() == 1 {
        write_json(&out.join("report.json"), &reports[0])?;
        write(&out.join("report.csv"), EvalReport::to_csv(&[&reports[0]]).as_bytes())?;
    } else {
        for r in &reports {
            write_json(&out.join(format!("report_{}.json", r.config)), r)?;
            write(
                &out.join(format!("report_{}.csv", r.config)),
                EvalReport::to_csv(&[r]).as_bytes(),
            )?;
        }
        let all: Vec<&EvalReport> = reports.iter().collect();
        write(&out.join("summary.csv"), EvalReport::to_csv(&all).as_bytes())?;
    }
    Ok(())
}

fn cmd_depth(args: DepthArgs) -> CliResult<()> {
    let doc = read_layout(&args.layout)?;
    let p = &args.pipeline;
    let res = p.resolution.unwrap_or(doc.resolution) as usize;
    let (h, w) = (args.height.unwrap_or(res), args.width.unwrap_or(res));
    if h == 0 || w == 0 {
        return usage("depth map dimensions must be positive");
    }
    let out = p.out_dir()?;
    let depth = layout_to_depth(&doc.layout, h, w).map_err(anyhow::Error::from)?;
    write(&out.join("depth.pgm"), &depth.to_pgm())?;
    if p.refine {
        let refined = refine_layout(&doc.layout, &depth);
        write_json(
            &out.join("refined_layout.json"),
            &layout_to_json(&refined, doc.resolution),
        )?;
    }
    println!("wrote {w}x{h} depth map");
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> CliResult<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    Ok(Some(value))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = load_config(&cli.config)?;
    match cli.command {
        Command::BuildMask(a) => cmd_build_mask(merge(&a, &file)?),
        Command::Run(a) => cmd_run(merge(&a, &file)?),
        Command::Evaluate(a) => cmd_evaluate(merge(&a, &file)?, false),
        Command::Ablate(a) => cmd_evaluate(merge(&a, &file)?, true),
        Command::Depth(a) => cmd_depth(merge(&a, &file)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

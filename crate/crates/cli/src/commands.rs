use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use apex_core::config::ApexConfig;
use apex_core::harness::{
    read_records, run_benchmark, scene_params, suite_scenes, summarize, write_episode_log,
    write_records, write_summary_csv, LoadedPolicy, Policies, Variant,
};
use apex_core::maps::{read_map_file, write_map_file, MapChannel, MapFile};
use apex_core::orchestrator::{run_episode, ClockMode};
use apex_core::policy::{
    build_tasks, pregenerate_for_scene, train, write_jsonl, Checkpoint, CheckpointMeta,
    FeatureSource, PolicyParams, Stage,
};
use apex_core::world::generate_scene;
use apex_core::{ApexError, Scene};

use crate::{Channel, Cli, Command, Format, InspectArgs, PolicyArgs, RunArgs, SceneSet, TrainArgs};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ApexConfig::load(p)?,
        None => ApexConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mode = if cli.wall_clock {
        ClockMode::WallClock
    } else {
        ClockMode::Lockstep
    };
    let out = cli.out.as_path();
    match &cli.command {
        Command::Generate(set) => generate(&cfg, set, out),
        Command::Pregen(set) => pregen(&cfg, set, out),
        Command::Pretrain(args) => train_stage(cfg, args, Stage::Pretrain, out),
        Command::Finetune(args) => train_stage(cfg, args, Stage::Finetune, out),
        Command::Run(args) => run(&cfg, args, mode, out),
        Command::Bench(args) => bench(&cfg, args, mode, out),
        Command::Metrics(args) => metrics(&cfg, &args.records),
        Command::Inspect(args) => inspect(args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_scenes(cfg: &ApexConfig, set: &SceneSet) -> Result<Vec<Scene>> {
    if !set.scenes.is_empty() {
        return set.scenes.iter().map(|p| Ok(Scene::load(p)?)).collect();
    }
    let params = scene_params(&set.preset)?;
    (0..set.count as u64)
        .map(|i| Ok(generate_scene(cfg.seed + i, &params)?))
        .collect()
}

fn generate(cfg: &ApexConfig, set: &SceneSet, out: &Path) -> Result<()> {
    let dir = out.join("scenes");
    create_dir(&dir)?;
    for scene in load_scenes(cfg, set)? {
        let path = dir.join(format!("{}.toml", scene.id));
        scene.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn pregen(cfg: &ApexConfig, set: &SceneSet, out: &Path) -> Result<()> {
    let dir = out.join("maps");
    create_dir(&dir)?;
    for scene in load_scenes(cfg, set)? {
        let map = pregenerate_for_scene(&scene, cfg)?;
        let path = dir.join(format!("{}.apxm", scene.id));
        write_map_file(
            &path,
            &MapFile::from_attraction(&map, Some(scene.id.clone())),
        )?;
        println!("{}", path.display());
    }
    Ok(())
}

fn load_policy(path: &Path) -> Result<LoadedPolicy> {
    let ck = Checkpoint::load(path)?;
    Ok(LoadedPolicy {
        params: Arc::new(ck.params),
        features: ck.meta.features,
    })
}

fn load_policies(args: &PolicyArgs) -> Result<Policies> {
    Ok(Policies {
        maps: args.policy.as_deref().map(load_policy).transpose()?,
        depth: args.depth_policy.as_deref().map(load_policy).transpose()?,
    })
}

fn train_stage(mut cfg: ApexConfig, args: &TrainArgs, stage: Stage, out: &Path) -> Result<()> {
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    let init: Option<PolicyParams> = match &args.init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            cfg.features = ck.meta.features;
            Some(ck.params)
        }
        None => None,
    };
    if args.depth {
        cfg.features.source = FeatureSource::Depth;
    }
    let scenes = load_scenes(&cfg, &args.scenes)?;
    let tasks = build_tasks(scenes, stage, &cfg)?;
    create_dir(out)?;
    let suffix = if cfg.features.source == FeatureSource::Depth {
        "-depth"
    } else {
        ""
    };
    let log_path = out.join(format!("{}{suffix}_log.jsonl", stage.name()));
    let mut log =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut io_err = None;
    let result = train(&tasks, stage, &cfg, init, |rec| {
        if let Err(e) = write_jsonl(&mut log, std::slice::from_ref(rec)) {
            io_err.get_or_insert(e);
        }
        eprintln!(
            "[{}] iter {:>4}  episodes {:>3}  step reward {:>8.4}  collision {}  success {}",
            stage.name(),
            rec.iteration,
            rec.episodes,
            rec.mean_step_reward,
            rec.collision_rate.map_or("-".into(), |c| format!("{c:.2}")),
            rec.success_rate.map_or("-".into(), |c| format!("{c:.2}")),
        );
    })?;
    if let Some(e) = io_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let ck = Checkpoint {
        meta: CheckpointMeta {
            layout: result.params.layout.clone(),
            features: cfg.features.clone(),
            stage: stage.name().into(),
            iteration: cfg.train.iterations as u64,
            seed: cfg.seed,
        },
        params: result.params,
    };
    let path = out.join(format!("{}{suffix}.ckpt", stage.name()));
    ck.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cfg: &ApexConfig, args: &RunArgs, mode: ClockMode, out: &Path) -> Result<()> {
    let scene = match &args.scene {
        Some(p) => Scene::load(p)?,
        None => generate_scene(cfg.seed, &scene_params(&args.preset)?)?,
    };
    let variant = Variant::parse(&args.variant)?;
    let policies = load_policies(&args.policies)?;
    let agent = variant.agent(&policies, cfg.rewards.alpha, cfg)?;
    let mut rec = run_episode(&scene, &agent, cfg, mode, cfg.seed)?;
    rec.variant = variant.name().into();
    create_dir(out)?;
    let log = out.join("episode.jsonl");
    let mut buf = Vec::new();
    write_episode_log(&mut buf, &rec)?;
    fs::write(&log, buf).with_context(|| format!("writing {}", log.display()))?;
    write_records(&out.join("records.jsonl"), std::slice::from_ref(&rec))?;
    println!(
        "{} {}: {:?} after {} steps, final distance {:.2} m ({})",
        rec.scene_id,
        rec.variant,
        rec.termination,
        rec.steps.len(),
        rec.final_distance,
        if rec.is_success(rec.success_distance) {
            "success"
        } else {
            "failure"
        }
    );
    Ok(())
}

fn bench(cfg: &ApexConfig, args: &PolicyArgs, mode: ClockMode, out: &Path) -> Result<()> {
    let scenes = suite_scenes(&cfg.bench)?;
    let policies = load_policies(args)?;
    let result = run_benchmark(cfg, &scenes, &policies, mode, Some(out))?;
    let stdout = std::io::stdout();
    write_summary_csv(&mut stdout.lock(), &result.rows)?;
    Ok(())
}

fn metrics(cfg: &ApexConfig, records: &PathBuf) -> Result<()> {
    let recs = read_records(records)?;
    let rows = summarize(&recs, cfg.rewards.success_distance)?;
    let stdout = std::io::stdout();
    write_summary_csv(&mut stdout.lock(), &rows)?;
    Ok(())
}

fn fmt_value(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.3}")
    }
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let file = read_map_file(&args.map)?;
    let wanted = match args.channel {
        Channel::Attraction => MapChannel::AttractionScore,
        Channel::Depth => MapChannel::AttractionDepth,
        Channel::Exploration => MapChannel::Exploration,
        Channel::Obstacle => MapChannel::Obstacle,
    };
    let data = file.channel(wanted).ok_or_else(|| {
        ApexError::Input(format!("{} has no {wanted:?} channel", args.map.display()))
    })?;
    let [nx, ny, nz] = file.grid.dims;
    let z = args.z.unwrap_or(nz / 2);
    if z >= nz {
        return Err(ApexError::Input(format!("slice z = {z} outside 0..{nz}")).into());
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let sep = match args.format {
        Format::Text => " ",
        Format::Csv => ",",
    };
    if let Format::Text = args.format {
        let zc = file.grid.origin.z + (z as f64 + 0.5) * file.grid.resolution;
        writeln!(
            w,
            "# {wanted:?} z={z} (center {zc:.2} m), rows y={}..0, columns x=0..{}",
            ny - 1,
            nx - 1
        )?;
    }
    // Rows run from high y to low y so the text reads like a map with +y up.
    for y in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|x| fmt_value(data[(z * ny + y) * nx + x]))
            .collect();
        writeln!(w, "{}", row.join(sep))?;
    }
    Ok(())
}

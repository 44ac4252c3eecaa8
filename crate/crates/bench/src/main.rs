use std::error::Error;
use std::fs;
use std::io;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use findview_bench::runner::{cells, outcomes_from_trace_file, write_results};
use findview_bench::{
    default_grid, grid_search, measure_fps, parse_grid, run_benchmark, serve_agent, AgentSpec, BenchConfig,
    RunConfig,
};
use findview_core::agents::RuleAgentConfig;
use findview_core::corruptions::{corrupt, parse_setting, CorruptionKind, CorruptionSpec, Severity};
use findview_core::dataset::{
    build_catalog, generate_episode_set, split, EpisodeSetConfig, PanoramaCatalog, PanoramaStore, SplitSpec,
    SynthKind, SynthId,
};
use findview_core::environment::{
    parse_episodes, write_episodes, Difficulty, EnvConfig, EpisodeSpec, PanoramaSource, Pose, SamplerConfig,
};
use findview_core::metrics::{aggregate, rows_to_table};
use findview_core::projection::{render_perspective, CameraIntrinsics};
use findview_core::raster::RgbImage;
use findview_server::{serve_stdio, serve_tcp, EpisodeSource, SessionConfig};

type Res<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "findview", version, about = "Look around a panorama to find a target view")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a perspective view of a panorama.
    Render {
        #[arg(long)]
        pano: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pitch: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (usize, usize),
        #[command(flatten)]
        source: PanoArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one corruption to an image.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        /// `kind:severity`, e.g. `fog:3`.
        #[arg(long, value_parser = parse_corruption)]
        corruption: (CorruptionKind, Severity),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic panorama.
    Synth {
        #[arg(long, default_value = "grid-tags")]
        kind: SynthKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "1024x512", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Index a panorama directory into a manifest.
    Catalog {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a manifest into train, val and test manifests.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
        ratios: [f64; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sample a fixed episode file.
    Episodes {
        #[command(flatten)]
        source: PanoArgs,
        /// Panorama ids; defaults to every manifest entry.
        #[arg(long, num_args = 1..)]
        pano: Vec<String>,
        #[arg(long)]
        difficulty: Difficulty,
        #[arg(long, default_value_t = 1)]
        per_pano: usize,
        #[arg(long, default_value_t = 90)]
        fov: u32,
        #[arg(long, default_value_t = 10)]
        min_steps: u32,
        #[arg(long, value_parser = parse_corruption)]
        corruption: Option<(CorruptionKind, Severity)>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run agents over episode files.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Serve vectorised environments over TCP or stdio.
    Serve {
        #[arg(long, conflicts_with = "stdio")]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        stdio: bool,
        #[arg(long, default_value_t = 16)]
        n_envs: usize,
        /// Replay this episode file.
        #[arg(long, conflicts_with = "sample")]
        episodes: Option<PathBuf>,
        /// Sample these difficulties instead, e.g. `easy,medium`.
        #[arg(long, value_delimiter = ',')]
        sample: Vec<Difficulty>,
        /// Panoramas to sample from; defaults to every manifest entry.
        #[arg(long, num_args = 1..)]
        pano: Vec<String>,
        #[arg(long, value_parser = parse_corruption)]
        corruption: Option<(CorruptionKind, Severity)>,
        #[arg(long, default_value_t = 90)]
        fov: u32,
        #[arg(long)]
        max_steps: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        hide_state: bool,
        #[command(flatten)]
        source: PanoArgs,
    },
    /// Serve a built-in agent over the agent protocol on stdin/stdout.
    Agent {
        #[arg(long)]
        agent: AgentSpec,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Evaluate an agent and write results.csv, results.txt and traces.
    Run {
        #[arg(long)]
        agent: AgentSpec,
        #[command(flatten)]
        sets: SetArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Recompute result tables from trace files.
    Score {
        #[command(flatten)]
        sets: SetArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the rule agent's descriptor threshold.
    Grid {
        #[command(flatten)]
        sets: SetArgs,
        /// e.g. `10,20,...,100,inf`.
        #[arg(long, value_parser = |s: &str| parse_grid(s).map_err(|e| e.to_string()))]
        grid: Option<Vec<Option<u32>>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time an agent's act calls.
    Fps {
        #[arg(long)]
        agent: AgentSpec,
        #[arg(long, num_args = 1..)]
        episodes: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 200)]
        calls: usize,
        #[arg(long, default_value_t = 5000)]
        max_steps: u32,
        #[command(flatten)]
        source: PanoArgs,
    },
}

#[derive(Args)]
struct PanoArgs {
    /// Manifest mapping panorama ids to files. `synth:` ids and plain paths
    /// work without one.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl PanoArgs {
    fn catalog(&self) -> Res<Option<PanoramaCatalog>> {
        self.manifest
            .as_ref()
            .map(|m| Ok(PanoramaCatalog::from_manifest(&read(m)?)?))
            .transpose()
    }

    fn store(&self) -> Res<Arc<dyn PanoramaSource>> {
        Ok(Arc::new(match self.catalog()? {
            Some(c) => PanoramaStore::from_catalog(&c),
            None => PanoramaStore::new(),
        }))
    }
}

#[derive(Args)]
struct SetArgs {
    /// Episode files, one per difficulty.
    #[arg(long, num_args = 1.., required = true)]
    episodes: Vec<PathBuf>,
    /// Extra corrupted cells, `kind:severity`.
    #[arg(long, num_args = 1.., value_parser = parse_corruption)]
    corruption: Vec<(CorruptionKind, Severity)>,
    /// Leave out the clean cell when corruptions are given.
    #[arg(long)]
    no_clean: bool,
    #[arg(long, default_value_t = 5000)]
    max_steps: u32,
    #[command(flatten)]
    source: PanoArgs,
}

impl SetArgs {
    fn sets(&self) -> Res<Vec<(String, Vec<EpisodeSpec>)>> {
        self.episodes.iter().map(|p| load_set(p)).collect()
    }

    fn corruptions(&self) -> Vec<Option<(CorruptionKind, Severity)>> {
        let clean = (!self.no_clean || self.corruption.is_empty()).then_some(None);
        clean.into_iter().chain(self.corruption.iter().map(|c| Some(*c))).collect()
    }

    fn config(&self, agent: AgentSpec, out: &Path) -> Res<BenchConfig> {
        Ok(BenchConfig {
            run: RunConfig {
                max_steps: self.max_steps,
                ..RunConfig::new(agent)
            },
            sets: self.sets()?,
            corruptions: self.corruptions(),
            out_dir: out.to_path_buf(),
            step_deg: EnvConfig::default().step_deg,
        })
    }
}

fn read(p: &Path) -> Res<String> {
    fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()).into())
}

fn write(p: &Path, text: &str) -> Res {
    if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()).into())
}

/// Labels a set by its shared difficulty, else by file stem.
fn load_set(p: &Path) -> Res<(String, Vec<EpisodeSpec>)> {
    let eps = parse_episodes(&read(p)?)?;
    let first = eps.first().map(|e| e.difficulty);
    let label = match first {
        Some(Some(d)) if eps.iter().all(|e| e.difficulty == Some(d)) => d.name().to_string(),
        _ => p.file_stem().map_or("episodes".into(), |s| s.to_string_lossy().into_owned()),
    };
    Ok((label, eps))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    Ok((w.parse().map_err(|_| "bad width")?, h.parse().map_err(|_| "bad height")?))
}

fn parse_corruption(s: &str) -> Result<(CorruptionKind, Severity), String> {
    parse_setting(s).map_err(|e| e.to_string())
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad ratio {x:?}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three ratios".into())
}

fn pano_ids(source: &PanoArgs, ids: &[String]) -> Res<Vec<String>> {
    if !ids.is_empty() {
        return Ok(ids.to_vec());
    }
    match source.catalog()? {
        Some(c) => Ok(c.ids()),
        None => Err("give --pano ids or a --manifest".into()),
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Res {
    match cli.cmd {
        Cmd::Render {
            pano,
            pitch,
            yaw,
            fov,
            size,
            source,
            out,
        } => {
            let img = source.store()?.panorama(&pano)?;
            let cam = CameraIntrinsics::new(fov, size.0, size.1)?;
            let view = render_perspective(&img, &Pose::from_degrees(pitch, yaw)?.to_view(), &cam);
            view.save(&out)?;
        }
        Cmd::Corrupt {
            input,
            corruption: (kind, severity),
            seed,
            out,
        } => {
            let img = RgbImage::load(&input)?;
            corrupt(&img, &CorruptionSpec { kind, severity, seed }).save(&out)?;
        }
        Cmd::Synth { kind, seed, size, out } => {
            let id = SynthId {
                kind,
                seed,
                width: size.0,
                height: size.1,
            };
            id.render()?.save(&out)?;
            println!("{id}");
        }
        Cmd::Catalog { dir, out } => {
            let cat = build_catalog(&dir)?;
            for w in &cat.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(p) => write(&p, &cat.to_manifest())?,
                None => print!("{}", cat.to_manifest()),
            }
            eprintln!("{} panoramas", cat.len());
        }
        Cmd::Split {
            manifest,
            ratios,
            seed,
            out_dir,
        } => {
            let cat = PanoramaCatalog::from_manifest(&read(&manifest)?)?;
            let s = split(&cat, &SplitSpec { ratios, seed })?;
            for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                write(&out_dir.join(format!("{name}.tsv")), &part.to_manifest())?;
                eprintln!("{name}: {}", part.len());
            }
        }
        Cmd::Episodes {
            source,
            pano,
            difficulty,
            per_pano,
            fov,
            min_steps,
            corruption,
            seed,
            out,
        } => {
            let env = EnvConfig {
                fov_deg: fov as f64,
                ..EnvConfig::default()
            };
            let cfg = EpisodeSetConfig {
                difficulty,
                per_pano,
                sampler: SamplerConfig {
                    min_steps,
                    ..SamplerConfig::for_env(&env)
                },
                corruption,
                seed,
            };
            let specs = generate_episode_set(&pano_ids(&source, &pano)?, &cfg)?;
            write(&out, &write_episodes(&specs))?;
            eprintln!("{} episodes", specs.len());
        }
        Cmd::Bench(b) => bench(b)?,
        Cmd::Serve {
            port,
            host,
            stdio,
            n_envs,
            episodes,
            sample,
            pano,
            corruption,
            fov,
            max_steps,
            seed,
            hide_state,
            source,
        } => {
            let mut env = findview_bench::runner::env_for_fov(fov, EnvConfig::default().max_steps);
            if let Some(m) = max_steps {
                env.max_steps = m;
            }
            let src = match episodes {
                Some(p) => EpisodeSource::File(Arc::new(parse_episodes(&read(&p)?)?)),
                None if !sample.is_empty() => EpisodeSource::Sampler {
                    panos: pano_ids(&source, &pano)?,
                    difficulties: sample,
                    sampler: SamplerConfig::for_env(&env),
                    corruption,
                },
                None => return Err("give --episodes or --sample".into()),
            };
            let cfg = SessionConfig {
                n_envs,
                env,
                source: src,
                seed,
                hide_state,
            };
            let store = source.store()?;
            if stdio {
                serve_stdio(&cfg, store)?;
            } else {
                let listener = TcpListener::bind((host.as_str(), port.unwrap_or(0)))?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve_tcp(&cfg, store, &listener)?;
            }
        }
        Cmd::Agent { agent } => {
            let mut a = agent.build()?;
            serve_agent(a.as_mut(), io::stdin(), io::stdout())?;
        }
    }
    Ok(())
}

fn bench(cmd: BenchCmd) -> Res {
    match cmd {
        BenchCmd::Run {
            agent,
            sets,
            out,
            threads,
        } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let cfg = sets.config(agent, &out)?;
            let rows = run_benchmark(&cfg, sets.source.store()?)?;
            print!("{}", rows_to_table(&format!("agent: {}", cfg.run.agent), &rows));
        }
        BenchCmd::Score { sets, out } => {
            let cfg = sets.config(AgentSpec::Oracle, &out)?;
            let mut rows = Vec::new();
            for cell in cells(&cfg) {
                let path = out.join("traces").join(cell.trace_file_name());
                let outcomes = outcomes_from_trace_file(&cell, &path, sets.max_steps)?;
                rows.push(aggregate(&cell.label, &outcomes, cfg.step_deg)?);
            }
            write_results(&out, "recomputed from traces", &rows)?;
            print!("{}", rows_to_table("recomputed from traces", &rows));
        }
        BenchCmd::Grid { sets, grid, out } => {
            let grid = grid.unwrap_or_else(default_grid);
            let r = grid_search(
                &sets.sets()?,
                &grid,
                RuleAgentConfig::default(),
                sets.max_steps,
                EnvConfig::default().step_deg,
                sets.source.store()?,
            )?;
            print!("{}", r.to_table());
            if let Some(dir) = out {
                write(&dir.join("grid.csv"), &r.to_csv())?;
                write(&dir.join("grid.txt"), &r.to_table())?;
            }
        }
        BenchCmd::Fps {
            agent,
            episodes,
            warmup,
            calls,
            max_steps,
            source,
        } => {
            let mut eps = Vec::new();
            for p in &episodes {
                eps.extend(load_set(p)?.1);
            }
            let mut a = agent.build()?;
            let r = measure_fps(a.as_mut(), &eps, source.store()?, max_steps, warmup, calls)?;
            println!("{agent}: {} fps over {} act calls", r.formatted(), r.calls);
        }
    }
    Ok(())
}

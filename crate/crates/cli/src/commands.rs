use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use gaussphys::dpo::{identify_with, DpoConfig};
use gaussphys::gsplat::{photometric_loss, render, CouplingMode, Image};
use gaussphys::mpm::{Rollout, SimConfig, SimProfile, Simulator};
use gaussphys::policy::{pretrain as fit_policy, PhysicsPolicy};
use gaussphys::preference::{rank_and_pair, track as project_tracks, trajectory_distance, TrajectorySet};
use gaussphys::scene::{build, BuiltScene, SceneSpec, Source};
use gaussphys::{Error, MaterialModel, MaterialSpec};

use crate::manifest::{file_sha256, sidecar, write_atomic, RunManifest};
use crate::SimArgs;

pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, CmdError>;

fn is_simulation_failure(e: &Error) -> bool {
    match e {
        Error::SimulationAborted { .. }
        | Error::InvertedElement { .. }
        | Error::NonFinite(_)
        | Error::OutOfDomain { .. } => true,
        Error::Round { source, .. } => is_simulation_failure(source),
        _ => false,
    }
}

trait Classify<T> {
    /// Input or configuration failure (exit 1).
    fn config(self, what: &str) -> CmdResult<T>;
    /// Failure while running a simulation: exit 2 for numerical aborts,
    /// 1 otherwise.
    fn sim(self, what: &str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| CmdError {
            code: 1,
            error: e.into().context(what.to_string()),
        })
    }

    fn sim(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| {
            let e: anyhow::Error = e.into();
            let code = match e.downcast_ref::<Error>() {
                Some(inner) if is_simulation_failure(inner) => 2,
                _ => 1,
            };
            CmdError {
                code,
                error: e.context(what.to_string()),
            }
        })
    }
}

/// Timing values actually used, recorded verbatim in manifests.
#[derive(Clone, Debug, Serialize)]
struct ResolvedProfile {
    name: &'static str,
    dt: f64,
    substeps_per_frame: usize,
    frames: usize,
    grid: usize,
    candidates: usize,
}

fn resolve_sim(built: &BuiltScene, args: &SimArgs) -> anyhow::Result<(ResolvedProfile, SimConfig)> {
    let profile = SimProfile::from(args.profile);
    let mut sim = built.sim_config(profile);
    let grid = args.grid.unwrap_or(profile.grid_resolution());
    sim.grid = built.grid_spec(grid);
    if let Some(f) = args.frames {
        sim.frame_count = f;
    }
    if let Some(s) = args.substeps {
        sim.substeps_per_frame = s;
    }
    if let Some(dt) = args.dt {
        sim.dt = dt;
    }
    sim.validate()?;
    Ok((
        ResolvedProfile {
            name: profile.name(),
            dt: sim.dt,
            substeps_per_frame: sim.substeps_per_frame,
            frames: sim.frame_count,
            grid,
            candidates: profile.candidates(),
        },
        sim,
    ))
}

fn load_scene(path: &Path, seed: Option<u64>) -> CmdResult<(SceneSpec, BuiltScene)> {
    let mut spec = SceneSpec::load(path).config(&format!("loading scene {}", path.display()))?;
    if let (Some(s), Source::Procedural { seed, .. }) = (seed, &mut spec.source) {
        *seed = s;
    }
    let built = build(&spec).config("building scene")?;
    Ok((spec, built))
}

fn placement_seed(spec: &SceneSpec) -> u64 {
    match spec.source {
        Source::Procedural { seed, .. } => seed,
        Source::Cloud { .. } => 0,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn input_entry(path: &Path) -> CmdResult<Value> {
    Ok(json!({
        "path": path.to_string_lossy(),
        "sha256": file_sha256(path).config("hashing input")?,
    }))
}

fn create_dir(out: &Path) -> CmdResult {
    fs::create_dir_all(out).config(&format!("creating {}", out.display()))
}

pub fn simulate(
    scene_path: &Path,
    out: &Path,
    args: &SimArgs,
    seed: Option<u64>,
    render_frames: bool,
) -> CmdResult {
    let (spec, built) = load_scene(scene_path, seed)?;
    let (profile, sim) = resolve_sim(&built, args).config("resolving simulation settings")?;
    let model = MaterialModel::new(&built.material, sim.friction).config("material")?;
    let mut m = RunManifest::new(
        "simulate",
        json!({
            "scene": to_value(&spec),
            "profile": to_value(&profile),
            "sim": to_value(&sim),
            "render": render_frames,
        }),
    );
    m.seeds.insert("placement", placement_seed(&spec));
    create_dir(out)?;
    let manifest_path = out.join("manifest.json");
    if args.dry_run {
        return m.write(&manifest_path).config("writing manifest");
    }

    let mut particles = built.particles(&built.material);
    let rollout = m
        .time("simulate", || {
            Simulator::new(sim.clone(), vec![model])?.run(&mut particles)
        })
        .sim("simulation")?;

    let rollout_path = out.join("rollout.bin");
    let mut bytes = Vec::new();
    rollout.write_binary(&mut bytes).config("encoding rollout")?;
    write_atomic(&rollout_path, &bytes).config("writing rollout")?;
    m.add_file(out, &rollout_path).config("inventory")?;

    if render_frames {
        let frames_dir = out.join("frames");
        create_dir(&frames_dir)?;
        let rest = built.gaussians.clone();
        let mut states = vec![rest.clone()];
        for f in rollout.frames() {
            states.push(
                rest.coupled_from_state(&f.positions, &f.deformation, CouplingMode::PolarDiagonal)
                    .sim("coupling primitives")?,
            );
        }
        for (i, scene) in states.iter().enumerate() {
            let img = m.time("render", || render(scene, &built.camera)).config("rendering")?;
            let path = frames_dir.join(format!("frame_{i:04}.png"));
            let mut buf = Vec::new();
            img.write_png(&mut buf).config("encoding png")?;
            write_atomic(&path, &buf).config("writing frame")?;
            m.add_file(out, &path).config("inventory")?;
        }
    }
    m.write(&manifest_path).config("writing manifest")
}

pub fn track(rollout_path: &Path, scene_path: &Path, out: &Path) -> CmdResult {
    let (spec, built) = load_scene(scene_path, None)?;
    let file = fs::File::open(rollout_path).config(&format!("opening {}", rollout_path.display()))?;
    let rollout = Rollout::read_binary(BufReader::new(file)).config("reading rollout")?;
    if rollout.particle_count() != built.particle_count() {
        return Err(anyhow!(
            "rollout has {} particles but the scene builds {}",
            rollout.particle_count(),
            built.particle_count()
        ))
        .config("incompatible rollout and scene");
    }
    let mut m = RunManifest::new(
        "track",
        json!({
            "scene": to_value(&spec),
            "rollout": input_entry(rollout_path)?,
        }),
    );
    m.seeds.insert("placement", placement_seed(&spec));
    let tracks = m
        .time("track", || project_tracks(&rollout, &built.camera, &built.tracked_ids))
        .config("tracking")?;
    let mut buf = Vec::new();
    tracks.write_csv(&mut buf).config("encoding tracks")?;
    write_parent(out)?;
    write_atomic(out, &buf).config("writing tracks")?;
    let root = out.parent().unwrap_or(Path::new(""));
    m.add_file(root, out).config("inventory")?;
    m.write(&sidecar(out)).config("writing manifest")
}

fn write_parent(out: &Path) -> CmdResult {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn read_tracks(path: &Path) -> CmdResult<TrajectorySet> {
    let f = fs::File::open(path).config(&format!("opening {}", path.display()))?;
    TrajectorySet::read_csv(BufReader::new(f)).config(&format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct RankedFile {
    rank: usize,
    index: usize,
    file: String,
    distance: f64,
}

#[derive(Serialize)]
struct FilePair {
    winner: String,
    loser: String,
    margin: f64,
}

pub fn rank(reference: &Path, candidates: &[std::path::PathBuf], out: &Path) -> CmdResult {
    if candidates.len() < 2 {
        return Err(Error::InsufficientCandidates(candidates.len())).config("ranking");
    }
    let reference_tracks = read_tracks(reference)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let d = trajectory_distance(&read_tracks(c)?, &reference_tracks)
            .config(&format!("comparing {}", c.display()))?;
        scored.push((c.to_string_lossy().into_owned(), d));
    }
    let (ranked, pairs) = rank_and_pair(&scored).config("ranking")?;
    let doc = json!({
        "reference": reference.to_string_lossy(),
        "ranking": ranked.entries.iter().enumerate().map(|(i, e)| RankedFile {
            rank: i + 1,
            index: e.index,
            file: e.params.clone(),
            distance: e.distance,
        }).map(|r| to_value(&r)).collect::<Vec<_>>(),
        "pairs": pairs.iter().map(|p| to_value(&FilePair {
            winner: p.winner.clone(),
            loser: p.loser.clone(),
            margin: p.margin,
        })).collect::<Vec<_>>(),
    });
    let mut inputs = vec![input_entry(reference)?];
    for c in candidates {
        inputs.push(input_entry(c)?);
    }
    let mut m = RunManifest::new("rank", json!({ "inputs": inputs }));
    write_parent(out)?;
    let mut text = serde_json::to_string_pretty(&doc).config("encoding ranking")?;
    text.push('\n');
    write_atomic(out, text.as_bytes()).config("writing ranking")?;
    let root = out.parent().unwrap_or(Path::new(""));
    m.add_file(root, out).config("inventory")?;
    m.write(&sidecar(out)).config("writing manifest")
}

/// Default starting policy: centered on the scene material, one decade of
/// spread in `log10 E`, narrow elsewhere.
fn default_policy(material: &MaterialSpec) -> anyhow::Result<PhysicsPolicy> {
    Ok(PhysicsPolicy::centered(material, [1.0, 0.1, 0.1], 0.0)?)
}

fn load_policy(path: &Path) -> CmdResult<PhysicsPolicy> {
    let text = fs::read_to_string(path).config(&format!("reading {}", path.display()))?;
    PhysicsPolicy::from_json(&text).config(&format!("parsing {}", path.display()))
}

pub fn identify(
    scene_path: &Path,
    reference_path: &Path,
    config_path: &Path,
    out: &Path,
    policy_path: Option<&Path>,
    args: &SimArgs,
) -> CmdResult {
    let (spec, built) = load_scene(scene_path, None)?;
    let (mut profile, sim) = resolve_sim(&built, args).config("resolving simulation settings")?;
    let text = fs::read_to_string(config_path).config(&format!("reading {}", config_path.display()))?;
    let mut dpo = DpoConfig::from_json(&text).config(&format!("parsing {}", config_path.display()))?;
    let raw: Value = serde_json::from_str(&text).config("parsing dpo config")?;
    if raw.get("candidates").is_none() {
        dpo.candidates = profile.candidates;
    }
    profile.candidates = dpo.candidates;
    let reference = read_tracks(reference_path)?;
    let init = match policy_path {
        Some(p) => load_policy(p)?,
        None => default_policy(&built.material).config("initial policy")?,
    };

    let mut m = RunManifest::new(
        "identify",
        json!({
            "scene": to_value(&spec),
            "profile": to_value(&profile),
            "sim": to_value(&sim),
            "dpo": to_value(&dpo),
            "initial_policy": to_value(&init),
            "reference": input_entry(reference_path)?,
        }),
    );
    m.seeds.insert("placement", placement_seed(&spec));
    m.seeds.insert("dpo", dpo.seed);
    create_dir(out)?;
    let manifest_path = out.join("manifest.json");
    if args.dry_run {
        return m.write(&manifest_path).config("writing manifest");
    }

    let report = m
        .time("identify", || {
            identify_with(&built, &reference, &init, &dpo, &sim, |r| {
                eprintln!(
                    "round {:>3}: {} pairs, best distance {:.4} px, mean log10 E {:.4}",
                    r.round, r.pairs, r.best_distance, r.mu_theta[0]
                );
            })
        })
        .sim("identification")?;

    let policy_path = out.join("policy.json");
    write_atomic(&policy_path, (report.policy.to_json() + "\n").as_bytes()).config("writing policy")?;
    let rounds_path = out.join("rounds.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf).config("encoding round log")?;
    write_atomic(&rounds_path, &buf).config("writing round log")?;
    let summary_path = out.join("summary.json");
    let summary = serde_json::to_string_pretty(&report).config("encoding summary")? + "\n";
    write_atomic(&summary_path, summary.as_bytes()).config("writing summary")?;
    for p in [&policy_path, &rounds_path, &summary_path] {
        m.add_file(out, p).config("inventory")?;
    }
    m.write(&manifest_path).config("writing manifest")
}

/// Ground-truth materials for NLL pretraining.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SupervisionSet {
    version: u32,
    samples: Vec<MaterialSpec>,
}

pub fn pretrain(
    scene_path: &Path,
    supervision_path: &Path,
    out: &Path,
    policy_path: Option<&Path>,
    steps: usize,
    lr: f64,
    reference_image: Option<&Path>,
) -> CmdResult {
    let (spec, built) = load_scene(scene_path, None)?;
    let text = fs::read_to_string(supervision_path)
        .config(&format!("reading {}", supervision_path.display()))?;
    let sup: SupervisionSet =
        serde_json::from_str(&text).config(&format!("parsing {}", supervision_path.display()))?;
    if sup.version != 1 {
        return Err(anyhow!("supervision version {} unsupported", sup.version)).config("supervision");
    }
    if sup.samples.is_empty() {
        return Err(Error::EmptySupervision).config("supervision");
    }
    let init = match policy_path {
        Some(p) => load_policy(p)?,
        None => default_policy(&built.material).config("initial policy")?,
    };
    let mut m = RunManifest::new(
        "pretrain",
        json!({
            "scene": to_value(&spec),
            "supervision": to_value(&sup),
            "initial_policy": to_value(&init),
            "steps": steps,
            "lr": lr,
            "reference_image": match reference_image {
                Some(p) => input_entry(p)?,
                None => Value::Null,
            },
        }),
    );
    let report = m
        .time("pretrain", || fit_policy(&init, &sup.samples, steps, lr))
        .config("pretraining")?;
    m.diagnostics.insert("initial_nll", json!(report.history[0]));
    m.diagnostics.insert("final_nll", json!(report.history.last()));
    if let Some(path) = reference_image {
        let f = fs::File::open(path).config(&format!("opening {}", path.display()))?;
        let target = Image::read_png(BufReader::new(f)).config("reading reference image")?;
        let rendered = m
            .time("render", || render(&built.gaussians, &built.camera))
            .config("rendering")?;
        let loss = photometric_loss(&rendered, &target).config("photometric loss")?;
        m.diagnostics.insert("photometric_loss", json!(loss));
    }
    write_parent(out)?;
    write_atomic(out, (report.policy.to_json() + "\n").as_bytes()).config("writing policy")?;
    let root = out.parent().unwrap_or(Path::new(""));
    m.add_file(root, out).config("inventory")?;
    m.write(&sidecar(out)).config("writing manifest")
}

//! Command-line front end. Exit codes: 0 success, 2 validation error,
//! 3 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use abcde::agents::{self, ActionSlots, AgentId};
use abcde::catalog::Catalog;
use abcde::language::ComplexityLevel;
use abcde::lessons::ConceptId;
use abcde::protocol::{self, ServerContext, Session, SessionConfig, Verb};
use abcde::sensors::{self, CaptureSchedule};
use abcde::tasks::{self, TaskKind};
use abcde::world::{generate_scene, GridSpec, Scene, SceneMetadata};

#[derive(Parser)]
#[command(name = "abcde", version, about = "Deterministic headless playroom simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Catalog JSON file; the built-in desk catalog when omitted.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct RoomArgs {
    #[arg(long, default_value_t = 10)]
    width: u32,
    #[arg(long, default_value_t = 10)]
    depth: u32,
    /// Interactable objects to place.
    #[arg(long = "objects", default_value_t = 10)]
    n_interactable: usize,
}

impl RoomArgs {
    fn config(self, seed: u64) -> SessionConfig {
        SessionConfig { seed, n_interactable: self.n_interactable, grid: GridSpec::room(self.width, self.depth) }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scene and print its metadata document.
    GenScene {
        #[command(flatten)]
        room: RoomArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one teacher lesson and write the episode log.
    RunLesson {
        #[command(flatten)]
        room: RoomArgs,
        /// Concept id, e.g. put_on, color:red, noun:ball, only.
        #[arg(long)]
        concept: String,
        #[arg(long, default_value = "L2")]
        level: String,
        /// Episode JSONL path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_frames: Option<PathBuf>,
    },
    /// Generate tasks and a separate answer-key file.
    GenTasks {
        #[command(flatten)]
        room: RoomArgs,
        #[arg(long, default_value = "QA")]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        keys: PathBuf,
    },
    /// Grade an answers file ({"task_id", "answer"} per line).
    Grade {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        /// Final scene metadata used to check Demonstrate tasks.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Replay an episode file and check its final hash.
    Replay { episode: PathBuf },
    /// Serve the wire protocol over TCP, or stdio with --stdio.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 8)]
        session_limit: usize,
        #[arg(long)]
        stdio: bool,
    },
    /// Let both agents wander and dump camera frames.
    DumpFrames {
        #[command(flatten)]
        room: RoomArgs,
        #[arg(long)]
        dump_frames: PathBuf,
        #[arg(long, default_value_t = 0)]
        ticks: u64,
        #[arg(long, default_value_t = 20)]
        every: u64,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

type CliResult = Result<(), Failure>;

fn invalid(m: impl ToString) -> Failure {
    Failure::Validation(m.to_string())
}

fn runtime(m: impl ToString) -> Failure {
    Failure::Runtime(m.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_catalog(path: Option<&Path>) -> Result<Arc<Catalog>, Failure> {
    match path {
        None => Ok(Arc::new(Catalog::desk())),
        Some(p) => Catalog::from_json(&read(p)?).map(Arc::new).map_err(invalid),
    }
}

fn dump_all(dir: &Path, frames: &[sensors::FrameSet]) -> CliResult {
    for f in frames {
        sensors::dump_frame(dir, f).map_err(runtime)?;
    }
    Ok(())
}

fn gen_scene(catalog: Arc<Catalog>, seed: u64, room: RoomArgs, out: Option<PathBuf>) -> CliResult {
    let c = room.config(seed);
    let scene = generate_scene(catalog, c.grid, c.n_interactable, seed).map_err(|e| match e.code() {
        "BadGrid" => invalid(e),
        _ => runtime(e),
    })?;
    let text = scene.metadata().to_canonical_json() + "\n";
    match out {
        Some(p) => write(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_lesson(
    catalog: Arc<Catalog>,
    seed: u64,
    room: RoomArgs,
    concept: &str,
    level: &str,
    out: Option<PathBuf>,
    dump: Option<PathBuf>,
) -> CliResult {
    let concept: ConceptId = concept.parse().map_err(invalid)?;
    let level: ComplexityLevel = level.parse().map_err(invalid)?;
    let mut session = Session::create(catalog, room.config(seed)).map_err(runtime)?;
    if let Some(dir) = &dump {
        fs::create_dir_all(dir).map_err(runtime)?;
        let cams = sensors::default_cameras(&session.scene().grid);
        dump_all(dir, &sensors::render_all(session.scene(), &cams))?;
    }
    let arrange = matches!(concept, ConceptId::Only | ConceptId::All | ConceptId::TakeOut);
    let result = session.handle(Verb::RunLesson, &json!({ "concept": concept, "level": level, "arrange": arrange }));
    if let Some(dir) = &dump {
        let cams = sensors::default_cameras(&session.scene().grid);
        dump_all(dir, &sensors::render_all(session.scene(), &cams))?;
    }
    let text = session.episode_jsonl();
    match &out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    let r = result.map_err(|e| match e.code.as_str() {
        "UnknownConcept" | "BadBinding" | "BadRequest" => invalid(e),
        _ => runtime(e),
    })?;
    eprintln!("lesson {concept}: success={} ticks={}", r["success"], r["ticks"]);
    if r["success"] == true {
        Ok(())
    } else {
        Err(runtime("lesson did not reach its postconditions"))
    }
}

fn gen_tasks(
    catalog: Arc<Catalog>,
    seed: u64,
    room: RoomArgs,
    kind: &str,
    count: usize,
    out: &Path,
    keys: &Path,
) -> CliResult {
    let kind: TaskKind = kind.parse().map_err(invalid)?;
    let c = room.config(seed);
    let mut made = Vec::with_capacity(count);
    let mut attempt = 0u64;
    // One scene per task; scenes without a viable task are skipped.
    while made.len() < count {
        if attempt >= count as u64 * 20 + 100 {
            return Err(runtime(format!("only {} of {count} {kind:?} tasks were viable", made.len())));
        }
        let s = seed.wrapping_add(attempt);
        attempt += 1;
        let mut scene = generate_scene(catalog.clone(), c.grid, c.n_interactable, s).map_err(runtime)?;
        let mut rng = scene.rng.clone();
        match tasks::generate_task(&scene, kind, &mut rng) {
            Ok(t) => made.push(t),
            Err(tasks::TaskError::NoViableTask(_)) => {}
            Err(e) => return Err(runtime(e)),
        }
        scene.rng = rng;
    }
    write(out, &tasks::tasks_to_jsonl(&made))?;
    write(keys, &tasks::keys_to_jsonl(&made))?;
    eprintln!("wrote {} tasks", made.len());
    Ok(())
}

#[derive(serde::Deserialize)]
struct Answer {
    task_id: String,
    #[serde(default)]
    answer: String,
}

fn grade(catalog: Arc<Catalog>, tasks_p: &Path, keys_p: &Path, answers_p: &Path, scene_p: Option<&Path>) -> CliResult {
    let loaded = tasks::load_tasks(&read(tasks_p)?, Some(&read(keys_p)?)).map_err(invalid)?;
    let scene: Option<Scene> = match scene_p {
        Some(p) => {
            let doc = SceneMetadata::from_json(&read(p)?).map_err(invalid)?;
            Some(Scene::from_metadata(&doc, catalog).map_err(invalid)?)
        }
        None => None,
    };
    let (mut passed, mut total) = (0usize, 0usize);
    for (n, line) in read(answers_p)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let a: Answer = serde_json::from_str(line).map_err(|e| invalid(format!("answer line {}: {e}", n + 1)))?;
        let task = loaded
            .iter()
            .find(|t| t.task_id == a.task_id)
            .ok_or_else(|| invalid(format!("answer line {}: unknown task {}", n + 1, a.task_id)))?;
        let verdict = match task.kind {
            TaskKind::Demonstrate => {
                let s = scene.as_ref().ok_or_else(|| invalid("Demonstrate tasks need --scene"))?;
                tasks::evaluate_demonstration(task, s)
            }
            _ => tasks::grade_answer(task, &a.answer),
        }
        .map_err(invalid)?;
        total += 1;
        passed += verdict.passed as usize;
        println!("{}", serde_json::to_string(&verdict).expect("verdict serializes"));
    }
    eprintln!("{passed}/{total} passed");
    Ok(())
}

fn replay(catalog: Arc<Catalog>, path: &Path) -> CliResult {
    match protocol::replay(&read(path)?, catalog) {
        Ok(hash) => {
            println!("{hash}");
            Ok(())
        }
        Err(e @ protocol::ReplayError::CorruptEpisode(_)) => Err(invalid(e)),
        Err(e) => Err(runtime(e)),
    }
}

fn serve(catalog: Arc<Catalog>, addr: &str, limit: usize, stdio: bool) -> CliResult {
    let ctx = ServerContext::new(catalog, limit);
    if stdio {
        return protocol::serve_stdio(ctx).map_err(runtime);
    }
    let handle = protocol::serve(addr, ctx).map_err(runtime)?;
    eprintln!("listening on {}", handle.local_addr());
    handle.join();
    Ok(())
}

fn dump_frames(catalog: Arc<Catalog>, seed: u64, room: RoomArgs, dir: &Path, ticks: u64, every: u64) -> CliResult {
    let c = room.config(seed);
    let mut scene = generate_scene(catalog, c.grid, c.n_interactable, seed).map_err(runtime)?;
    let schedule = CaptureSchedule::new(every, sensors::default_cameras(&scene.grid).to_vec()).map_err(invalid)?;
    fs::create_dir_all(dir).map_err(runtime)?;
    dump_all(dir, &schedule.capture(&scene))?;
    let mut slots = ActionSlots::new();
    let mut failure = None;
    for _ in 0..ticks {
        for agent in [AgentId::Child, AgentId::Parent] {
            if slots.is_idle(agent) {
                let cmd = agents::wander_step(&mut scene, agent);
                let _ = agents::begin_action(&mut scene, &mut slots, agent, agents::Activity::act(cmd));
            }
        }
        sensors::run_with_capture(&mut scene, &mut slots, 1, &schedule, |frames| {
            if failure.is_none() {
                failure = dump_all(dir, &frames).err();
            }
        });
        if let Some(f) = failure.take() {
            return Err(f);
        }
    }
    eprintln!("frames written to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.common.seed;
    let result = load_catalog(cli.common.catalog.as_deref()).and_then(|catalog| match cli.cmd {
        Cmd::GenScene { room, out } => gen_scene(catalog, seed, room, out),
        Cmd::RunLesson { room, concept, level, out, dump_frames } => {
            run_lesson(catalog, seed, room, &concept, &level, out, dump_frames)
        }
        Cmd::GenTasks { room, kind, count, out, keys } => gen_tasks(catalog, seed, room, &kind, count, &out, &keys),
        Cmd::Grade { tasks, keys, answers, scene } => grade(catalog, &tasks, &keys, &answers, scene.as_deref()),
        Cmd::Replay { episode } => replay(catalog, &episode),
        Cmd::Serve { addr, session_limit, stdio } => serve(catalog, &addr, session_limit, stdio),
        Cmd::DumpFrames { room, dump_frames: dir, ticks, every } => dump_frames(catalog, seed, room, &dir, ticks, every),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

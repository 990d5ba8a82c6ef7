//! `scenegraph` command-line front end.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use scenegraph::geometry::{Mat3, RigidTransform, Vec3};
use scenegraph::ingest::{PoseUpdateEvent, SessionDir};
use scenegraph::memory::oracle::{serve_oracle, SubprocessOracle};
use scenegraph::memory::MaskOracle;
use scenegraph::objects::{evaluate_objects, CachedObject, OrientedBBox};
use scenegraph::protocol::{object_json, parse_point, run_script, ToolServer};
use scenegraph::synth::presets::{self, PRESETS};
use scenegraph::synth::truth::{evaluate_regions, GroundTruth};
use scenegraph::synth::{generate_session, SceneSpec, SyntheticOracle, SCENE_FILE, TRUTH_FILE};
use scenegraph::{EngineConfig, Error, SceneGraph};

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "scenegraph", version, about = "Query-time hierarchical 3D scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a session directory.
    Gen {
        /// Scene description (JSON).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        spec: Option<PathBuf>,
        /// Built-in scene name.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scene seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the scene graph from a session's packet records.
    Ingest {
        #[arg(long)]
        session: PathBuf,
        /// Keyframes per submap; defaults to the manifest value.
        #[arg(long)]
        submap_size: Option<usize>,
        /// Depth-confidence gate for back-projection.
        #[arg(long)]
        conf_threshold: Option<f64>,
    },
    /// Apply a corrected base transform to one submap.
    PoseUpdate {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        submap: u64,
        /// 16 comma-separated values, row-major.
        #[arg(long, allow_hyphen_values = true)]
        transform: String,
    },
    /// Find every instance of a concept.
    QueryObject {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        max_keyframes: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        min_score: Option<f64>,
        /// Write the object point clouds as ASCII PLY.
        #[arg(long)]
        dump_ply: Option<PathBuf>,
        /// External mask oracle, spoken to over stdin/stdout.
        #[arg(long)]
        oracle_cmd: Option<String>,
    },
    /// Score a query's objects against ground-truth boxes.
    EvalObjects {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        text: String,
        /// Ground-truth file; defaults to the session's truth file.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Ground-truth label to compare against; defaults to the query text.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        oracle_cmd: Option<String>,
    },
    /// Shortest traversable path between two points.
    Plan {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        to: String,
    },
    /// Dump the places graph.
    ExportPlaces {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Json)]
        format: ExportFormat,
    },
    /// Regions matching an open-vocabulary query.
    QueryRegion {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Label every place with one of a closed set of categories.
    Partition {
        #[arg(long)]
        session: PathBuf,
        /// One category per line.
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Place-level precision, recall and accuracy against ground-truth regions.
    EvalRegions {
        #[arg(long)]
        session: PathBuf,
        /// Evaluate one open-vocabulary query.
        #[arg(long, conflicts_with = "vocab", required_unless_present = "vocab")]
        text: Option<String>,
        /// Evaluate a closed-vocabulary partition.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Engine counters.
    Stats {
        #[arg(long)]
        session: PathBuf,
    },
    /// Interactive tool protocol on stdin/stdout.
    Repl {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        oracle_cmd: Option<String>,
        /// Persist caches when the session ends.
        #[arg(long)]
        save: bool,
    },
    /// Run a file of tool requests, one per line.
    Script {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        oracle_cmd: Option<String>,
        #[arg(long)]
        save: bool,
    },
    /// Serve a session's synthetic mask oracle on stdin/stdout.
    ServeOracle {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        session: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(v: &Value) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn load(session: &Path) -> CliResult<SceneGraph> {
    SceneGraph::load(session).map_err(|e| format!("{e} (run `scenegraph ingest --session {}` first)", session.display()).into())
}

/// The external oracle if one is given, otherwise the synthetic oracle of a generated session.
fn oracle_for(session: &Path, cmd: Option<&str>) -> CliResult<Box<dyn MaskOracle>> {
    if let Some(cmd) = cmd {
        return Ok(Box::new(SubprocessOracle::spawn(cmd)?));
    }
    let scene = session.join(SCENE_FILE);
    if !scene.exists() {
        return Err(format!("{} has no {SCENE_FILE}; pass --oracle-cmd", session.display()).into());
    }
    Ok(Box::new(SyntheticOracle::from_spec(&SceneSpec::load(scene)?)?))
}

fn truth_path(session: &Path, truth: Option<PathBuf>) -> PathBuf {
    truth.unwrap_or_else(|| session.join(TRUTH_FILE))
}

fn run(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::Gen { spec, preset, out, seed } => {
            let mut scene = match (spec, preset) {
                (Some(path), _) => SceneSpec::load(path)?,
                (None, Some(name)) => presets::by_name(&name, seed.unwrap_or(7))
                    .ok_or_else(|| format!("unknown preset '{name}'; expected one of {}", PRESETS.join(", ")))?,
                (None, None) => unreachable!("clap requires --spec or --preset"),
            };
            if let Some(s) = seed {
                scene.seed = s;
            }
            let session = generate_session(&scene, &out)?;
            print_json(&json!({
                "out": out,
                "keyframes": session.packets.len(),
                "objects": session.truth.objects.len(),
                "regions": session.truth.regions.len(),
                "concepts": scene.concepts(),
            }))?;
        }
        Command::Ingest {
            session,
            submap_size,
            conf_threshold,
        } => {
            let dir = SessionDir::open(&session)?;
            let mut config = EngineConfig::from_env()?;
            config.submap_size = submap_size.unwrap_or(dir.manifest.submap_size);
            if config.submap_size == 0 {
                return Err("submap size must be positive".into());
            }
            if let Some(t) = conf_threshold {
                config = config.with_confidence_threshold(t);
            }
            let engine = SceneGraph::ingest_session(&session, config)?;
            engine.save(&session)?;
            print_json(&serde_json::to_value(engine.stats())?)?;
        }
        Command::PoseUpdate {
            session,
            submap,
            transform,
        } => {
            let values = transform
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("--transform: {e}"))?;
            let transform = RigidTransform::from_row_major(&values)?;
            let mut engine = load(&session)?;
            engine.apply_pose_update(&PoseUpdateEvent {
                submap_id: submap,
                transform,
            })?;
            engine.save(&session)?;
            print_json(&serde_json::to_value(engine.stats())?)?;
        }
        Command::QueryObject {
            session,
            text,
            max_keyframes,
            min_score,
            dump_ply,
            oracle_cmd,
        } => {
            let mut engine = load(&session)?;
            let mut oracle = oracle_for(&session, oracle_cmd.as_deref())?;
            let query = engine.embed(&text)?;
            let mut params = engine.config.objects;
            if let Some(k) = max_keyframes {
                params.retrieval.max_keyframes = k;
            }
            if let Some(s) = min_score {
                params.retrieval.min_score = s;
            }
            let out = engine.query_object_with(&query, &mut oracle, &params)?;
            engine.save(&session)?;
            if let Some(path) = dump_ply {
                write_ply(&path, &out.objects)?;
            }
            print_json(&json!({
                "query": out.key,
                "status": if out.objects.is_empty() { "nonentity" } else { "ok" },
                "cache_hit": out.cache_hit,
                "oracle_calls": out.oracle_calls,
                "objects": out.objects.iter().map(object_json).collect::<Vec<_>>(),
            }))?;
        }
        Command::EvalObjects {
            session,
            text,
            truth,
            label,
            oracle_cmd,
        } => {
            let truths = load_truth_boxes(&truth_path(&session, truth), label.as_deref().unwrap_or(&text))?;
            let mut engine = load(&session)?;
            let mut oracle = oracle_for(&session, oracle_cmd.as_deref())?;
            let query = engine.embed(&text)?;
            let out = engine.query_object(&query, &mut oracle)?;
            engine.save(&session)?;
            let estimates: Vec<OrientedBBox> = out.objects.iter().map(|o| o.bbox).collect();
            let eval = evaluate_objects(&estimates, &truths);
            print_json(&json!({
                "query": out.key,
                "estimates": estimates.len(),
                "truths": truths.len(),
                "osr": eval.osr,
                "mean_iou": eval.mean_iou,
                "matches": eval.matches.iter().map(|(e, t, iou, ok)| json!({
                    "object_id": out.objects[*e].object_id,
                    "truth_index": t,
                    "iou": iou,
                    "osr_match": ok,
                })).collect::<Vec<_>>(),
            }))?;
        }
        Command::Plan { session, from, to } => {
            let engine = load(&session)?;
            let path = engine.plan_path(&parse_point(&from)?, &parse_point(&to)?)?;
            print_json(&json!({
                "tile_ids": path.tile_ids,
                "cost": path.cost,
                "polyline": path.polyline.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
            }))?;
        }
        Command::ExportPlaces { session, format } => {
            let engine = load(&session)?;
            match format {
                ExportFormat::Json => print_json(&serde_json::to_value(engine.places().export())?)?,
            }
        }
        Command::QueryRegion { session, text } => {
            let mut engine = load(&session)?;
            let query = engine.embed(&text)?;
            let (result, hit) = engine.query_region(&query)?;
            engine.save(&session)?;
            let mut v = serde_json::to_value(&result)?;
            v["cache_hit"] = json!(hit);
            print_json(&v)?;
        }
        Command::Partition { session, vocab } => {
            let engine = load(&session)?;
            let result = partition(&engine, &vocab)?;
            print_json(&json!({
                "labels": result.labels,
                "community_labels": result.community_labels,
            }))?;
        }
        Command::EvalRegions {
            session,
            text,
            vocab,
            truth,
        } => {
            let truth = GroundTruth::load(truth_path(&session, truth))?;
            let mut engine = load(&session)?;
            let truth_labels: std::collections::BTreeMap<u64, String> = engine
                .places()
                .graph()
                .nodes()
                .filter_map(|n| truth.region_at(&n.centroid).map(|l| (n.tile_id, l.to_string())))
                .collect();
            let eval = if let Some(text) = text {
                let query = engine.embed(&text)?;
                let (result, _) = engine.query_region(&query)?;
                engine.save(&session)?;
                let key = scenegraph::memory::normalize_text(&text);
                let inside = |id: &u64| result.regions.iter().any(|r| r.place_ids.contains(id));
                let binary = |id: &u64, yes: bool| (*id, if yes { key.clone() } else { "other".to_string() });
                let predicted = truth_labels.keys().map(|id| binary(id, inside(id))).collect();
                let actual = truth_labels.iter().map(|(id, l)| binary(id, *l == key)).collect();
                let eval = evaluate_regions(&predicted, &actual);
                let mut v = serde_json::to_value(&eval)?;
                v["regions"] = json!(result.regions.len());
                v
            } else {
                let vocab = vocab.expect("clap requires --text or --vocab");
                let result = partition(&engine, &vocab)?;
                serde_json::to_value(evaluate_regions(&result.labels, &truth_labels))?
            };
            print_json(&eval)?;
        }
        Command::Stats { session } => {
            print_json(&serde_json::to_value(load(&session)?.stats())?)?;
        }
        Command::Repl {
            session,
            oracle_cmd,
            save,
        } => {
            let mut engine = load(&session)?;
            let mut oracle = oracle_for(&session, oracle_cmd.as_deref())?;
            let mut errors = 0;
            {
                let mut server = ToolServer::new(&mut engine, &mut oracle);
                let stdin = std::io::stdin();
                let mut out = std::io::stdout().lock();
                for line in stdin.lock().lines() {
                    let line = line?;
                    let trimmed = line.trim();
                    if trimmed.is_empty() || trimmed.starts_with('#') {
                        continue;
                    }
                    if matches!(trimmed, "quit" | "exit") {
                        break;
                    }
                    let response = server.handle_line(trimmed);
                    if response.error.is_some() {
                        errors += 1;
                    }
                    writeln!(out, "{}", response.to_line())?;
                    out.flush()?;
                }
            }
            if save {
                engine.save(&session)?;
            }
            return Ok(if errors == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Script {
            session,
            file,
            oracle_cmd,
            save,
        } => {
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let mut engine = load(&session)?;
            let mut oracle = oracle_for(&session, oracle_cmd.as_deref())?;
            let transcript = run_script(&mut engine, &mut oracle, &text);
            print!("{}", transcript.text());
            if save {
                engine.save(&session)?;
            }
            return Ok(ExitCode::from(transcript.exit_code() as u8));
        }
        Command::ServeOracle { session, spec } => {
            let spec_path = spec.unwrap_or_else(|| session.expect("clap requires --session or --spec").join(SCENE_FILE));
            let mut oracle = SyntheticOracle::from_spec(&SceneSpec::load(spec_path)?)?;
            let stdin = std::io::stdin();
            serve_oracle(&mut oracle, stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn partition(engine: &SceneGraph, vocab: &Path) -> CliResult<scenegraph::regions::PartitionResult> {
    let text = std::fs::read_to_string(vocab).map_err(|e| Error::io(vocab, e))?;
    let categories = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| engine.embed(l))
        .collect::<Result<Vec<_>, _>>()?;
    if categories.is_empty() {
        return Err(format!("{} lists no categories", vocab.display()).into());
    }
    Ok(engine.partition(&categories)?)
}

/// A ground-truth box as a flat record; `axes` is row-major with the box axes as columns.
#[derive(Deserialize)]
struct TruthBox {
    label: String,
    center: [f64; 3],
    axes: [f64; 9],
    half_extents: [f64; 3],
}

/// Boxes labeled `label` from either a generated truth file or a list of flat records.
fn load_truth_boxes(path: &Path, label: &str) -> CliResult<Vec<OrientedBBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    if value.is_object() {
        let truth: GroundTruth = serde_json::from_value(value)?;
        return Ok(truth.boxes_labeled(label));
    }
    let key = scenegraph::memory::normalize_text(label);
    let records: Vec<TruthBox> = serde_json::from_value(value)?;
    Ok(records
        .into_iter()
        .filter(|r| scenegraph::memory::normalize_text(&r.label) == key)
        .map(|r| {
            OrientedBBox::new(
                Vec3::from(r.center),
                Mat3::from_row_slice(&r.axes),
                Vec3::from(r.half_extents),
            )
        })
        .collect())
}

fn write_ply(path: &Path, objects: &[CachedObject]) -> CliResult<()> {
    let total: usize = objects.iter().map(|o| o.points.len()).sum();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {total}\n"));
    out.push_str("property float x\nproperty float y\nproperty float z\nproperty uint object_id\nend_header\n");
    for o in objects {
        for p in &o.points.points {
            out.push_str(&format!("{} {} {} {}\n", p.x, p.y, p.z, o.object_id));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

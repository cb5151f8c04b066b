use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use roomtrace::{JobQueue, Operation, PipelineError, Project, Result, Workspace};
use roomtrace_core::fixtures::box_room;
use roomtrace_core::ingest::write_sfm_text;
use roomtrace_core::materials::BUNDLED_SAMPLE_CSV;
use roomtrace_core::Vec3;
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "roomtrace", version, about = "Photo reconstruction to auralized room model")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Project directory holding project.json.
    #[arg(long, global = true, default_value = ".")]
    project: PathBuf,
    /// Seed override for seeded stages (reconstruct, simulate).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stage parameters as JSON, or @file to read them from a file.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    params: Option<String>,
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project, optionally importing an SfM reconstruction.
    Init {
        #[arg(long)]
        sfm: Option<PathBuf>,
        #[arg(long)]
        photos: Option<PathBuf>,
        /// Overwrite an existing project file.
        #[arg(long)]
        force: bool,
    },
    /// Import cameras.txt / images.txt / points3D.txt from a directory.
    Import {
        #[arg(long)]
        sfm: PathBuf,
        #[arg(long)]
        photos: Option<PathBuf>,
    },
    /// Rescale the reconstruction by a factor or a marker pair.
    Scale {
        #[arg(long, conflicts_with = "marker")]
        factor: Option<f64>,
        /// Two point ids and their real distance in meters.
        #[arg(long, num_args = 3, value_names = ["A", "B", "DISTANCE"])]
        marker: Option<Vec<f64>>,
    },
    /// Choose a smaller photo set covering the tracked points.
    ReducePhotos {
        #[arg(long)]
        coverage: Option<f64>,
    },
    /// Import, list, create, delete, merge, divide or regenerate masks.
    #[command(subcommand)]
    Mask(MaskCommand),
    /// Carry a mask's point identities into another photo (or all).
    Extrapolate {
        mask: u32,
        #[arg(long)]
        target: Option<u32>,
    },
    /// Load absorption tables, search them and assign measurements to masks.
    #[command(subcommand)]
    Materials(MaterialsCommand),
    /// Clean the cloud and build the annotated room mesh.
    Reconstruct,
    /// Check the mesh, optionally filling holes up to a boundary length.
    Validate {
        #[arg(long)]
        fill_holes: Option<usize>,
    },
    /// Write the STL and its material sidecar.
    ExportStl {
        /// Export even when the mesh is not watertight.
        #[arg(long)]
        force: bool,
        /// Also copy the exported files into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a room impulse response on the exported mesh.
    Simulate {
        #[arg(long)]
        method: Option<String>,
        /// Source position as x,y,z.
        #[arg(long, value_parser = parse_vec3)]
        source: Option<Vec3>,
        /// Receiver position as x,y,z.
        #[arg(long, value_parser = parse_vec3)]
        receiver: Option<Vec3>,
        /// Put the receiver at a photo's camera center.
        #[arg(long)]
        receiver_photo: Option<u32>,
    },
    /// Convolve a WAV signal with a simulated impulse response.
    Auralize {
        #[arg(long)]
        rir: u32,
        #[arg(long)]
        signal: PathBuf,
        /// Also copy the result to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Serve the HTTP interface.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Re-run another project's operation log here and compare artifacts.
    Replay {
        #[arg(long)]
        from: PathBuf,
    },
    /// Print the project's artifact hashes and log length.
    Status,
    /// Write a synthetic box-room SfM set, mask suggestions and sample
    /// absorption table.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        fixture_seed: u64,
    },
}

#[derive(Subcommand)]
enum MaskCommand {
    /// Import segmentation suggestions from a JSON document.
    Import {
        document: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print every mask with its identities and material.
    List,
    /// Create a mask from a JSON polygon like [[u,v],...].
    Create {
        #[arg(long)]
        image: u32,
        #[arg(long)]
        polygon: String,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        hint: Option<String>,
    },
    /// Remove a mask.
    Delete { mask: u32 },
    /// Replace two masks of one photo by their union.
    Merge { a: u32, b: u32 },
    /// Split a mask along a JSON polyline like [[u,v],...].
    Divide {
        mask: u32,
        #[arg(long)]
        cut: String,
    },
    /// Rebuild an extrapolated mask from its source mask.
    Regenerate { mask: u32 },
}

#[derive(Subcommand)]
enum MaterialsCommand {
    /// Load an absorption table (CSV).
    Load { csv: PathBuf },
    /// Rank measurements for a free-text query.
    Suggest {
        query: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Assign the top suggestion to this mask.
        #[arg(long)]
        apply: Option<u32>,
    },
    /// Assign a measurement to a mask (omit the measurement to clear it).
    Assign {
        mask: u32,
        measurement: Option<u32>,
        #[arg(long)]
        texture: Option<String>,
    },
    /// Assign the best match for every unassigned mask.
    Auto {
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        min_score: Option<f64>,
    },
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| format!("`{c}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got `{s}`")),
    }
}

fn parse_json(what: &str, text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| PipelineError::Invalid(format!("{what}: {e}")))
}

impl Global {
    fn base_params(&self) -> Result<Map<String, Value>> {
        let Some(raw) = &self.params else {
            return Ok(Map::new());
        };
        let text = match raw.strip_prefix('@') {
            Some(path) => std::fs::read_to_string(path).map_err(|e| PipelineError::File {
                path: path.into(),
                source: e,
            })?,
            None => raw.clone(),
        };
        match parse_json("--params", &text)? {
            Value::Object(m) => Ok(m),
            Value::Null => Ok(Map::new()),
            _ => Err(PipelineError::Invalid("--params must be a JSON object".into())),
        }
    }

    fn workspace(&self) -> Result<Workspace> {
        Workspace::open(&self.project)
    }

    /// Applies `stage` with `--params` overlaid by the non-null `flags`.
    fn apply(&self, ws: &Workspace, stage: &str, flags: Value) -> Result<Value> {
        let mut params = self.base_params()?;
        if let Value::Object(flags) = flags {
            params.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
        }
        let mut op = Operation::from_stage(stage, Value::Object(params))?;
        if let Some(seed) = self.seed {
            op.set_seed(seed);
        }
        ws.apply(op)
    }
}

fn copy_into(dir: &Path, src: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::File {
        path: dir.into(),
        source: e,
    })?;
    let dst = dir.join(src.file_name().expect("artifact has a file name"));
    std::fs::copy(src, &dst).map_err(|e| PipelineError::File {
        path: dst.clone(),
        source: e,
    })?;
    Ok(dst)
}

fn write_fixture(out: &Path, seed: u64) -> Result<Value> {
    let room = box_room(Vec3::new(5.0, 4.0, 3.0), 0.25, 0.002, seed);
    let sfm = write_sfm_text(&room.db);
    let files = [
        ("cameras.txt", sfm.cameras.as_str()),
        ("images.txt", sfm.images.as_str()),
        ("points3D.txt", sfm.points.as_str()),
        ("suggestions.json", room.suggestions.as_str()),
        ("absorption.csv", BUNDLED_SAMPLE_CSV),
    ];
    std::fs::create_dir_all(out).map_err(|e| PipelineError::File {
        path: out.into(),
        source: e,
    })?;
    for (name, text) in files {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| PipelineError::File { path, source: e })?;
    }
    Ok(json!({ "fixture": out, "dims": [5.0, 4.0, 3.0], "points": room.db.points().len() }))
}

fn run(cli: Cli) -> Result<Value> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Invalid(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Init { sfm, photos, force } => {
            let ws = Workspace::init(&g.project, force)?;
            match sfm {
                Some(sfm) => g.apply(&ws, "import", json!({ "sfm_dir": sfm, "photo_dir": photos })),
                None => Ok(json!({ "project": Project::file(&g.project) })),
            }
        }
        Command::Import { sfm, photos } => {
            g.apply(&g.workspace()?, "import", json!({ "sfm_dir": sfm, "photo_dir": photos }))
        }
        Command::Scale { factor, marker } => {
            let flags = match (factor, marker) {
                (Some(f), _) => json!({ "kind": "factor", "factor": f }),
                (None, Some(m)) => json!({ "kind": "marker", "a": m[0] as u64, "b": m[1] as u64, "distance": m[2] }),
                (None, None) => json!({}),
            };
            g.apply(&g.workspace()?, "scale", flags)
        }
        Command::ReducePhotos { coverage } => g.apply(&g.workspace()?, "reduce-photos", json!({ "coverage": coverage })),
        Command::Mask(m) => {
            let ws = g.workspace()?;
            match m {
                MaskCommand::Import { document, threshold } => {
                    g.apply(&ws, "mask-import", json!({ "document": document, "threshold": threshold }))
                }
                MaskCommand::List => Ok(serde_json::to_value(ws.snapshot().masks.iter().collect::<Vec<_>>())?),
                MaskCommand::Create {
                    image,
                    polygon,
                    label,
                    tag,
                    hint,
                } => {
                    let flags = json!({
                        "image_id": image,
                        "polygon": parse_json("--polygon", &polygon)?,
                        "category_label": label,
                        "object_tag": tag,
                        "material_hint": hint,
                    });
                    g.apply(&ws, "mask-create", flags)
                }
                MaskCommand::Delete { mask } => g.apply(&ws, "mask-delete", json!({ "mask": mask })),
                MaskCommand::Merge { a, b } => g.apply(&ws, "mask-merge", json!({ "a": a, "b": b })),
                MaskCommand::Divide { mask, cut } => {
                    g.apply(&ws, "mask-divide", json!({ "mask": mask, "cut": parse_json("--cut", &cut)? }))
                }
                MaskCommand::Regenerate { mask } => g.apply(&ws, "mask-regenerate", json!({ "mask": mask })),
            }
        }
        Command::Extrapolate { mask, target } => {
            g.apply(&g.workspace()?, "mask-extrapolate", json!({ "mask": mask, "target": target }))
        }
        Command::Materials(m) => {
            let ws = g.workspace()?;
            match m {
                MaterialsCommand::Load { csv } => g.apply(&ws, "materials-load", json!({ "csv": csv })),
                MaterialsCommand::Suggest { query, k, apply } => {
                    let db = ws.measurements(&ws.snapshot())?;
                    let ranked = db.suggest_measurements(&query, k)?;
                    let list: Vec<Value> = ranked
                        .iter()
                        .map(|r| json!({ "id": r.id, "name": db.get(r.id).ok().map(|m| m.name.clone()), "score": r.score }))
                        .collect();
                    match (apply, ranked.first()) {
                        (Some(mask), Some(top)) => {
                            let assigned = g.apply(&ws, "material-assign", json!({ "mask": mask, "measurement": top.id }))?;
                            Ok(json!({ "suggestions": list, "assigned": assigned }))
                        }
                        (Some(_), None) => Err(PipelineError::NotFound(format!("measurement matching `{query}`"))),
                        (None, _) => Ok(Value::Array(list)),
                    }
                }
                MaterialsCommand::Assign {
                    mask,
                    measurement,
                    texture,
                } => g.apply(
                    &ws,
                    "material-assign",
                    json!({ "mask": mask, "measurement": measurement, "texture_attribute": texture }),
                ),
                MaterialsCommand::Auto { overwrite, min_score } => g.apply(
                    &ws,
                    "materials-auto-assign",
                    json!({ "overwrite": overwrite.then_some(true), "min_score": min_score }),
                ),
            }
        }
        Command::Reconstruct => g.apply(&g.workspace()?, "reconstruct", json!({})),
        Command::Validate { fill_holes } => g.apply(&g.workspace()?, "validate", json!({ "fill_holes": fill_holes })),
        Command::ExportStl { force, out } => {
            let ws = g.workspace()?;
            let value = g.apply(&ws, "export-stl", json!({ "force": force.then_some(true) }))?;
            if let Some(out) = out {
                let p = ws.snapshot();
                let e = p.export.as_ref().expect("export just ran");
                copy_into(&out, &e.stl.resolve(ws.dir()))?;
                copy_into(&out, &e.sidecar.resolve(ws.dir()))?;
            }
            Ok(value)
        }
        Command::Simulate {
            method,
            source,
            receiver,
            receiver_photo,
        } => {
            let flags = json!({
                "method": method,
                "source": source.map(|v| [v.x, v.y, v.z]),
                "receiver": receiver.map(|v| [v.x, v.y, v.z]),
                "receiver_photo": receiver_photo,
            });
            g.apply(&g.workspace()?, "simulate", flags)
        }
        Command::Auralize {
            rir,
            signal,
            out,
            no_normalize,
        } => {
            let ws = g.workspace()?;
            let flags = json!({ "rir": rir, "signal": signal, "normalize": no_normalize.then_some(false) });
            let value = g.apply(&ws, "auralize", flags)?;
            if let Some(out) = out {
                let p = ws.snapshot();
                let rec = p.auralizations.last().expect("auralization just ran");
                std::fs::write(&out, rec.output.read(ws.dir())?).map_err(|e| PipelineError::File {
                    path: out.clone(),
                    source: e,
                })?;
            }
            Ok(value)
        }
        Command::Serve { bind } => {
            let jobs = JobQueue::start(Arc::new(g.workspace()?));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = roomtrace::server::bind(bind).await?;
                eprintln!("serving {} on http://{}", g.project.display(), listener.local_addr()?);
                roomtrace::server::serve(listener, jobs).await
            })?;
            Ok(Value::Null)
        }
        Command::Replay { from } => {
            let source = Project::load(&from)?;
            let ws = Workspace::init(&g.project, false)?;
            Ok(serde_json::to_value(ws.replay(&source)?)?)
        }
        Command::Status => {
            let p = g.workspace()?.snapshot();
            Ok(json!({
                "schema_version": p.schema_version,
                "operations": p.log.len(),
                "masks": p.masks.iter().count(),
                "artifacts": p.artifact_hashes(),
            }))
        }
        Command::Fixture { out, fixture_seed } => write_fixture(&out, fixture_seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            // a closed pipe (e.g. `| head`) is not a failure of the command
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

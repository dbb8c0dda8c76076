//! Runs, sweeps over halved time steps, bundle directories and reports.

use crate::config::{InitialSpec, Mode, RunConfig};
use crate::io::{read_etas, read_fields, read_json, sha256_file, write_csv, write_etas, write_fields, write_json};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rothe_core::diagnostics::{
    build_report, random_smooth_field, DiagnosticsReport, Level, LevelSummary, TrajectoryBundle,
};
use rothe_core::field::DiscreteField;
use rothe_core::grid::{Grid, Layout};
use rothe_core::rothe_fsi::{run_fsi, tube_layout, tube_map, FsiTrajectory};
use rothe_core::rothe_ns::{run_ns, NsTrajectory};
use rothe_core::spaces::{l2_sq, Leray};
use rothe_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub index: usize,
    pub dt: f64,
    pub steps: usize,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub levels: Vec<LevelRecord>,
    pub files: Vec<FileEntry>,
}

pub enum Trajectory {
    Ns(NsTrajectory),
    Fsi(FsiTrajectory),
}

impl Trajectory {
    pub fn level(&self) -> Level {
        match self {
            Trajectory::Ns(t) => Level::from_ns(t),
            Trajectory::Fsi(t) => Level::from_fsi(t),
        }
    }
}

pub fn grid(cfg: &RunConfig) -> Result<Grid> {
    Grid::new(cfg.grid.nz, cfg.grid.nr, cfg.grid.length)
}

pub fn ns_layout(cfg: &RunConfig) -> Result<Arc<Layout>> {
    Ok(Arc::new(Layout::new(grid(cfg)?, cfg.ns.walls.walls())?))
}

/// Initial velocity of the prescribed-motion runs (the same for every level).
pub fn ns_initial(cfg: &RunConfig) -> Result<DiscreteField> {
    let layout = ns_layout(cfg)?;
    let motion = cfg.motion().expect("ns mode");
    let map = motion.map_at(0.0);
    match cfg.ns.initial {
        InitialSpec::Zero => Ok(DiscreteField::zeros(layout, map)),
        InitialSpec::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let x = Leray::new(&layout, &map)?.project(&random_smooth_field(&layout, &mut rng))?;
            let u = DiscreteField::new(layout, map, x)?;
            let n = l2_sq(&u).sqrt();
            let s = if n > 0.0 { amplitude / n } else { 0.0 };
            Ok(u.with_values(u.x.iter().map(|v| v * s).collect()))
        }
    }
}

pub fn run_level(cfg: &RunConfig, level: usize) -> Result<Trajectory> {
    match cfg.mode {
        Mode::Ns => {
            let u0 = ns_initial(cfg)?;
            let motion = cfg.motion().expect("ns mode");
            Ok(Trajectory::Ns(run_ns(&u0, &motion, &cfg.ns_params(level))?))
        }
        Mode::Fsi => Ok(Trajectory::Fsi(run_fsi(grid(cfg)?, &cfg.fsi_params(level), None, None)?)),
    }
}

/// Writes ledger, displacements, summary and (optionally) fields of one run into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, run: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let level = run.level();
    match run {
        Trajectory::Ns(t) => write_csv(&dir.join("ledger.csv"), &t.ledger)?,
        Trajectory::Fsi(t) => {
            write_csv(&dir.join("ledger.csv"), &t.ledger)?;
            write_etas(&dir.join("etas.csv"), &t.etas, cfg.grid.length)?;
        }
    }
    write_json(&dir.join("summary.json"), &level.summary)?;
    if cfg.output.fields {
        write_fields(&dir.join("fields.txt"), &level.fields, level.dt)?;
    }
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p != root.join("manifest.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Writes `manifest.json` listing every other file under `dir` with its checksum.
pub fn write_manifest(dir: &Path, cfg: &RunConfig, levels: Vec<LevelRecord>) -> Result<Manifest> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    let files = paths
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            Ok(FileEntry { path: rel, sha256: sha256_file(p)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode,
        seed: cfg.seed,
        levels,
        files,
    };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

/// Checks the checksums listed in the manifest.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(&dir.join("manifest.json"))?;
    for f in &m.files {
        if sha256_file(&dir.join(&f.path))? != f.sha256 {
            return Err(Error::Config(format!("checksum mismatch for {}", f.path)));
        }
    }
    Ok(m)
}

/// Single run at the coarsest step.
pub fn run_single(cfg: &RunConfig, out: &Path) -> Result<Level> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.canonical().to_toml()?)?;
    let run = run_level(cfg, 0)?;
    write_run(out, cfg, &run)?;
    let level = run.level();
    write_manifest(
        out,
        cfg,
        vec![LevelRecord { index: 0, dt: level.dt, steps: level.steps(), ok: true, error: None }],
    )?;
    Ok(level)
}

fn level_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("level_{k}"))
}

/// Runs every level (in parallel over `cfg.sweep.jobs` workers) and writes the bundle.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let n = cfg.sweep.levels;
    if n < 3 {
        return Err(Error::Contract(format!("a sweep needs at least 3 levels, got {n}")));
    }
    if !cfg.output.fields {
        return Err(Error::Contract("a sweep must write fields (output.fields = true)".into()));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.canonical().to_toml()?)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|s| {
        for _ in 0..cfg.sweep.jobs.min(n) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= n {
                    break;
                }
                let r = run_level(cfg, k).and_then(|run| write_run(&level_dir(out, k), cfg, &run));
                if let Err(e) = r {
                    results.lock().expect("no poisoned workers")[k] = Some(e.to_string());
                }
            });
        }
    });
    let errors = results.into_inner().expect("no poisoned workers");
    let records: Vec<LevelRecord> = errors
        .into_iter()
        .enumerate()
        .map(|(k, e)| LevelRecord { index: k, dt: cfg.dt(k), steps: cfg.steps(k), ok: e.is_none(), error: e })
        .collect();
    let ok = records.iter().filter(|r| r.ok).count();
    let m = write_manifest(out, cfg, records)?;
    if ok < 3 {
        return Err(Error::Solver(format!("only {ok} of {n} levels succeeded")));
    }
    Ok(m)
}

/// Reads a bundle written by [`sweep`].
pub fn load_bundle(dir: &Path) -> Result<(RunConfig, TrajectoryBundle)> {
    let cfg = RunConfig::load(&dir.join("config.toml"))?;
    let manifest = verify_manifest(dir)?;
    if manifest.config_hash != cfg.hash() {
        return Err(Error::Config("bundle config does not match its manifest".into()));
    }
    let mut levels = Vec::new();
    for rec in manifest.levels.iter().filter(|r| r.ok) {
        let d = level_dir(dir, rec.index);
        let summary: LevelSummary = read_json(&d.join("summary.json"))?;
        let (layout, maps, etas) = match cfg.mode {
            Mode::Ns => {
                let motion = cfg.motion().expect("ns mode");
                let maps = (0..=rec.steps).map(|n| motion.map_at(n as f64 * rec.dt)).collect::<Vec<_>>();
                (ns_layout(&cfg)?, maps, None)
            }
            Mode::Fsi => {
                let etas = read_etas(&d.join("etas.csv"))?;
                let p = cfg.fsi_params(rec.index);
                let maps = (0..=rec.steps).map(|n| tube_map(&p, &etas[n.saturating_sub(1)])).collect::<Vec<_>>();
                (tube_layout(grid(&cfg)?)?, maps, Some(etas))
            }
        };
        let fields = read_fields(&d.join("fields.txt"), &layout, &maps)?;
        if fields.len() != rec.steps + 1 {
            return Err(Error::Config(format!(
                "level {} holds {} fields, expected {}",
                rec.index,
                fields.len(),
                rec.steps + 1
            )));
        }
        levels.push(Level { dt: rec.dt, fields, etas, summary });
    }
    let bundle = TrajectoryBundle::new(levels, manifest.config_hash, cfg.motion())?;
    Ok((cfg, bundle))
}

#[derive(Serialize)]
struct ScalingRow {
    dt: f64,
    a1: f64,
    a2: f64,
    a3: f64,
    b_max: f64,
}

#[derive(Serialize)]
struct ShiftCsvRow {
    h: f64,
    level: usize,
    dt: f64,
    modulus: f64,
}

#[derive(Serialize)]
struct CompositionRow {
    dt: f64,
    ratio: f64,
}

/// Writes `report.json` and the per-check tables into `out`.
pub fn write_report(out: &Path, rep: &DiagnosticsReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), rep)?;
    let scaling: Vec<ScalingRow> = (0..rep.dts.len())
        .map(|k| ScalingRow {
            dt: rep.dts[k],
            a1: rep.a1.get(k).copied().unwrap_or(f64::NAN),
            a2: rep.a2.get(k).copied().unwrap_or(f64::NAN),
            a3: rep.a3.get(k).copied().unwrap_or(f64::NAN),
            b_max: rep.b_max.get(k).copied().unwrap_or(f64::NAN),
        })
        .collect();
    write_csv(&out.join("a3_scaling.csv"), &scaling)?;
    let shift: Vec<ShiftCsvRow> = rep
        .shift
        .iter()
        .flat_map(|r| {
            r.modulus.iter().enumerate().map(move |(k, m)| ShiftCsvRow {
                h: r.h,
                level: k,
                dt: rep.dts[k],
                modulus: *m,
            })
        })
        .collect();
    write_csv(&out.join("shift_modulus.csv"), &shift)?;
    write_csv(&out.join("condition_b.csv"), &rep.b)?;
    if !rep.dual_shift.is_empty() || !rep.ehrling.is_empty() {
        write_csv(&out.join("dual_shift.csv"), &rep.dual_shift)?;
        write_csv(&out.join("envelopes.csv"), &rep.envelope)?;
        write_csv(&out.join("squeeze_density.csv"), &rep.squeeze)?;
        write_csv(&out.join("squeeze_lemma.csv"), &rep.squeeze_lemma)?;
        write_csv(&out.join("ehrling.csv"), &rep.ehrling)?;
    }
    if !rep.composition.is_empty() {
        let rows: Vec<CompositionRow> =
            rep.composition.iter().map(|&(dt, ratio)| CompositionRow { dt, ratio }).collect();
        write_csv(&out.join("composition.csv"), &rows)?;
    }
    Ok(())
}

/// Diagnoses a bundle directory and writes the report next to it (or into `out`).
pub fn diagnose(dir: &Path, out: Option<&Path>) -> Result<DiagnosticsReport> {
    let (cfg, bundle) = load_bundle(dir)?;
    let mut opts = cfg.diagnostics.clone();
    opts.seed = cfg.seed;
    let rep = build_report(&bundle, &opts)?;
    let target = out.unwrap_or(dir);
    write_report(target, &rep)?;
    if target == dir {
        let m: Manifest = read_json(&dir.join("manifest.json"))?;
        write_manifest(dir, &cfg, m.levels)?;
    }
    Ok(rep)
}

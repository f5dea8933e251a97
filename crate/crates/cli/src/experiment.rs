//! `roughflow run`: H-sweeps over seeded replicas.
//!
//! Seed scheme: with `key = r` (matched policy) or `key = (h_index << 32) | r`
//! (independent policy), replica `r` at Hurst index `h_index` draws its points
//! from `derive_seed(master, key, 0)` and its driver from
//! `derive_seed(master, key, 1)`. Seeds never depend on scheduling.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.toml          normalized copy of the configuration
//! runs/<cell>.csv      RunRecord telemetry per (H, replica)
//! certificates.csv     decay / c1r / Lojasiewicz summaries per run
//! aggregate.csv        hurst,iter,mean_log10_loss,runs
//! manifest.json        seeds, statuses, exclusions, file hashes
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use roughflow_core::rng::{channel_rng, derive_seed};
use roughflow_core::{
    certificate_c1r, certificate_decay, run_descent, sample_fbm, DescentConfig, Grid, RunRecord, VectorFieldFamily,
    VectorFields,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Points, SeedPolicy};
use crate::CliError;

/// Floor applied before `log10` so exact zeros stay finite.
pub const LOSS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplicaSeeds {
    pub points: u64,
    pub driver: u64,
}

pub fn replica_seeds(cfg: &ExperimentConfig, h_index: usize, replica: usize) -> ReplicaSeeds {
    let key = match cfg.seed_policy {
        SeedPolicy::Matched => replica as u64,
        SeedPolicy::Independent => ((h_index as u64) << 32) | replica as u64,
    };
    ReplicaSeeds {
        points: derive_seed(cfg.master_seed, key, 0),
        driver: derive_seed(cfg.master_seed, key, 1),
    }
}

/// Pairs for one replica: explicit ones, or fresh `N(0, I)` draws.
pub fn replica_points(cfg: &ExperimentConfig, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    match &cfg.points {
        Points::Explicit { pairs } => pairs.iter().map(|p| (p.x.clone(), p.y.clone())).collect(),
        Points::Random { pairs_per_run } => {
            let mut rng = channel_rng(seed, 0);
            let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
            (0..*pairs_per_run).map(|_| (draw(), draw())).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Completed,
    Aborted { iter: usize, reason: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificates {
    pub decay_slope: Option<f64>,
    pub decay_r_squared: Option<f64>,
    pub decay_note: Option<String>,
    pub c1r_fitted: f64,
    /// `sqrt(2) * min c_w` over logged iterates, when `c_w` was recorded.
    pub c1r_supplied: Option<f64>,
    pub c1r_supplied_holds: Option<bool>,
    pub radius_bound: f64,
    pub realized_norm: f64,
    pub radius_respected: bool,
    /// `min(|grad L| - sqrt(2) c_w sqrt(L))` over iterates with `c_w`.
    pub loj_min_margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplicaOutcome {
    pub h_index: usize,
    pub hurst: f64,
    pub replica: usize,
    pub seeds: ReplicaSeeds,
    pub status: Status,
    pub record: Option<RunRecord>,
    pub certificates: Option<Certificates>,
}

impl ReplicaOutcome {
    pub fn cell(&self) -> String {
        format!("h{}_r{:03}", self.h_index, self.replica)
    }
}

pub fn certificates(record: &RunRecord) -> Option<Certificates> {
    let cws: Vec<_> = record.entries.iter().filter_map(|e| e.c_w.map(|c| (e, c))).collect();
    let supplied = cws
        .iter()
        .map(|(_, c)| *c)
        .reduce(f64::min)
        .map(|c| std::f64::consts::SQRT_2 * c);
    let c1r = certificate_c1r(record, supplied.unwrap_or(0.0)).ok()?;
    let (decay_slope, decay_r_squared, decay_note) = match certificate_decay(record) {
        Ok(d) => (Some(d.slope), Some(d.r_squared), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    let loj_min_margin = cws
        .iter()
        .map(|(e, c)| e.grad_norm - std::f64::consts::SQRT_2 * c * e.loss.sqrt())
        .reduce(f64::min);
    Some(Certificates {
        decay_slope,
        decay_r_squared,
        decay_note,
        c1r_fitted: c1r.fitted_c,
        c1r_supplied: supplied,
        c1r_supplied_holds: supplied.map(|_| c1r.supplied_holds),
        radius_bound: c1r.radius_bound,
        realized_norm: c1r.realized_norm,
        radius_respected: c1r.radius_respected,
        loj_min_margin,
    })
}

/// One (H, replica) cell: sample points and driver, run the descent.
pub fn run_replica(cfg: &ExperimentConfig, fam: &VectorFieldFamily, h_index: usize, replica: usize) -> ReplicaOutcome {
    let hurst = cfg.hurst[h_index];
    let seeds = replica_seeds(cfg, h_index, replica);
    let mut out = ReplicaOutcome {
        h_index,
        hurst,
        replica,
        seeds,
        status: Status::Completed,
        record: None,
        certificates: None,
    };
    let grid = match Grid::new(cfg.steps) {
        Ok(g) => g,
        Err(e) => {
            out.status = Status::Failed { reason: e.to_string() };
            return out;
        }
    };
    let pairs = replica_points(cfg, fam.dim_state(), seeds.points);
    let result = sample_fbm(grid, fam.dim_control(), hurst, seeds.driver).and_then(|driver| {
        let dcfg = DescentConfig {
            step_size: cfg.step_size,
            iterations: cfg.iterations,
            stop_loss: cfg.stop_loss,
            log_every: cfg.log_every,
            pairs,
            malliavin_every: cfg.malliavin_every(),
        };
        run_descent(fam, &driver, &dcfg)
    });
    match result {
        Ok(record) => {
            if let Some(a) = &record.abort {
                out.status = Status::Aborted {
                    iter: a.iter,
                    reason: a.reason.clone(),
                };
            } else if cfg.telemetry.certificates {
                out.certificates = certificates(&record);
            }
            out.record = Some(record);
        }
        Err(e) => out.status = Status::Failed { reason: e.to_string() },
    }
    out
}

/// Logged iteration axis shared by every completed run.
pub fn iteration_axis(cfg: &ExperimentConfig) -> Vec<usize> {
    (0..=cfg.iterations)
        .filter(|k| k % cfg.log_every == 0 || *k == cfg.iterations)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub hurst: f64,
    pub runs: usize,
    pub excluded: usize,
    pub iters: Vec<usize>,
    pub mean_log10_loss: Vec<f64>,
}

/// Mean `log10 L` per logged iteration over completed replicas, in the
/// order of `cfg.hurst`. Runs that stopped early carry their last loss
/// forward.
pub fn aggregate(cfg: &ExperimentConfig, outcomes: &[ReplicaOutcome]) -> Vec<Series> {
    let axis = iteration_axis(cfg);
    cfg.hurst
        .iter()
        .enumerate()
        .map(|(hi, &hurst)| {
            let mut cell: Vec<&ReplicaOutcome> = outcomes.iter().filter(|o| o.h_index == hi).collect();
            cell.sort_by_key(|o| o.replica);
            let done: Vec<&RunRecord> = cell
                .iter()
                .filter(|o| o.status == Status::Completed)
                .filter_map(|o| o.record.as_ref())
                .collect();
            let mut sums = vec![0.0; axis.len()];
            for rec in &done {
                let mut j = 0;
                for (a, &k) in axis.iter().enumerate() {
                    while j + 1 < rec.entries.len() && rec.entries[j + 1].iter <= k {
                        j += 1;
                    }
                    sums[a] += rec.entries[j].loss.max(LOSS_FLOOR).log10();
                }
            }
            let runs = done.len();
            Series {
                hurst,
                runs,
                excluded: cell.len() - runs,
                iters: axis.clone(),
                mean_log10_loss: sums.into_iter().map(|s| s / runs as f64).collect(),
            }
        })
        .filter(|s| s.runs > 0)
        .collect()
}

pub fn aggregate_csv(series: &[Series]) -> String {
    let mut out = String::from("hurst,iter,mean_log10_loss,runs\n");
    for s in series {
        for (k, v) in s.iters.iter().zip(&s.mean_log10_loss) {
            writeln!(out, "{},{k},{v:e},{}", s.hurst, s.runs).unwrap();
        }
    }
    out
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn certificates_csv(outcomes: &[ReplicaOutcome]) -> String {
    let mut out = String::from(
        "cell,hurst,replica,decay_slope,decay_r2,c1r_fitted,c1r_supplied,c1r_supplied_holds,radius_bound,realized_norm,radius_respected,loj_min_margin\n",
    );
    for o in outcomes {
        if let Some(c) = &o.certificates {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                o.cell(),
                o.hurst,
                o.replica,
                opt(&c.decay_slope),
                opt(&c.decay_r_squared),
                c.c1r_fitted,
                opt(&c.c1r_supplied),
                opt(&c.c1r_supplied_holds),
                c.radius_bound,
                c.realized_norm,
                c.radius_respected,
                opt(&c.loj_min_margin),
            )
            .unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicaEntry {
    pub hurst: f64,
    pub replica: usize,
    pub points_seed: u64,
    pub driver_seed: u64,
    #[serde(flatten)]
    pub status: Status,
    pub file: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub name: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub seed_policy: SeedPolicy,
    pub replicas: Vec<ReplicaEntry>,
    /// Replicas left out of the aggregate (aborted or failed).
    pub excluded: usize,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Owns the run directory: every output goes through `write`, which also
/// records the content hash for the manifest.
struct Writer {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub series: Vec<Series>,
    pub outcomes: Vec<ReplicaOutcome>,
    pub excluded: usize,
}

/// Runs every (H, replica) cell with up to `workers` threads and writes the
/// run directory.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let fam = cfg.family.build().map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    let config_text = cfg.to_toml();

    let (tx, rx) = mpsc::channel::<(String, Vec<u8>)>();
    let root = out.to_path_buf();
    let writer = std::thread::spawn(move || -> std::io::Result<Writer> {
        let mut w = Writer {
            root,
            files: Vec::new(),
        };
        for (rel, bytes) in rx {
            w.write(&rel, &bytes)?;
        }
        Ok(w)
    });

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let cells: Vec<(usize, usize)> = (0..cfg.hurst.len())
        .flat_map(|h| (0..cfg.replicas).map(move |r| (h, r)))
        .collect();
    let mut outcomes: Vec<ReplicaOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map_with(tx.clone(), |tx, &(h, r)| {
                let o = run_replica(cfg, &fam, h, r);
                if let Some(rec) = &o.record {
                    let mut buf = Vec::new();
                    rec.write_csv(&mut buf).expect("writing to memory");
                    // a closed channel means the writer failed; reported below
                    let _ = tx.send((format!("runs/{}.csv", o.cell()), buf));
                }
                o
            })
            .collect()
    });
    outcomes.sort_by_key(|o| (o.h_index, o.replica));

    let series = aggregate(cfg, &outcomes);
    let excluded = outcomes.iter().filter(|o| o.status != Status::Completed).count();
    let send = |rel: &str, bytes: Vec<u8>| {
        tx.send((rel.to_string(), bytes))
            .map_err(|_| CliError::Runtime("output writer stopped".into()))
    };
    send("config.toml", config_text.clone().into_bytes())?;
    if !series.is_empty() {
        send("aggregate.csv", aggregate_csv(&series).into_bytes())?;
    }
    if cfg.telemetry.certificates {
        send("certificates.csv", certificates_csv(&outcomes).into_bytes())?;
    }
    drop(tx);
    let mut w = writer
        .join()
        .map_err(|_| CliError::Runtime("output writer panicked".into()))??;
    w.files.sort_by(|a, b| a.path.cmp(&b.path));

    let replicas = outcomes
        .iter()
        .map(|o| ReplicaEntry {
            hurst: o.hurst,
            replica: o.replica,
            points_seed: o.seeds.points,
            driver_seed: o.seeds.driver,
            status: o.status.clone(),
            file: o.record.as_ref().map(|_| format!("runs/{}.csv", o.cell())),
        })
        .collect();
    let manifest = Manifest {
        schema_version: cfg.schema_version,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        name: cfg.name.clone(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        master_seed: cfg.master_seed,
        seed_policy: cfg.seed_policy,
        replicas,
        excluded,
        files: w.files.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    std::fs::write(out.join("manifest.json"), json)?;

    if series.is_empty() {
        return Err(CliError::Runtime(format!(
            "all {} replicas aborted or failed",
            outcomes.len()
        )));
    }
    Ok(RunSummary {
        dir: out.to_path_buf(),
        series,
        outcomes,
        excluded,
    })
}

/// Per-H summary lines for the terminal.
pub fn summary_lines(summary: &RunSummary) -> Vec<String> {
    let mut by_h: BTreeMap<String, String> = BTreeMap::new();
    for s in &summary.series {
        let first = s.mean_log10_loss.first().copied().unwrap_or(f64::NAN);
        let last = s.mean_log10_loss.last().copied().unwrap_or(f64::NAN);
        by_h.insert(
            format!("{:.3}", s.hurst),
            format!(
                "H = {}: {} runs ({} excluded), mean log10 L {first:.3} -> {last:.3}",
                s.hurst, s.runs, s.excluded
            ),
        );
    }
    by_h.into_values().collect()
}

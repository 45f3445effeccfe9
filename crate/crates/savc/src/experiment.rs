//! End-to-end runs, run comparison and offline metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use savc_core::data::{FscilDataset, SessionSchedule};
use savc_core::inference::variant_features;
use savc_core::metrics::{separation_report, session_table, SeparationOptions, SeparationReport, SessionResult};
use savc_core::trainer::{FscilRunner, SessionRecord};
use savc_core::{FantasySet, Image};

use crate::checkpoint::{self, Checkpoint};
use crate::config::ExperimentConfig;
use crate::datasets::{self, DataStatus};
use crate::embeddings::{self, EmbeddingRow};
use crate::error::{Error, Result};
use crate::report::{self, Manifest, RunStatus, ScheduleSummary, TableRow};

/// What a finished (or skipped) run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub dir: PathBuf,
    pub sessions: Vec<SessionRecord>,
    pub data_hint: Option<String>,
}

pub fn describe_schedule(s: &SessionSchedule) -> String {
    format!(
        "1 base session ({} classes) + {} incremental sessions ({}-way {}-shot), {} classes total, {}x{} images",
        s.base_classes,
        s.incremental_sessions,
        s.ways,
        s.shots,
        s.total_classes(),
        s.resolution,
        s.resolution
    )
}

fn summary(s: &SessionSchedule) -> ScheduleSummary {
    ScheduleSummary {
        base_classes: s.base_classes,
        incremental_sessions: s.incremental_sessions,
        ways: s.ways,
        shots: s.shots,
        resolution: s.resolution,
    }
}

fn manifest(cfg: &ExperimentConfig, status: RunStatus, sessions: &[SessionRecord]) -> Manifest {
    Manifest {
        name: cfg.name.clone(),
        benchmark: cfg.benchmark.as_str().into(),
        status,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        schedule: summary(&cfg.schedule()),
        sessions_completed: sessions.len(),
        accuracies: sessions.iter().map(|s| s.accuracy).collect(),
        error: None,
        data_hint: None,
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(report::checkpoint_dir(dir)).map_err(|e| Error::io(dir, e))?;
    let log = dir.join("train_log.jsonl");
    if log.exists() {
        std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
    }
    Ok(())
}

/// Runs every session and writes all artifacts to `cfg.output_dir`.
///
/// A real benchmark whose files are missing produces a `dry_run` manifest
/// describing the schedule. On a training failure the manifest records the
/// error, the state reached is saved as `checkpoints/last_good.ckpt`, and the
/// error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    prepare_dir(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(dir.join("config.toml"), e))?;
    let dataset = match datasets::load(cfg)? {
        DataStatus::Ready(ds) => ds,
        DataStatus::Missing { expected, reason } => {
            let hint = format!("{reason} under {}; schedule: {}", expected.display(), describe_schedule(&cfg.schedule()));
            log::warn!("dataset unavailable, dry run: {hint}");
            let mut m = manifest(cfg, RunStatus::DryRun, &[]);
            m.data_hint = Some(hint.clone());
            report::write_json(&dir.join(report::MANIFEST), &m)?;
            return Ok(RunOutcome { status: RunStatus::DryRun, dir, sessions: Vec::new(), data_hint: Some(hint) });
        }
    };
    let setup = cfg.setup()?;
    report::write_json(&dir.join(report::MANIFEST), &manifest(cfg, RunStatus::Running, &[]))?;
    let hash = cfg.hash();
    let mut runner = FscilRunner::new(&dataset, &setup)?;
    let mut rows = Vec::new();
    while !runner.is_done() {
        let t = runner.next_session();
        match runner.run_session() {
            Ok((record, log)) => {
                report::append_train_log(&dir, t, &log.steps)?;
                report::write_session(&dir, record)?;
                rows.push(TableRow::from(record));
                report::write_session_table(&dir.join(report::SESSION_TABLE), &rows)?;
                checkpoint::save(&report::checkpoint_path(&dir, t), t, &hash, &runner.pair, &runner.queue, &runner.bank)?;
                if log.view_fallbacks > 0 {
                    log::warn!("session {t}: {} local crops fell back to centered sub-regions", log.view_fallbacks);
                }
            }
            Err(e) => {
                let err = Error::from(e);
                log::error!("session {t} failed: {err}");
                let last = t.saturating_sub(1);
                checkpoint::save(
                    &report::checkpoint_dir(&dir).join("last_good.ckpt"),
                    last,
                    &hash,
                    &runner.pair,
                    &runner.queue,
                    &runner.bank,
                )?;
                let mut m = manifest(cfg, RunStatus::Failed, &runner.sessions);
                m.error = Some(err.to_json());
                report::write_json(&dir.join(report::MANIFEST), &m)?;
                return Err(err);
            }
        }
    }
    let sessions = runner.finish().sessions;
    report::write_json(&dir.join(report::MANIFEST), &manifest(cfg, RunStatus::Complete, &sessions))?;
    Ok(RunOutcome { status: RunStatus::Complete, dir, sessions, data_hint: None })
}

/// `Δ_last` of `run` against `baseline`, both run directories. The runs must
/// share a schedule.
pub fn compare_runs(run: &Path, baseline: &Path) -> Result<SessionResult> {
    let a = report::read_session_table(&run.join(report::SESSION_TABLE))?;
    let b = report::read_session_table(&baseline.join(report::SESSION_TABLE))?;
    let classes = |rows: &[TableRow]| rows.iter().map(|r| r.num_classes).collect::<Vec<_>>();
    if classes(&a) != classes(&b) {
        return Err(Error::Input(format!(
            "session schedules differ: {} has classes per session {:?}, {} has {:?}",
            run.display(),
            classes(&a),
            baseline.display(),
            classes(&b)
        )));
    }
    let acc = |rows: &[TableRow]| rows.iter().map(|r| r.accuracy).collect::<Vec<_>>();
    Ok(session_table(&acc(&a), &acc(&b))?)
}

/// Backbone features of every test sample seen up to the checkpoint's
/// session, with the session that introduced each class.
pub fn embedding_rows(dataset: &FscilDataset, ckpt: &Checkpoint) -> Result<Vec<EmbeddingRow>> {
    let idx = dataset.test_indices_up_to(ckpt.session.min(dataset.sessions.len() - 1));
    let images: Vec<&Image> = idx.iter().map(|&i| &dataset.test[i].image).collect();
    let feats = variant_features(&ckpt.pair.network, &ckpt.pair.query, &images, &FantasySet::identity())?.remove(0);
    idx.iter()
        .zip(feats.iter_rows())
        .map(|(&i, f)| {
            let label = dataset.test[i].label;
            let session =
                dataset.schedule.session_of_class(label).ok_or_else(|| Error::Input(format!("class {label} is outside the schedule")))?;
            Ok(EmbeddingRow { sample_id: i, label, session, features: f.iter().map(|&v| v as f32).collect() })
        })
        .collect()
}

/// Loads data and checkpoint, then writes the embedding dump.
pub fn dump_embeddings(cfg: &ExperimentConfig, checkpoint_path: &Path, out: &Path) -> Result<usize> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let dataset = match datasets::load(cfg)? {
        DataStatus::Ready(ds) => ds,
        DataStatus::Missing { expected, reason } => {
            return Err(Error::Input(format!("dataset unavailable: {reason} under {}", expected.display())))
        }
    };
    let rows = embedding_rows(&dataset, &ckpt)?;
    embeddings::dump(out, &rows)?;
    Ok(rows.len())
}

/// Separation metrics of an embedding dump. Classes of session 0 are base
/// classes; prototypes are the class means of the dumped features.
pub fn metrics_from_dump(path: &Path, opts: SeparationOptions) -> Result<SeparationReport> {
    let rows = embeddings::load(path)?;
    if rows.is_empty() {
        return Err(Error::Input(format!("{} holds no samples", path.display())));
    }
    let (emb, labels) = embeddings::to_matrix(&rows)?;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, &y) in emb.iter_rows().zip(&labels) {
        let e = sums.entry(y).or_insert_with(|| (vec![0.0; r.len()], 0));
        e.0.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    let protos: BTreeMap<usize, Vec<f64>> =
        sums.into_iter().map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect())).collect();
    let mut base: Vec<usize> = rows.iter().filter(|r| r.session == 0).map(|r| r.label).collect();
    let mut novel: Vec<usize> = rows.iter().filter(|r| r.session > 0).map(|r| r.label).collect();
    base.sort_unstable();
    base.dedup();
    novel.sort_unstable();
    novel.dedup();
    Ok(separation_report(&emb, &labels, &protos, &base, &novel, opts)?)
}

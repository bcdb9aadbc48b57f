use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use smattn_core::bound::bound_report;
use smattn_core::checkpoint::Checkpoint;
use smattn_core::data::{write_events, EventFormat, EventSequence, SplitPlan};
use smattn_core::model::{Modulation, Model};
use smattn_core::numeric::{grad_check, GradCheckReport};
use smattn_core::regularizer::{IntegratorConfig, IntegratorMethod};
use smattn_core::simulator::{category_map, simulate_events, simulate_poisson};
use smattn_core::sm_layer::{intensity_matrix, uniform_grid, write_intensity_csv};
use smattn_core::train::{ablate, batch_objective, evaluate, fixed_batch, train, TrainConfig};
use smattn_core::{Error, Result};

use crate::config::RunConfig;
use crate::prepare::{prepare, Prepared};
use crate::CliError;

/// Files written by a command.
pub type Outputs = Vec<PathBuf>;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outputs> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("missing `simulate` section".into()))?;
    let events = simulate_events(&sim.config, sim.seed)?;
    let ext = match cfg.data.format {
        EventFormat::Csv => "csv",
        EventFormat::Jsonl => "jsonl",
    };
    let events_path = out.join(format!("events.{ext}"));
    let mut w = create(&events_path)?;
    write_events(&mut w, &events, cfg.data.format)?;
    w.flush().map_err(|e| io_err(&events_path, e))?;

    let groups_path = out.join("groups.csv");
    let mut g = csv::Writer::from_path(&groups_path).map_err(|e| Error::Io(e.to_string()))?;
    g.write_record(["item_id", "group_id"]).map_err(|e| Error::Io(e.to_string()))?;
    for (item, group) in category_map(&sim.config) {
        g.write_record([item, group]).map_err(|e| Error::Io(e.to_string()))?;
    }
    g.flush().map_err(|e| io_err(&groups_path, e))?;
    info!("{} events for {} users", events.len(), sim.config.users);
    Ok(vec![events_path, groups_path])
}

#[derive(Serialize)]
struct IngestSummary {
    events: usize,
    users: usize,
    items: usize,
    groups: usize,
    train_users: usize,
    validation_users: usize,
    test_users: usize,
}

pub fn ingest(cfg: &RunConfig, out: &Path) -> Result<Outputs> {
    let data = prepare(cfg)?;
    let paths = [
        out.join("vocabulary.json"),
        out.join("sequences.json"),
        out.join("split.json"),
        out.join("summary.json"),
    ];
    write_json(&paths[0], &data.vocab)?;
    write_json(&paths[1], &data.sequences)?;
    write_json(&paths[2], &data.split)?;
    let summary = IngestSummary {
        events: data.events,
        users: data.sequences.len(),
        items: data.vocab.len(),
        groups: data.vocab.group_count(),
        train_users: data.split.train.len(),
        validation_users: data.split.validation.len(),
        test_users: data.split.test.len(),
    };
    write_json(&paths[3], &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(paths.to_vec())
}

fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    crate::manifest::config_json(cfg).unwrap_or(serde_json::Value::Null)
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<Outputs> {
    let seed = cfg.seed()?;
    let data = prepare(cfg)?;
    let tcfg = train_config(cfg, seed);
    let model_cfg = tcfg.arm.model_config(&data.model_config(&cfg.model));
    let model = Model::new(model_cfg, data.groups(), seed)?;
    let outcome = train(model, &data.sequences, &data.split, &tcfg)?;

    let mut ck = Checkpoint::new(outcome.model.clone(), seed, config_echo(cfg));
    ck.vocabulary = Some(data.vocab.clone());
    let ck_path = out.join("checkpoint.json");
    ck.save(&ck_path)?;

    let trace_path = out.join("trace.json");
    write_json(&trace_path, &outcome.trace)?;
    let mut outputs = vec![ck_path, trace_path];
    if !data.split.test_holdouts.is_empty() {
        let report = evaluate(&outcome.model, &data.split.test_holdouts, &tcfg.eval)?;
        outputs.extend(write_metrics(out, &report)?);
        println!("{report}");
    }
    info!("best epoch {}", outcome.best_epoch);
    Ok(outputs)
}

fn write_metrics(out: &Path, report: &smattn_core::train::MetricsReport) -> Result<Outputs> {
    let json = out.join("metrics.json");
    let txt = out.join("metrics.txt");
    write_json(&json, report)?;
    write_text(&txt, &format!("{report}\n"))?;
    Ok(vec![json, txt])
}

fn load_checkpoint(path: &Path, data: Option<&Prepared>) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if let (Some(v), Some(d)) = (&ck.vocabulary, data) {
        if v.item_ids() != d.vocab.item_ids() {
            return Err(Error::Vocabulary(
                "the configured data does not match the checkpoint's vocabulary".into(),
            ));
        }
    }
    Ok(ck)
}

pub fn evaluate_cmd(cfg: &RunConfig, checkpoint: &Path, split: Option<&Path>, out: &Path) -> Result<Outputs> {
    let (ck, holdouts) = match split {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let plan: SplitPlan =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (load_checkpoint(checkpoint, None)?, plan.test_holdouts)
        }
        None => {
            let data = prepare(cfg)?;
            (load_checkpoint(checkpoint, Some(&data))?, data.split.test_holdouts)
        }
    };
    let report = evaluate(&ck.model, &holdouts, &cfg.train.eval)?;
    println!("{report}");
    write_metrics(out, &report)
}

pub fn ablate_cmd(cfg: &RunConfig, out: &Path) -> Result<Outputs> {
    let data = prepare(cfg)?;
    let base = train_config(cfg, cfg.seed.unwrap_or_default());
    let model_cfg = data.model_config(&cfg.model);
    let table = ablate(&data.sequences, data.groups(), &data.split, &model_cfg, &base, &cfg.ablate.seeds)?;
    let json = out.join("ablation.json");
    let txt = out.join("ablation.txt");
    write_json(&json, &table)?;
    write_text(&txt, &format!("{table}\n"))?;
    println!("{table}");
    Ok(vec![json, txt])
}

pub fn intensity_export(cfg: &RunConfig, checkpoint: &Path, user: &str, out: &Path) -> Result<Outputs> {
    let data = prepare(cfg)?;
    let ck = load_checkpoint(checkpoint, Some(&data))?;
    let seq = &data.sequences[data.user_index(user)?];
    let grid = uniform_grid(seq, cfg.intensity.extend, cfg.intensity.points);
    let heads: Vec<usize> = (0..ck.model.head_count()).collect();
    let matrix = intensity_matrix(seq, &ck.model, &grid, &heads)?;
    let path = out.join("intensity.csv");
    let mut w = create(&path)?;
    write_intensity_csv(&mut w, &grid, &heads, &matrix)?;
    w.flush().map_err(|e| io_err(&path, e))?;

    let events_path = out.join("user_events.csv");
    write_user_events(&events_path, seq, &data)?;
    Ok(vec![path, events_path])
}

fn write_user_events(path: &Path, seq: &EventSequence, data: &Prepared) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["time", "item_id", "head"]).map_err(|e| Error::Io(e.to_string()))?;
    for (&t, &i) in seq.times.iter().zip(&seq.items) {
        let head = data.vocab.group_of(i).unwrap_or(i);
        w.write_record([t.to_string(), data.vocab.id_of(i).unwrap_or("?").to_string(), head.to_string()])
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn bound_cmd(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Outputs> {
    let data = prepare(cfg)?;
    let ck = load_checkpoint(checkpoint, Some(&data))?;
    let b = &cfg.bound;
    let report = bound_report(
        &ck.model,
        &data.split.test_holdouts,
        data.split.train.len(),
        b.epsilon,
        b.delta,
        b.lipschitz,
        b.log_base,
    )?;
    let path = out.join("bound.json");
    write_json(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(vec![path])
}

#[derive(Serialize)]
pub struct GradcheckEntry {
    pub integrator: IntegratorMethod,
    pub report: GradCheckReport,
    pub passed: bool,
}

/// Toy sequences: Poisson event times (rate 1/day) with uniformly drawn
/// items, cut to `len` events.
pub fn toy_sequences(users: usize, items: usize, len: usize, seed: u64) -> Result<Vec<EventSequence>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..users)
        .map(|u| {
            let mut times = Vec::new();
            let mut attempt = 0u64;
            while times.len() < len {
                let stream = seed.wrapping_mul(1_000_003).wrapping_add(u as u64 * 1_000 + attempt);
                times = simulate_poisson(1.0, 4.0 * len as f64, stream)?;
                attempt += 1;
            }
            times.truncate(len);
            let first = times[0];
            let times: Vec<f64> = times.iter().map(|t| t - first).collect();
            let seq_items = (0..len).map(|_| rng.gen_range(0..items)).collect();
            EventSequence::new(format!("u{u}"), times, seq_items)
        })
        .collect()
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> std::result::Result<Outputs, CliError> {
    let seed = cfg.seed()?;
    let g = &cfg.gradcheck;
    let seqs = toy_sequences(g.users, g.items, g.seq_len, seed)?;
    let model_cfg = smattn_core::model::ModelConfig {
        n_items: g.items,
        modulation: Modulation::Learned,
        ..cfg.model.clone()
    };
    let groups: Vec<usize> = (0..g.items).map(|i| i % 4).collect();
    let model = Model::new(model_cfg, Some(&groups), seed)?;
    let batch = fixed_batch(&seqs, g.items, cfg.train.negatives, seed)?;
    let gamma = cfg.train.gamma;

    let mut entries = Vec::new();
    for method in [IntegratorMethod::Trapezoid, IntegratorMethod::MonteCarlo] {
        let integrator = IntegratorConfig {
            method,
            ..cfg.train.integrator
        };
        let report = grad_check(
            |params, tape| {
                let m = Model {
                    params: params.clone(),
                    ..model.clone()
                };
                batch_objective(&m, tape, &batch, gamma, &integrator)
            },
            &model.params,
            g.eps,
        )?;
        let passed = report.passes(g.tolerance);
        println!(
            "{:<12} worst relative error {:.3e} ({}) {}",
            format!("{method:?}"),
            report.worst_rel_error,
            report.worst_param,
            if passed { "PASS" } else { "FAIL" }
        );
        entries.push(GradcheckEntry {
            integrator: method,
            report,
            passed,
        });
    }
    let path = out.join("gradcheck.json");
    write_json(&path, &entries)?;
    if let Some(bad) = entries.iter().find(|e| !e.passed) {
        return Err(CliError::GradcheckFailed {
            worst: bad.report.worst_rel_error,
            tolerance: g.tolerance,
        });
    }
    Ok(vec![path])
}

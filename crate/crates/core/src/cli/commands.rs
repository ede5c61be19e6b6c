use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AllreduceCheckArgs, CliError, Command, EvaluateArgs, GenerateArgs, InspectArgs, ModelArgs,
    NetArgs, PrepareArgs, TrainArgs, TuneArgs, WorkerArgs,
};
use crate::datagen::{GenConfig, Generator};
use crate::datapipe::{open_pipeline, read_examples, Item, PipeConfig};
use crate::dist::{
    run_coordinator, run_worker, shard_dataset, train_local, Collective, DistError, EpochSummary,
    JobSpec, NetOptions, Observer, Ring, RunRecorder, StepInfo, TcpLink, Tee,
};
use crate::eval::{evaluate, write_report, EvalReport};
use crate::features::{
    class_counts, prepare_files, read_meta, shuffle, DatasetMeta, PrepareConfig, ScalerKind,
    TriggerConfig,
};
use crate::format::{
    decode_example, read_raw_events, Label, RawWriter, RecordReader, EXAMPLE_PAYLOAD_BYTES,
    HLF_LEN, LLF_COLS, LLF_ROWS,
};
use crate::metrics::{MetricsRecord, MetricsSink, RECORD_BYTES};
use crate::nn::{Adam, Checkpoint, Model, ModelKind, ModelSpec};
use crate::tune::{grid_search, GridSpace, Hyper, TuneConfig};

type Out<'a> = &'a mut dyn Write;

const DEFAULT_COORDINATOR: &str = "127.0.0.1:7070";

pub(super) fn run(cmd: Command, out: Out<'_>) -> Result<(), CliError> {
    match cmd {
        Command::Generate(a) => generate(a, out),
        Command::Prepare(a) => prepare(a, out),
        Command::Train(a) => train(a, out),
        Command::Worker(a) => worker(a, out),
        Command::Tune(a) => tune(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::AllreduceCheck(a) => allreduce_check(a, out),
    }
}

fn say(out: Out<'_>, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(line)
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io("writing output", e))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing --{flag}")))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => {
            fs::create_dir_all(d).map_err(|e| CliError::io(format!("creating {}", d.display()), e))
        }
        _ => Ok(()),
    }
}

fn emit(sink: &mut MetricsSink, record: MetricsRecord) -> Result<(), CliError> {
    sink.emit(record)
        .map_err(|e| CliError::io("writing metrics", e))
}

fn metrics(fallback: Option<&Path>) -> Result<MetricsSink, CliError> {
    MetricsSink::from_env(fallback).map_err(|e| CliError::io("opening metrics file", e))
}

fn generate(a: GenerateArgs, out: Out<'_>) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = GenConfig {
        seed: a.seed.unwrap_or(0),
        n_events: a.events.unwrap_or(10_000),
        separability: a.separability.unwrap_or(0.9),
        ..GenConfig::default()
    };
    let path = a.out.unwrap_or_else(|| PathBuf::from("events.hep"));
    create_parent(&path)?;
    let file =
        File::create(&path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
    let mut w = RawWriter::new(BufWriter::new(file))?;
    for event in Generator::new(cfg)? {
        w.write_event(&event)?;
    }
    let n = w.count();
    w.finish()?;
    let bytes = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    emit(
        &mut metrics(None)?,
        MetricsRecord::new("generate").throughput(n, bytes, started.elapsed().as_secs_f64()),
    )?;
    say(
        out,
        format_args!("generated {n} events ({bytes} bytes) -> {}", path.display()),
    )
}

fn prepare(a: PrepareArgs, out: Out<'_>) -> Result<(), CliError> {
    let started = Instant::now();
    let inputs = required(a.input, "input")?;
    let dir = a.out.unwrap_or_else(|| PathBuf::from("dataset"));
    let defaults = PrepareConfig::default();
    let cfg = PrepareConfig {
        trigger: TriggerConfig {
            pt_threshold: a.pt_threshold.unwrap_or(defaults.trigger.pt_threshold),
            iso_max: a.iso_max.unwrap_or(defaults.trigger.iso_max),
        },
        balance: a.balance.unwrap_or(defaults.balance),
        train_fraction: a.split.unwrap_or(defaults.train_fraction),
        seed: a.seed.unwrap_or(defaults.seed),
        scaler: a.scaler.unwrap_or(ScalerKind::MinMax),
        shards: a.shards.unwrap_or(defaults.shards),
    };
    let meta = prepare_files(&inputs, &dir, &cfg)?;
    let n = (meta.n_train + meta.n_test) as u64;
    emit(
        &mut metrics(None)?,
        MetricsRecord::new("prepare").throughput(
            n,
            n * RECORD_BYTES,
            started.elapsed().as_secs_f64(),
        ),
    )?;
    say(
        out,
        format_args!(
            "events={} selected={} balanced={} train={} test={} -> {}",
            meta.n_events,
            meta.n_selected,
            meta.class_counts.iter().sum::<usize>(),
            meta.n_train,
            meta.n_test,
            dir.display()
        ),
    )
}

fn model_spec(a: &ModelArgs) -> ModelSpec {
    let mut spec = ModelSpec::for_kind(a.model.unwrap_or(ModelKind::Hlf));
    if let Some(h) = &a.hidden {
        spec.hidden = h.clone();
    }
    if let Some(v) = a.activation {
        spec.activation = v;
    }
    if let Some(v) = a.gru_hidden {
        spec.gru_hidden = v;
    }
    if let Some(v) = a.head_width {
        spec.head_width = v;
    }
    if let Some(v) = a.dropout {
        spec.dropout = v;
    }
    spec
}

fn net_options(a: &NetArgs) -> NetOptions {
    let d = NetOptions::default();
    NetOptions {
        setup_timeout: a
            .setup_timeout
            .map(Duration::from_secs)
            .unwrap_or(d.setup_timeout),
        io_timeout: match a.io_timeout {
            Some(0) => None,
            Some(s) => Some(Duration::from_secs(s)),
            None => d.io_timeout,
        },
    }
}

fn split_files(dir: &Path, meta: &DatasetMeta, test: bool) -> Vec<PathBuf> {
    let names = if test {
        &meta.test_files
    } else {
        &meta.train_files
    };
    names.iter().map(|f| dir.join(f)).collect()
}

fn load_items(files: &[PathBuf]) -> Result<Vec<Item>, CliError> {
    let mut items = Vec::new();
    for f in files {
        items.extend(read_examples(f)?.into_iter().map(Arc::new));
    }
    Ok(items)
}

fn unique_run_dir(root: &Path, seed: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    let base = root.join(format!("{stamp}-seed{seed}"));
    let mut dir = base.clone();
    let mut k = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{k}", base.display()));
        k += 1;
    }
    dir
}

/// Echoes each finished epoch.
struct Progress<'a> {
    out: Out<'a>,
}

impl Observer for Progress<'_> {
    fn on_epoch(
        &mut self,
        s: &EpochSummary,
        _m: &Model<f32>,
        _a: &Adam<f32>,
    ) -> Result<(), DistError> {
        writeln!(
            self.out,
            "epoch {} loss={:.5} lr={:.3e} steps={} examples/s={:.0}",
            s.epoch + 1,
            s.mean_loss,
            s.lr,
            s.steps,
            s.examples_per_sec()
        )
        .and_then(|_| self.out.flush())
        .map_err(|e| DistError::io("writing progress", e))
    }

    fn on_step(&mut self, _info: &StepInfo) -> Result<(), DistError> {
        Ok(())
    }
}

fn spawn_workers(world: usize, addr: SocketAddr, net: &NetArgs) -> std::io::Result<Vec<Child>> {
    let exe = std::env::current_exe()?;
    (1..world)
        .map(|r| {
            let mut cmd = Process::new(&exe);
            cmd.args([
                "worker",
                "--coordinator",
                &addr.to_string(),
                "--rank",
                &r.to_string(),
            ]);
            if let Some(t) = net.setup_timeout {
                cmd.args(["--setup-timeout", &t.to_string()]);
            }
            if let Some(t) = net.io_timeout {
                cmd.args(["--io-timeout", &t.to_string()]);
            }
            cmd.stdout(Stdio::null()).spawn()
        })
        .collect()
}

fn reap(children: &mut [Child], grace: Duration) -> Vec<(usize, Option<i32>)> {
    let deadline = Instant::now() + grace;
    let mut status = vec![None; children.len()];
    while Instant::now() < deadline && status.iter().any(Option::is_none) {
        for (c, s) in children.iter_mut().zip(status.iter_mut()) {
            if s.is_none() {
                if let Ok(Some(st)) = c.try_wait() {
                    *s = Some(st.code());
                }
            }
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    children
        .iter_mut()
        .zip(status)
        .enumerate()
        .map(|(i, (c, s))| {
            let code = s.unwrap_or_else(|| {
                let _ = c.kill();
                c.wait().ok().and_then(|st| st.code())
            });
            (i + 1, code)
        })
        .collect()
}

fn train(a: TrainArgs, out: Out<'_>) -> Result<(), CliError> {
    let workers = a.workers.unwrap_or(1);
    let rank = a.rank.unwrap_or(0);
    if rank > 0 {
        return worker(
            WorkerArgs {
                coordinator: a.coordinator,
                rank: Some(rank),
                ring_bind: None,
                net: a.net,
            },
            out,
        );
    }
    let data = required(a.data.clone(), "data")?;
    let meta = read_meta(&data)?;
    let seed = a.seed.unwrap_or(0);
    let train_files = split_files(&data, &meta, false);
    let mut spec = JobSpec::new(model_spec(&a.model), workers);
    spec.epochs = a.epochs.unwrap_or(12);
    spec.per_worker_batch = a.batch.unwrap_or(128);
    spec.base_lr = a.lr.unwrap_or(1e-3);
    spec.lr_decay = a.lr_decay.unwrap_or(0.9);
    spec.seed = seed;
    spec.shards = shard_dataset(&train_files, workers)?;
    spec.shuffle_buffer = a.shuffle_buffer.unwrap_or(10_000);
    spec.interleave_width = a.interleave.unwrap_or(4);
    spec.prefetch_depth = a.prefetch.unwrap_or(4);
    spec.cache = a.cache.unwrap_or(true);
    spec.digest_every = a.digest_every.unwrap_or(50);
    spec.validate()?;

    let run_dir = a.run_dir.clone().unwrap_or_else(|| {
        unique_run_dir(
            &a.run_root.clone().unwrap_or_else(|| PathBuf::from("runs")),
            seed,
        )
    });
    let test_items = load_items(&split_files(&data, &meta, true))?;
    let mut recorder = RunRecorder::create(&run_dir)?.with_validation(test_items.clone());
    let job_json =
        serde_json::to_string_pretty(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(run_dir.join("job.json"), job_json + "\n")
        .map_err(|e| CliError::io("writing job.json", e))?;
    let mut sink = metrics(Some(&run_dir.join("metrics.ndjson")))?.with_rank(0);
    say(out, format_args!("run directory {}", run_dir.display()))?;

    let report = if workers == 1 {
        let mut progress = Progress { out: &mut *out };
        let mut obs = Tee(vec![&mut recorder, &mut sink, &mut progress]);
        train_local(&spec, &mut obs)?
    } else {
        let listen = a
            .coordinator
            .clone()
            .unwrap_or_else(|| DEFAULT_COORDINATOR.to_string());
        let spawn = a.spawn.unwrap_or(false);
        let mut children: Vec<Child> = Vec::new();
        let mut spawn_error = None;
        let result = {
            let (children, spawn_error) = (&mut children, &mut spawn_error);
            let out_ref: &mut dyn Write = &mut *out;
            let net = a.net.clone();
            let announce = Box::new(move |addr: SocketAddr| {
                let _ = writeln!(out_ref, "coordinator listening on {addr}");
                let _ = out_ref.flush();
                if spawn {
                    match spawn_workers(workers, addr, &net) {
                        Ok(c) => *children = c,
                        Err(e) => *spawn_error = Some(e),
                    }
                }
            });
            let mut obs = Tee(vec![&mut recorder, &mut sink]);
            run_coordinator(
                &spec,
                &listen,
                net_options(&a.net),
                Some(announce),
                &mut obs,
            )
        };
        if let Some(e) = spawn_error {
            return Err(CliError::io("starting worker processes", e));
        }
        let codes = reap(
            &mut children,
            Duration::from_secs(if result.is_ok() { 60 } else { 10 }),
        );
        let report = result?;
        if let Some((r, code)) = codes.iter().find(|(_, c)| *c != Some(0)) {
            return Err(CliError::Config(format!("worker {r} exited with {code:?}")));
        }
        for e in &report.epochs {
            say(
                out,
                format_args!(
                    "epoch {} loss={:.5} lr={:.3e} steps={} examples/s={:.0}",
                    e.epoch + 1,
                    e.mean_loss,
                    e.lr,
                    e.steps,
                    e.examples_per_sec()
                ),
            )?;
        }
        report
    };

    let started = Instant::now();
    let eval = evaluate(
        &report.model,
        test_items.chunks(512).map(|c| Ok(c.to_vec())),
    )?;
    write_report(&run_dir.join("eval"), &eval)?;
    emit(
        &mut sink,
        MetricsRecord::new("evaluate").throughput(
            eval.examples as u64,
            eval.examples as u64 * RECORD_BYTES,
            started.elapsed().as_secs_f64(),
        ),
    )?;
    say(
        out,
        format_args!("steps={} digest={}", report.steps(), report.digest()),
    )?;
    say(out, format_args!("{}", auc_line(&eval)))
}

fn auc_line(r: &EvalReport) -> String {
    let per: Vec<String> = r
        .classes
        .iter()
        .map(|c| format!("auc_{}={:.4}", c.class, c.auc))
        .collect();
    format!(
        "examples={} loss={:.5} accuracy={:.4} {}",
        r.examples,
        r.loss,
        r.accuracy,
        per.join(" ")
    )
}

fn worker(a: WorkerArgs, out: Out<'_>) -> Result<(), CliError> {
    let rank = required(a.rank, "rank")?;
    if rank == 0 {
        return Err(CliError::Config(
            "rank 0 is the coordinator; run `train` instead".into(),
        ));
    }
    let coordinator = a
        .coordinator
        .unwrap_or_else(|| DEFAULT_COORDINATOR.to_string());
    let bind = a.ring_bind.unwrap_or_else(|| "127.0.0.1:0".to_string());
    let report = run_worker(&coordinator, rank, &bind, net_options(&a.net))?;
    say(
        out,
        format_args!(
            "rank {rank} done steps={} digest={}",
            report.steps(),
            report.digest()
        ),
    )
}

fn tune(a: TuneArgs, out: Out<'_>) -> Result<(), CliError> {
    let data = required(a.data.clone(), "data")?;
    let meta = read_meta(&data)?;
    let seed = a.seed.unwrap_or(0);
    let mut examples = Vec::new();
    for f in split_files(&data, &meta, false) {
        examples.extend(read_examples(&f)?);
    }
    shuffle(&mut examples, seed);
    examples.truncate(a.subsample.unwrap_or(10_000));
    let space = match &a.grid {
        Some(p) => GridSpace::load(p)?,
        None => GridSpace::default_grid(),
    };
    let parallelism = a
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cfg = TuneConfig {
        folds: a.folds.unwrap_or(8),
        parallelism,
        seed,
        base: Hyper {
            model: model_spec(&a.model),
            lr: a.lr.unwrap_or(1e-3),
            lr_decay: a.lr_decay.unwrap_or(0.9),
            batch: a.batch.unwrap_or(128),
            epochs: a.epochs.unwrap_or(3),
        },
        shuffle_buffer: 10_000,
    };
    let counts = class_counts(&examples);
    say(
        out,
        format_args!(
            "tuning {} candidates x {} folds on {} examples (W={} QCD={} TTbar={}) with {} threads",
            space.size()?,
            cfg.folds,
            examples.len(),
            counts[0],
            counts[1],
            counts[2],
            parallelism
        ),
    )?;
    let result = grid_search(&space, &examples, &cfg)?;
    let dir = a.out.unwrap_or_else(|| {
        PathBuf::from(format!(
            "tune-{}-seed{seed}",
            chrono::Utc::now().format("%Y%m%dT%H%M%S")
        ))
    });
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    fs::write(dir.join("tune.csv"), result.to_csv())
        .map_err(|e| CliError::io("writing tune.csv", e))?;
    let best = result.best();
    let best_json =
        serde_json::to_string_pretty(best).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(dir.join("best.json"), best_json + "\n")
        .map_err(|e| CliError::io("writing best.json", e))?;
    let mut rec = MetricsRecord::new("tune");
    rec.examples_per_sec =
        Some((examples.len() * result.candidates.len()) as f64 / result.seconds.max(1e-9));
    emit(&mut metrics(None)?, rec)?;
    say(
        out,
        format_args!(
            "best {} mean_auc={:.4} ({:.1}s) -> {}",
            best.candidate.label(),
            best.mean_auc,
            result.seconds,
            dir.display()
        ),
    )
}

fn evaluate_cmd(a: EvaluateArgs, out: Out<'_>) -> Result<(), CliError> {
    let started = Instant::now();
    let ckpt = required(a.checkpoint, "model")?;
    let model = Checkpoint::load(&ckpt)?.model()?;
    let files = match (a.records, &a.data) {
        (Some(r), _) => r,
        (None, Some(dir)) => split_files(dir, &read_meta(dir)?, true),
        (None, None) => return Err(CliError::Config("give --data or --records".into())),
    };
    let mut pipe = open_pipeline(PipeConfig {
        files,
        interleave_width: 1,
        shuffle_buffer: 1,
        batch_size: a.batch.unwrap_or(512),
        prefetch_depth: 2,
        cache: false,
        seed: 0,
        reshuffle_each_epoch: false,
    })?;
    let report = evaluate(&model, pipe.next_epoch())?;
    let dir = a.out.unwrap_or_else(|| {
        ckpt.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .join("eval")
    });
    let written = write_report(&dir, &report)?;
    emit(
        &mut metrics(None)?,
        MetricsRecord::new("evaluate").throughput(
            report.examples as u64,
            report.examples as u64 * RECORD_BYTES,
            started.elapsed().as_secs_f64(),
        ),
    )?;
    say(out, format_args!("{}", auc_line(&report)))?;
    say(out, format_args!("confusion={:?}", report.confusion))?;
    say(
        out,
        format_args!("wrote {} files -> {}", written.len(), dir.display()),
    )
}

/// Record count, class counts and payload checks for one `.rec` file.
fn scan_records(path: &Path) -> Result<(u64, [usize; 3]), CliError> {
    let file =
        File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let mut r = RecordReader::new(BufReader::new(file));
    let mut counts = [0usize; 3];
    let mut n = 0;
    loop {
        let offset = r.offset();
        let Some(payload) = r.read_record()? else {
            break;
        };
        let e = decode_example(&payload).map_err(|e| {
            CliError::Config(format!("{} record at byte {offset}: {e}", path.display()))
        })?;
        counts[e.label.index()] += 1;
        n += 1;
    }
    Ok((n, counts))
}

fn class_line(c: &[usize; 3]) -> String {
    Label::ALL
        .iter()
        .map(|l| format!("{}={}", l.name(), c[l.index()]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn inspect(a: InspectArgs, out: Out<'_>) -> Result<(), CliError> {
    let path = required(a.path, "path")?;
    if path.is_dir() {
        let meta = read_meta(&path)?;
        say(out, format_args!("dataset {}", path.display()))?;
        say(
            out,
            format_args!(
                "events={} selected={} seed={} balance={} split={}",
                meta.n_events, meta.n_selected, meta.seed, meta.balance, meta.train_fraction
            ),
        )?;
        for (name, test, expected) in [("train", false, meta.n_train), ("test", true, meta.n_test)]
        {
            let mut total = 0;
            let mut counts = [0usize; 3];
            for f in split_files(&path, &meta, test) {
                let (n, c) = scan_records(&f)?;
                total += n;
                for k in 0..3 {
                    counts[k] += c[k];
                }
            }
            say(
                out,
                format_args!(
                    "{name}_records={total} expected={expected} {}",
                    class_line(&counts)
                ),
            )?;
            if total as usize != expected {
                return Err(CliError::Config(format!(
                    "{name} split holds {total} records but dataset.toml says {expected}"
                )));
            }
        }
        return Ok(());
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "rec" => {
            let (n, counts) = scan_records(&path)?;
            say(out, format_args!("records={n}"))?;
            say(
                out,
                format_args!(
                    "schema=label:onehot3 hlf:{HLF_LEN} llf:{LLF_ROWS}x{LLF_COLS} payload_bytes={EXAMPLE_PAYLOAD_BYTES}"
                ),
            )?;
            say(out, format_args!("{}", class_line(&counts)))
        }
        "hep" => {
            let file = File::open(&path)
                .map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
            let mut counts = [0usize; 3];
            let (mut n, mut particles) = (0u64, 0u64);
            for e in read_raw_events(BufReader::new(file))? {
                let e = e?;
                counts[e.label.index()] += 1;
                particles += e.particles.len() as u64;
                n += 1;
            }
            say(out, format_args!("events={n} particles={particles}"))?;
            say(out, format_args!("{}", class_line(&counts)))
        }
        "mdl" => {
            let ck = Checkpoint::load(&path)?;
            let model = ck.model()?;
            say(
                out,
                format_args!(
                    "model={} params={} epoch={} step={}",
                    ck.spec.kind.name(),
                    model.num_params(),
                    ck.epoch,
                    ck.step
                ),
            )?;
            for (name, range) in model.layout() {
                say(out, format_args!("  {name} {}..{}", range.start, range.end))?;
            }
            Ok(())
        }
        _ => Err(CliError::Config(format!(
            "{}: expected a dataset directory or a .rec, .hep or .mdl file",
            path.display()
        ))),
    }
}

/// The vector rank `rank` contributes in `allreduce-check`.
pub fn check_vector(seed: u64, rank: usize, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rank as u64));
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn allreduce_check(a: AllreduceCheckArgs, out: Out<'_>) -> Result<(), CliError> {
    let world = required(a.world, "world")?;
    let rank = required(a.rank, "rank")?;
    let dir = required(a.rendezvous, "rendezvous")?;
    let len = a.len.unwrap_or(1 << 20);
    let dest = required(a.out, "out")?;
    if rank >= world {
        return Err(CliError::Config(format!("rank {rank} outside 0..{world}")));
    }
    let listener =
        TcpListener::bind("127.0.0.1:0").map_err(|e| CliError::io("binding ring listener", e))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::io("reading address", e))?;
    // publish atomically so readers never see a partial address
    let tmp = dir.join(format!(".rank-{rank}.tmp"));
    fs::write(&tmp, addr.to_string()).map_err(|e| CliError::io("publishing address", e))?;
    fs::rename(&tmp, dir.join(format!("rank-{rank}.addr")))
        .map_err(|e| CliError::io("publishing address", e))?;
    let next = (rank + 1) % world;
    let deadline = Instant::now() + Duration::from_secs(30);
    let next_addr = loop {
        match fs::read_to_string(dir.join(format!("rank-{next}.addr"))) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(CliError::io(format!("waiting for rank {next}"), e)),
        }
    };
    let mut v = check_vector(a.seed.unwrap_or(0), rank, len);
    if world > 1 {
        let link = TcpLink::establish(
            rank,
            world,
            &listener,
            &next_addr,
            Duration::from_secs(30),
            None,
        )?;
        Ring::new(rank, world, link).allreduce_sum(&mut v)?;
    }
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(&dest, bytes).map_err(|e| CliError::io(format!("writing {}", dest.display()), e))?;
    say(out, format_args!("rank {rank} reduced {len} values"))
}

//! Acceptance suite. Runs every criterion in turn, prints one PASS/FAIL line
//! for each and exits nonzero if any failed.
//!
//! `cargo test --test acceptance -- 4 7` runs criteria 4 and 7 only.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc::channel;
use std::thread;
use std::time::{Duration, Instant};

use common::{arcs, rel_l2, toy_examples, widen, write_records};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoclass::cli::check_vector;
use topoclass::datagen::{GenConfig, Generator, Multiplicity};
use topoclass::datapipe::Pipeline;
use topoclass::dist::{
    mem_ring, run_coordinator, run_rank, run_worker, scaled_lr, shard_dataset, train_threads,
    DistError, JobSpec, NetOptions, Observer, Ring,
};
use topoclass::eval::{auc, roc_curve, trapezoid};
use topoclass::features::{
    build_llf, prepare_examples, trigger_select, PrepareConfig, ScalerKind, TriggerConfig,
};
use topoclass::format::{
    decode_example, encode_example, mask_crc, Example, Label, Llf, RawEvent, RecordReader,
    RecordWriter, COL_IS_PADDING, COL_LEPTON_FLAG, LLF_ROWS,
};
use topoclass::nn::{build_model, Activation, Batch, ModelKind, ModelSpec, SeqBatch, Tensor};
use topoclass::tune::{grid_search, GridSpace, Hyper, TuneConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

const CRITERIA: [(&str, fn() -> Outcome); 11] = [
    ("gradient correctness", c01_gradients),
    ("sequential equivalence", c02_sequential_equivalence),
    ("worker consistency", c03_worker_consistency),
    ("all-reduce correctness", c04_allreduce),
    ("record format", c05_record_format),
    ("feature engineering", c06_features),
    ("auc oracle", c07_auc),
    ("end-to-end synthetic", c08_end_to_end),
    ("grid search", c09_grid_search),
    ("pipeline determinism", c10_determinism),
    ("fail-stop", c11_fail_stop),
];

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, f)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {id:>2} {name}: FAIL ({detail}) [{secs:.1}s]");
                failed.push(id);
            }
        }
    }
    println!(
        "acceptance: {} of {ran} criteria passed",
        ran - failed.len()
    );
    if !failed.is_empty() {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_topoclass"));
    c.env_remove("TOPOCLASS_METRICS");
    c
}

fn run(cmd: &mut Command) -> Result<Output, String> {
    let out = cmd.output().map_err(|e| format!("spawning {cmd:?}: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{cmd:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out)
}

fn generate(out: &Path, events: usize, seed: u64) -> Result<(), String> {
    run(bin().arg("generate").arg("--out").arg(out).args([
        "--events",
        &events.to_string(),
        "--seed",
        &seed.to_string(),
        "--separability",
        "0.9",
    ]))?;
    Ok(())
}

fn prepare(input: &Path, out: &Path, seed: u64) -> Result<(), String> {
    run(bin()
        .arg("prepare")
        .arg("--input")
        .arg(input)
        .arg("--out")
        .arg(out)
        .args(["--seed", &seed.to_string()]))?;
    Ok(())
}

/// `loss.csv` as (train, val) per epoch.
fn read_losses(run_dir: &Path) -> Result<Vec<(f64, f64)>, String> {
    let text = ok(
        fs::read_to_string(run_dir.join("loss.csv")),
        "reading loss.csv",
    )?;
    let mut lines = text.lines();
    ensure!(
        lines.next() == Some("epoch,train_loss,val_loss,lr,steps,examples"),
        "unexpected loss.csv header"
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let p = |s: &str| s.parse::<f64>().map_err(|e| format!("{l:?}: {e}"));
            Ok((p(f[1])?, p(f[2])?))
        })
        .collect()
}

fn read_aucs(run_dir: &Path) -> Result<BTreeMap<String, f64>, String> {
    let text = ok(
        fs::read_to_string(run_dir.join("eval/report.json")),
        "reading report.json",
    )?;
    let v: serde_json::Value = ok(serde_json::from_str(&text), "parsing report.json")?;
    let map = v["auc"].as_object().ok_or("report.json has no auc map")?;
    Ok(map
        .iter()
        .map(|(k, v)| (k.clone(), v.as_f64().unwrap_or(f64::NAN)))
        .collect())
}

fn wait_deadline(child: &mut Child, deadline: Instant) -> Option<std::process::ExitStatus> {
    loop {
        match child.try_wait() {
            Ok(Some(s)) => return Some(s),
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(20)),
            _ => return None,
        }
    }
}

fn drain<R: Read + Send + 'static>(r: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut s = String::new();
        let _ = BufReader::new(r).read_to_string(&mut s);
        s
    })
}

// ------------------------------------------------------- 1. gradients

const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_case(seed: u64) -> (ModelSpec, Batch<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = [ModelKind::Hlf, ModelKind::Sequence, ModelKind::Inclusive][seed as usize % 3];
    let masked = kind != ModelKind::Hlf && rng.random_bool(0.5);
    let llf_dim = rng.random_range(2..5);
    let layers = rng.random_range(1..4);
    let spec = ModelSpec {
        kind,
        hlf_dim: rng.random_range(1..7),
        llf_dim,
        steps: rng.random_range(1..7),
        hidden: (0..layers).map(|_| rng.random_range(1..8)).collect(),
        activation: Activation::Relu,
        gru_hidden: rng.random_range(1..6),
        head_width: rng.random_range(1..7),
        dropout: 0.0,
        mask_column: masked.then_some(llf_dim - 1),
    };
    let n = rng.random_range(1..7);
    let seq = kind.uses_sequence().then(|| {
        let seqs = (0..n)
            .map(|_| {
                let len = if masked {
                    rng.random_range(1..=spec.steps)
                } else {
                    spec.steps
                };
                let mut s = uniform(&mut rng, len * llf_dim);
                if masked {
                    for row in s.chunks_mut(llf_dim) {
                        row[llf_dim - 1] = 0.0;
                    }
                }
                s
            })
            .collect();
        let mut b = SeqBatch::dense(spec.steps, llf_dim, seqs);
        if masked {
            b.pad = vec![0.0; llf_dim];
            b.pad[llf_dim - 1] = 1.0;
        }
        b
    });
    let batch = Batch {
        hlf: Tensor::from_vec(&[n, spec.hlf_dim], uniform(&mut rng, n * spec.hlf_dim)),
        seq,
        labels: (0..n).map(|_| rng.random_range(0..3)).collect(),
    };
    let model = build_model::<f64>(&spec, seed).unwrap();
    // zero initial biases would park dead ReLU units exactly on the kink
    let params = uniform(&mut rng, model.num_params());
    (spec, batch, params)
}

fn c01_gradients() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let seeds = 30u64;
    for seed in 0..seeds {
        let (spec, batch, params) = random_case(seed);
        let model = ok(
            topoclass::nn::Model::<f64>::from_params(&spec, params),
            "building model",
        )?;
        let (_, grad) = ok(model.train_step(&batch, seed), "train step")?;
        let mut p = model.params().to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = ok(model.loss_at(&p, &batch, seed), "loss")?;
            p[i] = orig - FD_STEP;
            let down = ok(model.loss_at(&p, &batch, seed), "loss")?;
            p[i] = orig;
            let e = rel_err(grad[i], (up - down) / (2.0 * FD_STEP));
            ensure!(
                e < 1e-4,
                "seed {seed} ({:?}) parameter {i}: relative error {e:.3e}",
                spec.kind
            );
            worst = worst.max(e);
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "{seeds} seeds, {checked} parameters, max relative error {worst:.2e}"
    ))
}

// ------------------------------------------- 2. sequential equivalence

fn c02_sequential_equivalence() -> Outcome {
    let started = Instant::now();
    let examples = toy_examples(1280, 21);
    let model = ModelSpec::hlf();
    let base_lr = 1e-3;
    let mut one = JobSpec::new(model.clone(), 1);
    one.per_worker_batch = 128;
    one.base_lr = scaled_lr(base_lr, 4);
    one.shuffle_buffer = 1;
    one.digest_every = 0;
    let mut four = JobSpec::new(model, 4);
    four.per_worker_batch = 32;
    four.base_lr = base_lr;
    four.shuffle_buffer = 1;
    four.digest_every = 0;
    // global batch k holds examples 128k..128k+127; rank r takes its k-th
    // batch of 32 from that window
    let shares: Vec<Vec<Example>> = (0..4)
        .map(|r| {
            examples
                .iter()
                .enumerate()
                .filter(|(i, _)| (i % 128) / 32 == r)
                .map(|(_, e)| e.clone())
                .collect()
        })
        .collect();
    let a = ok(train_threads(&one, vec![arcs(examples.clone())]), "1 x 128")?;
    let b = ok(
        train_threads(&four, shares.into_iter().map(arcs).collect()),
        "4 x 32",
    )?;
    ensure!(
        a[0].steps() == 10 && b[0].steps() == 10,
        "steps {} and {}",
        a[0].steps(),
        b[0].steps()
    );
    let e = rel_l2(b[0].model.params(), &widen(a[0].model.params()));
    ensure!(e < 1e-5, "relative error {e:.3e}");
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!("10 steps, relative error {e:.2e}"))
}

// ---------------------------------------------- 3. worker consistency

#[derive(Default)]
struct DigestLog(Vec<(u64, [u8; 32])>);

impl Observer for DigestLog {
    fn on_digest(&mut self, step: u64, digest: &[u8; 32]) -> Result<(), DistError> {
        self.0.push((step, *digest));
        Ok(())
    }
}

fn c03_worker_consistency() -> Outcome {
    let world = 4;
    let examples = toy_examples(8000, 31);
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let files = write_records(dir.path(), &examples, world);
    let mut spec = JobSpec::new(ModelSpec::hlf(), world);
    spec.epochs = 2;
    spec.per_worker_batch = 32;
    spec.digest_every = 50;
    spec.interleave_width = 1;
    spec.seed = 5;
    spec.shards = ok(shard_dataset(&files, world), "sharding")?;

    // every rank in this process, each logging its own digests
    let handles: Vec<_> = mem_ring(world)
        .into_iter()
        .enumerate()
        .map(|(rank, link)| {
            let spec = spec.clone();
            let share: Vec<Example> = examples.iter().skip(rank).step_by(world).cloned().collect();
            thread::spawn(move || -> Result<(Vec<(u64, [u8; 32])>, u64), String> {
                let mut pipe = ok(
                    Pipeline::from_examples(arcs(share), spec.pipe_config(rank)),
                    "pipeline",
                )?;
                let mut log = DigestLog::default();
                let report = ok(
                    run_rank(
                        &spec,
                        &mut pipe,
                        &mut Ring::new(rank, world, link),
                        &mut log,
                    ),
                    "rank",
                )?;
                Ok((log.0, report.steps()))
            })
        })
        .collect();
    let logs: Vec<_> = handles
        .into_iter()
        .map(|h| h.join().map_err(|_| "rank thread panicked".to_string())?)
        .collect::<Result<_, _>>()?;
    let (reference, steps) = &logs[0];
    ensure!(
        reference.len() >= 2,
        "only {} digests in {steps} steps",
        reference.len()
    );
    for (rank, (log, _)) in logs.iter().enumerate() {
        ensure!(log == reference, "rank {rank} digests differ from rank 0");
    }

    // the same job over TCP; the coordinator compares every worker digest
    // with its own and fails the job on any difference
    let (tx, rx) = channel();
    let tcp_spec = spec.clone();
    let coord = thread::spawn(move || {
        let mut log = DigestLog::default();
        let net = NetOptions::default();
        run_coordinator(
            &tcp_spec,
            "127.0.0.1:0",
            net,
            Some(Box::new(move |a| tx.send(a).unwrap())),
            &mut log,
        )
        .map(|_| log.0)
    });
    let addr = ok(rx.recv(), "coordinator address")?.to_string();
    let workers: Vec<_> = (1..world)
        .map(|r| {
            let addr = addr.clone();
            thread::spawn(move || run_worker(&addr, r, "127.0.0.1:0", NetOptions::default()))
        })
        .collect();
    let tcp_log = ok(coord.join().map_err(|_| "coordinator panicked"), "join")?;
    let tcp_log = ok(tcp_log, "tcp job")?;
    for w in workers {
        ok(w.join().map_err(|_| "worker panicked"), "join")?
            .map_err(|e| format!("tcp worker: {e}"))?;
    }
    ensure!(
        &tcp_log == reference,
        "tcp digests differ from the in-process run"
    );
    Ok(format!(
        "{} digests over {steps} steps identical on all {world} ranks, in-process and over tcp",
        reference.len()
    ))
}

// ------------------------------------------------------ 4. all-reduce

fn allreduce_processes(world: usize, len: usize, seed: u64) -> Result<Vec<Vec<f32>>, String> {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let mut children = Vec::new();
    for r in 0..world {
        let child = bin()
            .arg("allreduce-check")
            .args(["--world", &world.to_string(), "--rank", &r.to_string()])
            .arg("--rendezvous")
            .arg(dir.path())
            .args(["--len", &len.to_string(), "--seed", &seed.to_string()])
            .arg("--out")
            .arg(dir.path().join(format!("out-{r}.bin")))
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn();
        children.push(ok(child, "spawning allreduce-check")?);
    }
    let deadline = Instant::now() + Duration::from_secs(120);
    let mut failures = Vec::new();
    for (r, c) in children.iter_mut().enumerate() {
        match wait_deadline(c, deadline) {
            Some(s) if s.success() => {}
            status => {
                let _ = c.kill();
                let mut err = String::new();
                if let Some(mut e) = c.stderr.take() {
                    let _ = e.read_to_string(&mut err);
                }
                failures.push(format!("rank {r}: {status:?} {}", err.trim()));
            }
        }
    }
    ensure!(
        failures.is_empty(),
        "world {world}: {}",
        failures.join("; ")
    );
    (0..world)
        .map(|r| {
            let bytes = ok(
                fs::read(dir.path().join(format!("out-{r}.bin"))),
                "reading output",
            )?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        })
        .collect()
}

fn c04_allreduce() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for world in 2..=8usize {
        for len in [1_000_000, 12_345, world - 1] {
            let seed = (world * 1000 + len) as u64;
            let outs = allreduce_processes(world, len, seed)?;
            let mut direct = vec![0.0f64; len];
            for r in 0..world {
                for (d, v) in direct.iter_mut().zip(check_vector(seed, r, len)) {
                    *d += v as f64;
                }
            }
            for (r, o) in outs.iter().enumerate() {
                ensure!(
                    o.len() == len,
                    "world {world} rank {r}: {} values, expected {len}",
                    o.len()
                );
                ensure!(
                    o.iter()
                        .zip(&outs[0])
                        .all(|(a, b)| a.to_bits() == b.to_bits()),
                    "world {world} len {len}: rank {r} differs from rank 0"
                );
            }
            if len > 0 {
                let e = rel_l2(&outs[0], &direct);
                ensure!(e < 1e-6, "world {world} len {len}: relative error {e:.3e}");
                worst = worst.max(e);
            }
            runs += 1;
        }
    }
    let len = 1_000_000;
    let out = allreduce_processes(1, len, 99)?;
    let input = check_vector(99, 0, len);
    ensure!(
        out[0].len() == len
            && out[0]
                .iter()
                .zip(&input)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
        "world 1 is not the identity"
    );
    Ok(format!(
        "{runs} multi-process runs over 2..=8 ranks, max relative error {worst:.2e}; world 1 exact"
    ))
}

// --------------------------------------------------- 5. record format

/// Bitwise CRC-32C, written from the polynomial.
fn crc32c_bitwise(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 {
                (crc >> 1) ^ 0x82f6_3b78
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

fn mask_independent(crc: u32) -> u32 {
    ((crc >> 15) | (crc << 17)).wrapping_add(0xa282_ead8)
}

/// Walks frames without touching the library's reader.
fn independent_read(mut bytes: &[u8]) -> Result<Vec<Vec<u8>>, String> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        ensure!(bytes.len() >= 12, "truncated header");
        let len_bytes = &bytes[..8];
        let len_crc = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        ensure!(
            mask_independent(crc32c_bitwise(len_bytes)) == len_crc,
            "length crc mismatch"
        );
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        ensure!(bytes.len() >= 16 + len, "truncated payload");
        let payload = &bytes[12..12 + len];
        let crc = u32::from_le_bytes(bytes[12 + len..16 + len].try_into().unwrap());
        ensure!(
            mask_independent(crc32c_bitwise(payload)) == crc,
            "payload crc mismatch"
        );
        out.push(payload.to_vec());
        bytes = &bytes[16 + len..];
    }
    Ok(out)
}

fn independent_write(payloads: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in payloads {
        let len = (p.len() as u64).to_le_bytes();
        out.extend_from_slice(&len);
        out.extend_from_slice(&mask_independent(crc32c_bitwise(&len)).to_le_bytes());
        out.extend_from_slice(p);
        out.extend_from_slice(&mask_independent(crc32c_bitwise(p)).to_le_bytes());
    }
    out
}

fn finite_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

fn random_example(rng: &mut ChaCha8Rng) -> Example {
    let rows = rng.random_range(0..=LLF_ROWS);
    Example {
        label: Label::ALL[rng.random_range(0..3)],
        hlf: std::array::from_fn(|_| finite_f32(rng)),
        llf: Llf::from_rows(
            (0..rows)
                .map(|_| std::array::from_fn(|_| finite_f32(rng)))
                .collect(),
        ),
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn c05_record_format() -> Outcome {
    ensure!(
        crc32c_bitwise(b"123456789") == 0xe306_9283,
        "reference crc32c check value"
    );
    ensure!(mask_crc(0) == 0xa282_ead8, "mask(0) = {:#x}", mask_crc(0));

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut frame = Vec::new();
    for i in 0..10_000 {
        let e = random_example(&mut rng);
        let payload = encode_example(&e);
        frame.clear();
        let mut w = RecordWriter::new(&mut frame);
        ok(w.write_record(&payload), "writing")?;
        ok(w.finish(), "finishing")?;
        let mut r = RecordReader::new(Cursor::new(&frame));
        let back = ok(r.read_record(), "reading")?.ok_or("missing record")?;
        ensure!(ok(r.read_record(), "reading")?.is_none(), "trailing record");
        let d = ok(decode_example(&back), "decoding")?;
        ensure!(
            d.label == e.label
                && bits(&d.hlf) == bits(&e.hlf)
                && bits(&d.llf.to_dense()) == bits(&e.llf.to_dense()),
            "example {i} changed in the round trip"
        );
        ensure!(
            encode_example(&d) == payload,
            "example {i} re-encodes differently"
        );
    }

    let payload: Vec<u8> = (0..64).map(|_| rng.random()).collect();
    let mut clean = Vec::new();
    let mut w = RecordWriter::new(&mut clean);
    ok(w.write_record(&payload), "writing")?;
    ok(w.finish(), "finishing")?;
    ensure!(
        clean.len() == 80,
        "64-byte payload framed into {} bytes",
        clean.len()
    );
    let mut flips = 0;
    for bit in 0..clean.len() * 8 {
        let mut bad = clean.clone();
        bad[bit / 8] ^= 1 << (bit % 8);
        let got = RecordReader::new(Cursor::new(&bad)).read_record();
        ensure!(got.is_err(), "flip of bit {bit} went undetected");
        flips += 1;
    }

    // library writer against the independent reader, and back
    let mut payloads: Vec<Vec<u8>> = (0..300usize)
        .map(|n| (0..n).map(|_| rng.random()).collect())
        .collect();
    for _ in 0..20 {
        payloads.push(encode_example(&random_example(&mut rng)));
    }
    let mut written = Vec::new();
    let mut w = RecordWriter::new(&mut written);
    for p in &payloads {
        ok(w.write_record(p), "writing")?;
    }
    ok(w.finish(), "finishing")?;
    ensure!(
        independent_read(&written)? == payloads,
        "independent reader disagrees"
    );
    let theirs = independent_write(&payloads);
    ensure!(
        theirs == written,
        "independent writer produced different bytes"
    );
    let mut r = RecordReader::new(Cursor::new(&theirs));
    let mut back = Vec::new();
    while let Some(p) = ok(r.read_record(), "reading independent frames")? {
        back.push(p);
    }
    ensure!(
        back == payloads,
        "library reader disagrees on independent frames"
    );
    Ok(format!(
        "10000 round trips, {flips}/{flips} bit flips detected, mask(0) = 0xa282ead8, {} frames cross-checked",
        payloads.len()
    ))
}

// ---------------------------------------------------- 6. features

fn c06_features() -> Outcome {
    let mut events: Vec<RawEvent> = Vec::new();
    let light = GenConfig {
        seed: 61,
        n_events: 5000,
        ..GenConfig::default()
    };
    // multiplicities well past every quota
    let heavy = GenConfig {
        seed: 62,
        n_events: 5000,
        mean_particles: Multiplicity {
            charged: 520.0,
            photon: 180.0,
            neutral: 240.0,
        },
        ..GenConfig::default()
    };
    for cfg in [light, heavy] {
        events.extend(ok(Generator::new(cfg), "generator")?);
    }
    let trigger = TriggerConfig::default();
    let (mut selected, mut saturated) = (0, 0);
    for (n, ev) in events.iter().enumerate() {
        let Some(lep) = trigger_select(ev, &trigger) else {
            continue;
        };
        selected += 1;
        let llf = build_llf(ev, lep);
        let dense = llf.to_dense();
        ensure!(
            llf.shape() == (801, 19) && dense.len() == 801 * 19,
            "event {n}: shape {:?}",
            llf.shape()
        );
        let row0 = llf.row(0);
        let lp = &ev.particles[lep];
        ensure!(
            row0[COL_LEPTON_FLAG] == 1.0
                && row0[COL_IS_PADDING] == 0.0
                && row0[0] == lp.px
                && row0[1] == lp.py,
            "event {n}: row 0 is not the lepton"
        );
        // available particles per group, by one-hot category index
        let group = |cat: usize| match cat {
            0 | 3 | 4 => 0,
            2 => 1,
            1 => 2,
            _ => unreachable!(),
        };
        let mut avail = [0usize; 3];
        for (i, p) in ev.particles.iter().enumerate() {
            if i != lep {
                avail[group(p.category as usize)] += 1;
            }
        }
        let mut kept = [0usize; 3];
        let mut last_dr = f32::INFINITY;
        let mut padding_seen = false;
        for i in 1..LLF_ROWS {
            let r = llf.row(i);
            if r[COL_IS_PADDING] == 1.0 {
                padding_seen = true;
                continue;
            }
            ensure!(!padding_seen, "event {n}: real row {i} after padding");
            let cat = (12..17)
                .position(|c| r[c] == 1.0)
                .ok_or(format!("event {n} row {i}: no category"))?;
            kept[group(cat)] += 1;
            ensure!(
                r[11] <= last_dr,
                "event {n}: dR rises at row {i} ({} after {last_dr})",
                r[11]
            );
            last_dr = r[11];
        }
        for (g, quota) in [450, 150, 200].into_iter().enumerate() {
            ensure!(
                kept[g] <= quota,
                "event {n}: group {g} keeps {} > {quota}",
                kept[g]
            );
            ensure!(
                kept[g] == avail[g].min(quota),
                "event {n}: group {g} keeps {} of {}",
                kept[g],
                avail[g]
            );
        }
        if avail[0] > 450 || avail[1] > 150 || avail[2] > 200 {
            saturated += 1;
        }
    }
    ensure!(saturated > 0, "no event exceeded a quota");

    let cfg = PrepareConfig {
        scaler: ScalerKind::MinMax,
        seed: 63,
        ..PrepareConfig::default()
    };
    let p = ok(prepare_examples(&events, &cfg), "prepare")?;
    let min = *p.selected_counts.iter().min().unwrap();
    ensure!(
        p.class_counts == [min; 3],
        "balanced counts {:?} from {:?}",
        p.class_counts,
        p.selected_counts
    );
    let n = p.train.len() + p.test.len();
    ensure!(n == 3 * min, "{n} examples after balancing");
    ensure!(p.train.len() == n * 4 / 5, "train {} of {n}", p.train.len());
    let mut counted = [0usize; 3];
    for e in p.train.iter().chain(&p.test) {
        counted[e.label.index()] += 1;
    }
    ensure!(counted == [min; 3], "emitted class counts {counted:?}");
    for (k, e) in p.train.iter().enumerate() {
        ensure!(
            e.hlf.iter().all(|v| (0.0..=1.0).contains(v)),
            "train example {k}: hlf outside [0, 1]"
        );
        for row in e.llf.stored_rows() {
            if !Llf::is_padding_row(row) {
                ensure!(
                    row.iter().all(|v| (0.0..=1.0).contains(v)),
                    "train example {k}: llf outside [0, 1]"
                );
            }
        }
    }
    Ok(format!(
        "{} events, {selected} selected, {saturated} past a quota; balanced {min} per class; split {}/{}",
        events.len(),
        p.train.len(),
        p.test.len()
    ))
}

// -------------------------------------------------------- 7. auc

fn c07_auc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(2..=1000);
        let levels = rng.random_range(2..60u32);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let (mut twice, mut p, mut q) = (0u128, 0u128, 0u128);
        for i in 0..n {
            if labels[i] {
                p += 1;
            } else {
                q += 1;
            }
            if !labels[i] {
                continue;
            }
            for j in 0..n {
                if !labels[j] {
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        let brute = twice as f64 / (2 * p * q) as f64;
        let got = ok(auc(&scores, &labels), "auc")?;
        ensure!(
            got == brute,
            "trial {trial}: rank AUC {got} vs pair count {brute}"
        );
        let area = trapezoid(&ok(roc_curve(&scores, &labels), "roc")?);
        ensure!(
            (area - got).abs() <= 1e-12,
            "trial {trial}: trapezoid {area} vs {got}"
        );
        worst = worst.max((area - got).abs());
    }
    Ok(format!(
        "100 tied instances exact; max trapezoid gap {worst:.1e}"
    ))
}

// ------------------------------------------------ 8. end to end

fn c08_end_to_end() -> Outcome {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let events = 50_000;
    generate(&dir.path().join("ev.hep"), events, 8)?;
    prepare(&dir.path().join("ev.hep"), &dir.path().join("ds"), 8)?;
    let mut notes = Vec::new();
    for (model, min_auc, budget) in [
        ("hlf", 0.95, 300.0),
        ("seq", 0.90, 3600.0),
        ("inclusive", 0.90, 3600.0),
    ] {
        let run_dir = dir.path().join(format!("run-{model}"));
        let started = Instant::now();
        run(bin()
            .arg("train")
            .arg("--data")
            .arg(dir.path().join("ds"))
            .args(["--model", model, "--epochs", "12", "--seed", "8"])
            .arg("--run-dir")
            .arg(&run_dir))?;
        let secs = started.elapsed().as_secs_f64();
        ensure!(
            secs < budget,
            "{model}: training took {secs:.0}s, budget {budget:.0}s"
        );
        let aucs = read_aucs(&run_dir)?;
        ensure!(aucs.len() == 3, "{model}: {} classes in report", aucs.len());
        for (class, a) in &aucs {
            ensure!(*a >= min_auc, "{model}: auc_{class} = {a:.4} < {min_auc}");
        }
        let losses = read_losses(&run_dir)?;
        ensure!(
            losses.len() == 12,
            "{model}: {} epochs in loss.csv",
            losses.len()
        );
        let (first, last) = (losses[0], losses[losses.len() - 1]);
        let (rt, rv) = (last.0 / first.0, last.1 / first.1);
        if model == "hlf" {
            ensure!(
                rt < 0.5 && rv < 0.5,
                "hlf: final/initial loss train {rt:.3} val {rv:.3}"
            );
        }
        let lowest = aucs.values().cloned().fold(f64::INFINITY, f64::min);
        notes.push(format!(
            "{model} min auc {lowest:.4} loss ratio {rt:.2}/{rv:.2} in {secs:.0}s"
        ));
    }
    Ok(format!("{events} events; {}", notes.join("; ")))
}

// ------------------------------------------------ 9. grid search

fn c09_grid_search() -> Outcome {
    let events: Vec<RawEvent> = ok(
        topoclass::datagen::generate(&GenConfig {
            seed: 91,
            n_events: 24_000,
            ..GenConfig::default()
        }),
        "generate",
    )?;
    let data = ok(
        prepare_examples(&events, &PrepareConfig::default()),
        "prepare",
    )?
    .train;
    let space = ok(
        GridSpace::from_toml("[axes]\nlayers = [1, 2]\nunits = [10, 20]\nlr = [0.001, 0.01]\n"),
        "grid",
    )?;
    let base = Hyper {
        model: ModelSpec::hlf(),
        lr: 1e-3,
        lr_decay: 0.9,
        batch: 32,
        epochs: 6,
    };
    let mut cfg = TuneConfig::new(base);
    cfg.folds = 3;
    cfg.seed = 92;
    // alternate the two settings and keep each one's best time, so neither
    // pays for warm-up alone
    let mut best = [f64::INFINITY; 2];
    let mut results = Vec::new();
    for round in 0..2 {
        for (k, parallelism) in [1, 4].into_iter().enumerate() {
            cfg.parallelism = parallelism;
            let started = Instant::now();
            let r = ok(grid_search(&space, &data, &cfg), "grid search")?;
            best[k] = best[k].min(started.elapsed().as_secs_f64());
            if round == 0 {
                results.push(r);
            }
        }
    }
    let (a, b, t1, t4) = (&results[0], &results[1], best[0], best[1]);
    ensure!(a.candidates.len() == 8, "{} candidates", a.candidates.len());
    for (x, y) in a.candidates.iter().zip(&b.candidates) {
        ensure!(
            x.candidate == y.candidate && x.rank == y.rank,
            "candidate order or rank differs"
        );
        ensure!(
            x.fold_auc
                .iter()
                .map(|v| v.to_bits())
                .eq(y.fold_auc.iter().map(|v| v.to_bits())),
            "candidate {}: fold AUCs differ",
            x.candidate.index
        );
    }
    // with a single core the two timings differ only by noise, so a
    // "lower" reading would not show a speedup
    let cores = thread::available_parallelism().map_or(1, |n| n.get());
    ensure!(
        cores >= 2,
        "results identical; no speedup is possible on {cores} available core ({t1:.2}s at 1, {t4:.2}s at 4)"
    );
    ensure!(
        t4 < t1,
        "results identical, but parallelism 4 took {t4:.2}s vs {t1:.2}s at parallelism 1"
    );
    Ok(format!(
        "identical results over {} examples; {t1:.2}s at 1, {t4:.2}s at 4",
        data.len()
    ))
}

// ------------------------------------------------- 10. determinism

fn rec_files(ds: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for split in ["train", "test"] {
        let mut names: Vec<PathBuf> = ok(fs::read_dir(ds.join(split)), "listing")?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "rec"))
            .collect();
        names.sort();
        for p in names {
            let rel = format!("{split}/{}", p.file_name().unwrap().to_string_lossy());
            out.push((rel, ok(fs::read(&p), "reading record file")?));
        }
    }
    Ok(out)
}

fn c10_determinism() -> Outcome {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let mut runs = Vec::new();
    for k in 0..2 {
        let root = dir.path().join(format!("run{k}"));
        ok(fs::create_dir_all(&root), "mkdir")?;
        generate(&root.join("ev.hep"), 5000, 10)?;
        prepare(&root.join("ev.hep"), &root.join("ds"), 10)?;
        run(bin()
            .arg("train")
            .arg("--data")
            .arg(root.join("ds"))
            .args(["--workers", "1", "--seed", "10"])
            .arg("--run-dir")
            .arg(root.join("train")))?;
        runs.push((
            rec_files(&root.join("ds"))?,
            ok(fs::read(root.join("train/loss.csv")), "reading loss.csv")?,
        ));
    }
    let ((rec_a, loss_a), (rec_b, loss_b)) = (&runs[0], &runs[1]);
    ensure!(!rec_a.is_empty(), "no record files");
    ensure!(
        rec_a
            .iter()
            .map(|(n, _)| n)
            .eq(rec_b.iter().map(|(n, _)| n)),
        "record file names differ"
    );
    for ((name, a), (_, b)) in rec_a.iter().zip(rec_b) {
        ensure!(a == b, "{name} differs between runs");
    }
    ensure!(loss_a == loss_b, "loss.csv differs between runs");
    let bytes: usize = rec_a.iter().map(|(_, b)| b.len()).sum();
    let epochs = String::from_utf8_lossy(loss_a).lines().count() - 1;
    Ok(format!(
        "{} record files ({bytes} bytes) and a {epochs}-epoch loss.csv identical",
        rec_a.len()
    ))
}

// --------------------------------------------------- 11. fail-stop

fn c11_fail_stop() -> Outcome {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    generate(&dir.path().join("ev.hep"), 5000, 11)?;
    prepare(&dir.path().join("ev.hep"), &dir.path().join("ds"), 11)?;
    let run_dir = dir.path().join("run");
    let mut coord = ok(
        bin()
            .arg("train")
            .arg("--data")
            .arg(dir.path().join("ds"))
            .args([
                "--workers",
                "4",
                "--batch",
                "32",
                "--epochs",
                "100000",
                "--coordinator",
                "127.0.0.1:0",
            ])
            .arg("--run-dir")
            .arg(&run_dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn(),
        "spawning coordinator",
    )?;
    let mut lines = BufReader::new(coord.stdout.take().unwrap()).lines();
    let addr = loop {
        match lines.next() {
            Some(Ok(l)) => {
                if let Some(a) = l.strip_prefix("coordinator listening on ") {
                    break a.to_string();
                }
            }
            _ => {
                let _ = coord.kill();
                return Err("coordinator never announced its address".into());
            }
        }
    };
    let coord_out =
        thread::spawn(move || lines.map_while(Result::ok).collect::<Vec<_>>().join("\n"));
    let coord_err = drain(coord.stderr.take().unwrap());
    let mut workers: Vec<Child> = Vec::new();
    for r in 1..4 {
        let w = bin()
            .args(["worker", "--coordinator", &addr, "--rank", &r.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn();
        workers.push(ok(w, "spawning worker")?);
    }
    let worker_err: Vec<_> = workers
        .iter_mut()
        .map(|w| drain(w.stderr.take().unwrap()))
        .collect();

    // wait until an epoch has finished, so the kill lands inside a later one
    let ready = Instant::now() + Duration::from_secs(120);
    let loss_csv = run_dir.join("loss.csv");
    while fs::read_to_string(&loss_csv).map_or(0, |s| s.lines().count()) < 2 {
        if Instant::now() > ready {
            let _ = coord.kill();
            workers.iter_mut().for_each(|w| drop(w.kill()));
            return Err("training never completed an epoch".into());
        }
        thread::sleep(Duration::from_millis(20));
    }
    ok(workers[1].kill(), "killing rank 2")?;
    let killed = Instant::now();
    let deadline = killed + Duration::from_secs(30);
    let mut codes = Vec::new();
    let mut stragglers = Vec::new();
    let [w1, _, w3] = &mut workers[..] else {
        unreachable!()
    };
    for (rank, child) in [(0, &mut coord), (1, w1), (3, w3)] {
        match wait_deadline(child, deadline) {
            Some(s) => codes.push((rank, s.code())),
            None => {
                let _ = child.kill();
                stragglers.push(rank);
            }
        }
    }
    let elapsed = killed.elapsed().as_secs_f64();
    let _ = workers[1].wait();
    ensure!(
        stragglers.is_empty(),
        "ranks {stragglers:?} still running 30s after the kill"
    );
    ensure!(
        codes.iter().all(|(_, c)| *c != Some(0)),
        "exit codes {codes:?}"
    );
    let mut errs = vec![(0, coord_err.join().unwrap_or_default())];
    for (i, h) in worker_err.into_iter().enumerate() {
        if i != 1 {
            errs.push((i + 1, h.join().unwrap_or_default()));
        }
    }
    let _ = coord_out.join();
    for (rank, e) in &errs {
        ensure!(
            e.contains("ABORT"),
            "rank {rank} stderr lacks an ABORT diagnostic: {:?}",
            e.trim()
        );
    }
    Ok(format!(
        "ranks 0, 1, 3 exited {codes:?} within {elapsed:.1}s; e.g. {:?}",
        errs[0].1.trim()
    ))
}

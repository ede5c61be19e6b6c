#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoclass::format::{encode_example, Example, Label, Llf, RecordWriter, HLF_LEN, LLF_COLS};

/// Examples whose label is a fixed function of the high-level features,
/// with a short random particle sequence.
pub fn toy_examples(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut hlf = [0.0f32; HLF_LEN];
            for h in &mut hlf {
                *h = rng.random();
            }
            let scores = [hlf[0] + hlf[3], hlf[1] + hlf[4], hlf[2] + hlf[5]];
            let label = (0..3).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
            let len = rng.random_range(1..6);
            let rows = (0..len)
                .map(|_| {
                    let mut r = [0.0f32; LLF_COLS];
                    for v in &mut r[..17] {
                        *v = rng.random();
                    }
                    r
                })
                .collect();
            Example {
                label: Label::ALL[label],
                hlf,
                llf: Llf::from_rows(rows),
            }
        })
        .collect()
}

pub fn arcs(examples: Vec<Example>) -> Vec<Arc<Example>> {
    examples.into_iter().map(Arc::new).collect()
}

/// Writes examples round-robin into `files` record files under `dir`.
pub fn write_records(dir: &Path, examples: &[Example], files: usize) -> Vec<PathBuf> {
    let paths: Vec<PathBuf> = (0..files)
        .map(|k| dir.join(format!("part-{k:03}.rec")))
        .collect();
    let mut writers: Vec<_> = paths
        .iter()
        .map(|p| RecordWriter::new(BufWriter::new(File::create(p).unwrap())))
        .collect();
    for (i, e) in examples.iter().enumerate() {
        writers[i % files].write_record(&encode_example(e)).unwrap();
    }
    for w in writers {
        w.finish().unwrap();
    }
    paths
}

/// ‖a − b‖₂ / ‖b‖₂, accumulated in f64.
pub fn rel_l2(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

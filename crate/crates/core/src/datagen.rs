//! Deterministic synthetic event generator with three separable classes.
//!
//! Class archetypes:
//! - `W`: one hard isolated lepton, moderate hadronic activity;
//! - `TTbar`: one hard lepton, high multiplicity and scalar pT sum, more displaced tracks;
//! - `Qcd`: a hard isolated lepton only rarely, many hadrons.
//!
//! Trigger rates are fixed per class. Every kinematic parameter is
//! `base + separability * class_offset`, so at separability 0 the events that
//! pass the trigger are identically distributed across classes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{Category, Label, Particle, RawEvent};

/// Minimum pT of the hard lepton; equal to the default trigger threshold.
pub const HARD_LEPTON_MIN_PT: f64 = 23.0;
/// Hard-lepton isolation never exceeds this (below the default trigger cut of 0.45).
pub const HARD_LEPTON_MAX_ISO: f64 = 0.42;

const MASS_PION: f64 = 0.139_57;
const MASS_KAON0: f64 = 0.497_611;
const MASS_ELECTRON: f64 = 0.000_511;
const MASS_MUON: f64 = 0.105_66;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplicity {
    pub charged: f64,
    pub photon: f64,
    pub neutral: f64,
}

impl Default for Multiplicity {
    fn default() -> Self {
        Self {
            charged: 20.0,
            photon: 10.0,
            neutral: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_events: usize,
    /// Fractions of W, QCD and TTbar events.
    pub class_fractions: [f64; 3],
    pub separability: f64,
    pub mean_particles: Multiplicity,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_events: 1000,
            class_fractions: [1.0 / 3.0; 3],
            separability: 0.9,
            mean_particles: Multiplicity::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let f = &self.class_fractions;
        if f.iter().any(|x| !(*x >= 0.0)) {
            return Err(GenError::Config(format!(
                "negative class fraction in {f:?}"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GenError::Config(format!(
                "class fractions sum to {sum}, expected 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.separability) {
            return Err(GenError::Config(format!(
                "separability {} outside [0, 1]",
                self.separability
            )));
        }
        let m = &self.mean_particles;
        if [m.charged, m.photon, m.neutral]
            .iter()
            .any(|x| !(*x >= 0.0) || !x.is_finite())
        {
            return Err(GenError::Config(format!(
                "invalid mean multiplicities {m:?}"
            )));
        }
        Ok(())
    }
}

/// Per-class generator parameters at a given separability.
#[derive(Debug, Clone)]
struct ClassModel {
    p_hard_lepton: f64,
    multiplicity_scale: f64,
    hadron_log_pt: f64,
    eta_sigma: f64,
    lepton_log_excess: f64,
    lepton_iso_scale: f64,
    displaced_fraction: f64,
}

impl ClassModel {
    fn new(label: Label, s: f64) -> Self {
        // (multiplicity, hadron log-pT, eta width, lepton log-pT, lepton iso, displaced)
        let (k_mult, k_pt, k_eta, k_lep, k_iso, k_disp) = match label {
            Label::W => (-0.3, 0.0, 0.2, 0.3, 0.0, 0.0),
            Label::Qcd => (0.35, 0.25, 0.0, -0.5, 0.4, 0.05),
            Label::TTbar => (1.1, 0.45, -0.5, 0.0, 0.2, 0.25),
        };
        let p_hard_lepton = match label {
            Label::W => 0.96,
            Label::Qcd => 0.2,
            Label::TTbar => 0.93,
        };
        Self {
            p_hard_lepton,
            multiplicity_scale: 1.0 + s * k_mult,
            hadron_log_pt: 2.5f64.ln() + s * k_pt,
            eta_sigma: 1.6 + s * k_eta,
            lepton_log_excess: 15.0f64.ln() + s * k_lep,
            lepton_iso_scale: 1.0 + s * k_iso,
            displaced_fraction: 0.05 + s * k_disp,
        }
    }
}

/// Streaming event generator; a pure function of its config.
pub struct Generator {
    config: GenConfig,
    rng: ChaCha8Rng,
    models: [ClassModel; 3],
    emitted: usize,
}

impl Generator {
    pub fn new(config: GenConfig) -> Result<Self, GenError> {
        config.validate()?;
        let s = config.separability;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            models: Label::ALL.map(|l| ClassModel::new(l, s)),
            config,
            emitted: 0,
        })
    }

    fn draw_label(&mut self) -> Label {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (label, f) in Label::ALL.iter().zip(self.config.class_fractions) {
            acc += f;
            if u < acc && f > 0.0 {
                return *label;
            }
        }
        // rounding at the top end: fall back to the last class with weight
        *Label::ALL
            .iter()
            .zip(self.config.class_fractions)
            .rev()
            .find(|(_, f)| *f > 0.0)
            .map(|(l, _)| l)
            .unwrap()
    }

    fn event(&mut self) -> RawEvent {
        let label = self.draw_label();
        let model = self.models[label.index()].clone();
        let rng = &mut self.rng;
        let mut particles = Vec::new();

        if rng.random::<f64>() < model.p_hard_lepton {
            let excess = LogNormal::new(model.lepton_log_excess, 0.6)
                .unwrap()
                .sample(rng);
            let pt = HARD_LEPTON_MIN_PT + excess;
            let iso = (rng.random::<f64>() * 0.3 * model.lepton_iso_scale).min(HARD_LEPTON_MAX_ISO);
            particles.push(lepton(rng, pt, iso, model.eta_sigma));
        } else if rng.random::<f64>() < 0.5 {
            // a lepton that fails the trigger: soft, or hard but not isolated
            if rng.random::<bool>() {
                let pt = 5.0 + LogNormal::new(5.0f64.ln(), 0.6).unwrap().sample(rng);
                let pt = pt.min(HARD_LEPTON_MIN_PT - 1.0);
                let iso = rng.random::<f64>() * 0.3;
                particles.push(lepton(rng, pt, iso, model.eta_sigma));
            } else {
                let pt =
                    HARD_LEPTON_MIN_PT + LogNormal::new(10.0f64.ln(), 0.6).unwrap().sample(rng);
                let iso = 0.5 + LogNormal::new(0.0, 0.5).unwrap().sample(rng);
                particles.push(lepton(rng, pt, iso, model.eta_sigma));
            }
        }

        let m = self.config.mean_particles;
        let scale = model.multiplicity_scale;
        let n_charged = poisson(rng, m.charged * scale);
        let n_photon = poisson(rng, m.photon * scale);
        let n_neutral = poisson(rng, m.neutral * scale);
        let pt_dist = LogNormal::new(model.hadron_log_pt, 0.7).unwrap();
        let photon_pt = LogNormal::new(model.hadron_log_pt - 0.3, 0.7).unwrap();
        for _ in 0..n_charged {
            let pt = pt_dist.sample(rng);
            let d0_sigma = if rng.random::<f64>() < model.displaced_fraction {
                0.5
            } else {
                0.02
            };
            let d0 = Normal::new(0.0, d0_sigma).unwrap().sample(rng);
            let dz = Normal::new(0.0, 0.05).unwrap().sample(rng);
            let charge = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let iso = LogNormal::new(-0.2, 0.8).unwrap().sample(rng);
            particles.push(make(
                rng,
                Category::ChargedHadron,
                pt,
                model.eta_sigma,
                MASS_PION,
                charge,
                (d0, dz),
                iso,
            ));
        }
        for _ in 0..n_photon {
            let pt = photon_pt.sample(rng);
            let iso = LogNormal::new(-0.2, 0.8).unwrap().sample(rng);
            particles.push(make(
                rng,
                Category::Photon,
                pt,
                model.eta_sigma,
                0.0,
                0.0,
                (0.0, 0.0),
                iso,
            ));
        }
        for _ in 0..n_neutral {
            let pt = pt_dist.sample(rng);
            let iso = LogNormal::new(-0.2, 0.8).unwrap().sample(rng);
            particles.push(make(
                rng,
                Category::NeutralHadron,
                pt,
                model.eta_sigma,
                MASS_KAON0,
                0.0,
                (0.0, 0.0),
                iso,
            ));
        }
        if particles.is_empty() {
            // events always carry at least one particle
            let pt = pt_dist.sample(rng);
            particles.push(make(
                rng,
                Category::Photon,
                pt,
                model.eta_sigma,
                0.0,
                0.0,
                (0.0, 0.0),
                1.0,
            ));
        }
        RawEvent { label, particles }
    }
}

impl Iterator for Generator {
    type Item = RawEvent;

    fn next(&mut self) -> Option<RawEvent> {
        if self.emitted >= self.config.n_events {
            return None;
        }
        self.emitted += 1;
        Some(self.event())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.config.n_events - self.emitted;
        (left, Some(left))
    }
}

pub fn generate(config: &GenConfig) -> Result<Vec<RawEvent>, GenError> {
    Ok(Generator::new(config.clone())?.collect())
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).unwrap().sample(rng) as usize
}

fn lepton(rng: &mut ChaCha8Rng, pt: f64, iso: f64, eta_sigma: f64) -> Particle {
    let (category, mass) = if rng.random::<bool>() {
        (Category::Electron, MASS_ELECTRON)
    } else {
        (Category::Muon, MASS_MUON)
    };
    let charge = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let d0 = Normal::new(0.0, 0.01).unwrap().sample(rng);
    let dz = Normal::new(0.0, 0.03).unwrap().sample(rng);
    // central leptons
    make(
        rng,
        category,
        pt,
        eta_sigma.min(1.2),
        mass,
        charge,
        (d0, dz),
        iso,
    )
}

#[allow(clippy::too_many_arguments)]
fn make(
    rng: &mut ChaCha8Rng,
    category: Category,
    pt: f64,
    eta_sigma: f64,
    mass: f64,
    charge: f32,
    (d0, dz): (f64, f64),
    iso: f64,
) -> Particle {
    let eta = Normal::new(0.0, eta_sigma)
        .unwrap()
        .sample(rng)
        .clamp(-5.0, 5.0);
    let phi = rng.random_range(-PI..PI);
    let px = pt * phi.cos();
    let py = pt * phi.sin();
    let pz = pt * eta.sinh();
    let e = (px * px + py * py + pz * pz + mass * mass).sqrt();
    Particle {
        category,
        px: px as f32,
        py: py as f32,
        pz: pz as f32,
        e: e as f32,
        charge,
        d0: d0 as f32,
        dz: dz as f32,
        iso: iso as f32,
    }
}

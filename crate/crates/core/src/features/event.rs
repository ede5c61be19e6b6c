//! Per-event features: trigger emulation, the LLF particle matrix and the
//! 14 high-level features.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::kinematics::{delta_r, kinematics, Kinematics};
use crate::format::{
    Category, Example, Llf, Particle, RawEvent, COL_IS_PADDING, COL_LEPTON_FLAG, HLF_LEN, LLF_COLS,
};

pub const CHARGED_QUOTA: usize = 450;
pub const PHOTON_QUOTA: usize = 150;
pub const NEUTRAL_QUOTA: usize = 200;

/// LLF column layout.
pub mod col {
    pub const PX: usize = 0;
    pub const PY: usize = 1;
    pub const PZ: usize = 2;
    pub const E: usize = 3;
    pub const PT: usize = 4;
    pub const ETA: usize = 5;
    pub const PHI: usize = 6;
    pub const CHARGE: usize = 7;
    pub const D0: usize = 8;
    pub const DZ: usize = 9;
    pub const ISO: usize = 10;
    pub const DELTA_R: usize = 11;
    /// First of five one-hot category columns.
    pub const CATEGORY: usize = 12;
    pub const IS_PADDING: usize = crate::format::COL_IS_PADDING;
    pub const LEPTON_FLAG: usize = crate::format::COL_LEPTON_FLAG;
}

/// HLF layout.
pub const HLF_NAMES: [&str; HLF_LEN] = [
    "lepton_pt",
    "lepton_eta",
    "lepton_iso",
    "met",
    "met_phi",
    "mt",
    "st",
    "ht",
    "n_charged",
    "n_photons",
    "n_neutral",
    "leading_pt",
    "mean_dr_charged",
    "pt_weighted_dr",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub pt_threshold: f64,
    pub iso_max: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            pt_threshold: 23.0,
            iso_max: 0.45,
        }
    }
}

/// Quota group a particle counts against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Charged,
    Photon,
    Neutral,
}

impl Group {
    pub fn of(category: Category) -> Self {
        match category {
            Category::ChargedHadron | Category::Electron | Category::Muon => Group::Charged,
            Category::Photon => Group::Photon,
            Category::NeutralHadron => Group::Neutral,
        }
    }

    pub fn quota(self) -> usize {
        match self {
            Group::Charged => CHARGED_QUOTA,
            Group::Photon => PHOTON_QUOTA,
            Group::Neutral => NEUTRAL_QUOTA,
        }
    }
}

fn kin(p: &Particle) -> Kinematics {
    kinematics(p.px as f64, p.py as f64, p.pz as f64)
}

/// Index of the highest-pT electron or muon with `pt >= pt_threshold` and
/// `iso <= iso_max`, or `None` when the event fails the trigger.
pub fn trigger_select(event: &RawEvent, cfg: &TriggerConfig) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in event.particles.iter().enumerate() {
        if !p.category.is_lepton() || !(p.iso as f64 <= cfg.iso_max) {
            continue;
        }
        let pt = p.pt();
        if pt >= cfg.pt_threshold && best.is_none_or(|(_, b)| pt > b) {
            best = Some((i, pt));
        }
    }
    best.map(|(i, _)| i)
}

/// Non-lepton particle indices ranked by decreasing pT (ties keep file order).
fn ranked_others(event: &RawEvent, lepton: usize) -> Vec<(usize, f64)> {
    let mut others: Vec<(usize, f64)> = event
        .particles
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != lepton)
        .map(|(i, p)| (i, p.pt()))
        .collect();
    others.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
    others
}

fn row(p: &Particle, k: &Kinematics, dr: f64, is_lepton: bool) -> [f32; LLF_COLS] {
    let mut r = [0.0f32; LLF_COLS];
    r[col::PX] = p.px;
    r[col::PY] = p.py;
    r[col::PZ] = p.pz;
    r[col::E] = p.e;
    r[col::PT] = k.pt as f32;
    r[col::ETA] = k.eta as f32;
    r[col::PHI] = k.phi as f32;
    r[col::CHARGE] = p.charge;
    r[col::D0] = p.d0;
    r[col::DZ] = p.dz;
    r[col::ISO] = p.iso;
    r[col::DELTA_R] = dr as f32;
    r[col::CATEGORY + p.category as usize] = 1.0;
    r[COL_IS_PADDING] = 0.0;
    r[COL_LEPTON_FLAG] = if is_lepton { 1.0 } else { 0.0 };
    r
}

/// Assembles the LLF matrix: the isolated lepton in row 0, then at most
/// 450 charged particles, 150 photons and 200 neutral hadrons chosen by pT
/// rank and ordered by decreasing distance from the lepton (ties by
/// decreasing pT), then padding.
pub fn build_llf(event: &RawEvent, lepton: usize) -> Llf {
    let lep = &event.particles[lepton];
    let lep_k = kin(lep);
    let mut taken = [0usize; 3];
    let mut retained: Vec<(usize, f64, f64, Kinematics)> = Vec::new();
    for (i, pt) in ranked_others(event, lepton) {
        let p = &event.particles[i];
        let g = Group::of(p.category);
        let slot = &mut taken[g as usize];
        if *slot >= g.quota() {
            continue;
        }
        *slot += 1;
        let k = kin(p);
        retained.push((i, pt, delta_r(&k, &lep_k), k));
    }
    // stable sort on a pT-ordered list keeps ties in decreasing pT
    retained.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal));

    let mut rows = Vec::with_capacity(1 + retained.len());
    rows.push(row(lep, &lep_k, 0.0, true));
    rows.extend(
        retained
            .iter()
            .map(|(i, _, dr, k)| row(&event.particles[*i], k, *dr, false)),
    );
    Llf::from_rows(rows)
}

/// The 14 high-level features, in `HLF_NAMES` order.
///
/// MET and ST include the trigger lepton; HT counts hadrons only; the counts,
/// leading pT and mean distances run over the non-lepton particles.
pub fn compute_hlf(event: &RawEvent, lepton: usize) -> [f32; HLF_LEN] {
    let lep = &event.particles[lepton];
    let lep_k = kin(lep);

    let (mut sum_px, mut sum_py) = (0.0f64, 0.0f64);
    let mut st = 0.0;
    let mut ht = 0.0;
    let mut counts = [0usize; 3];
    let mut leading: f64 = 0.0;
    let (mut dr_charged, mut n_dr_charged) = (0.0, 0usize);
    let (mut dr_weighted, mut pt_weight) = (0.0, 0.0);

    for (i, p) in event.particles.iter().enumerate() {
        let pt = p.pt();
        sum_px += p.px as f64;
        sum_py += p.py as f64;
        st += pt;
        if p.category.is_hadron() {
            ht += pt;
        }
        if i == lepton {
            continue;
        }
        let g = Group::of(p.category);
        counts[g as usize] += 1;
        leading = leading.max(pt);
        let dr = delta_r(&kin(p), &lep_k);
        if g == Group::Charged {
            dr_charged += dr;
            n_dr_charged += 1;
        }
        dr_weighted += pt * dr;
        pt_weight += pt;
    }

    let (met_x, met_y) = (-sum_px, -sum_py);
    let met = met_x.hypot(met_y);
    let met_phi = if met > 0.0 {
        super::kinematics::wrap_phi(met_y.atan2(met_x))
    } else {
        0.0
    };
    let mt = (2.0 * lep_k.pt * met * (1.0 - (lep_k.phi - met_phi).cos()))
        .max(0.0)
        .sqrt();
    let mean_dr_charged = if n_dr_charged > 0 {
        dr_charged / n_dr_charged as f64
    } else {
        0.0
    };
    let weighted_dr = if pt_weight > 0.0 {
        dr_weighted / pt_weight
    } else {
        0.0
    };

    [
        lep_k.pt,
        lep_k.eta,
        lep.iso as f64,
        met,
        met_phi,
        mt,
        st,
        ht,
        counts[Group::Charged as usize] as f64,
        counts[Group::Photon as usize] as f64,
        counts[Group::Neutral as usize] as f64,
        leading,
        mean_dr_charged,
        weighted_dr,
    ]
    .map(|v| v as f32)
}

/// Trigger, then LLF and HLF. `None` when the event is rejected.
pub fn event_to_example(event: &RawEvent, trigger: &TriggerConfig) -> Option<Example> {
    let lepton = trigger_select(event, trigger)?;
    Some(Example {
        label: event.label,
        hlf: compute_hlf(event, lepton),
        llf: build_llf(event, lepton),
    })
}

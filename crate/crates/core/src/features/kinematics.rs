use std::f64::consts::PI;

/// Pseudorapidity bound used at the beam line.
pub const ETA_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Kinematics {
    pub pt: f64,
    pub eta: f64,
    /// Azimuth in (-pi, pi].
    pub phi: f64,
}

impl Kinematics {
    pub const ZERO: Kinematics = Kinematics {
        pt: 0.0,
        eta: 0.0,
        phi: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

/// Transverse momentum, pseudorapidity and azimuth of a momentum vector.
///
/// The zero vector maps to `Kinematics::ZERO` (used for padding rows). Along
/// the beam line the pseudorapidity is clamped to `+-ETA_LIMIT`.
pub fn kinematics(px: f64, py: f64, pz: f64) -> Kinematics {
    if px == 0.0 && py == 0.0 && pz == 0.0 {
        return Kinematics::ZERO;
    }
    let pt = px.hypot(py);
    let p = pt.hypot(pz);
    let eta = if p - pz.abs() <= 1e-12 * p {
        ETA_LIMIT.copysign(pz)
    } else {
        (pz / p).atanh().clamp(-ETA_LIMIT, ETA_LIMIT)
    };
    Kinematics {
        pt,
        eta,
        phi: wrap_phi(py.atan2(px)),
    }
}

/// Maps an angle into (-pi, pi].
pub fn wrap_phi(phi: f64) -> f64 {
    let mut d = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Angular distance `sqrt(deta^2 + dphi^2)` with the azimuth difference
/// wrapped into (-pi, pi].
pub fn delta_r(a: &Kinematics, b: &Kinematics) -> f64 {
    let deta = a.eta - b.eta;
    let dphi = wrap_phi(a.phi - b.phi);
    deta.hypot(dphi)
}

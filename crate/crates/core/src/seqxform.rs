//! Symmetrical components.
//!
//! Convention used throughout the crate: `a = 1∠120°`,
//!
//! ```text
//!     | 1  1   1  |                  | 1  1   1  |
//! A = | 1  a²  a  |   A⁻¹ = (1/3) ·  | 1  a   a² |
//!     | 1  a   a² |                  | 1  a²  a  |
//! ```
//!
//! so `v_abc = A · v_012`. With this scaling the total complex power is
//! `s_a + s_b + s_c = 3 · (v0·i0* + v1·i1* + v2·i2*)`.

use num_complex::Complex64;
use thiserror::Error;

/// Smallest phase voltage magnitude (pu) accepted when turning powers into currents.
pub const VOLTAGE_FLOOR: f64 = 1e-6;

/// The Fortescue operator `a = e^{j2π/3}`.
pub fn a_op() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Phase-frame voltage triple (pu).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseVoltages {
    pub va: Complex64,
    pub vb: Complex64,
    pub vc: Complex64,
}

/// Sequence-frame voltage triple (pu), ordered zero, positive, negative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SequenceVoltages {
    pub v0: Complex64,
    pub v1: Complex64,
    pub v2: Complex64,
}

/// Per-phase complex power.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePowers {
    pub sa: Complex64,
    pub sb: Complex64,
    pub sc: Complex64,
}

/// Per-phase complex current.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseCurrents {
    pub ia: Complex64,
    pub ib: Complex64,
    pub ic: Complex64,
}

/// Sequence-frame current triple.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SequenceCurrents {
    pub i0: Complex64,
    pub i1: Complex64,
    pub i2: Complex64,
}

macro_rules! triple_impl {
    ($ty:ident, $x:ident, $y:ident, $z:ident) => {
        impl $ty {
            pub fn new($x: Complex64, $y: Complex64, $z: Complex64) -> Self {
                Self { $x, $y, $z }
            }

            pub fn to_array(self) -> [Complex64; 3] {
                [self.$x, self.$y, self.$z]
            }

            pub fn from_array(v: [Complex64; 3]) -> Self {
                Self {
                    $x: v[0],
                    $y: v[1],
                    $z: v[2],
                }
            }

            pub fn is_finite(&self) -> bool {
                self.to_array()
                    .iter()
                    .all(|c| c.re.is_finite() && c.im.is_finite())
            }

            pub fn scale(self, k: f64) -> Self {
                Self::from_array(self.to_array().map(|c| c * k))
            }
        }

        impl std::ops::Add for $ty {
            type Output = $ty;
            fn add(self, rhs: $ty) -> $ty {
                let (l, r) = (self.to_array(), rhs.to_array());
                $ty::from_array([l[0] + r[0], l[1] + r[1], l[2] + r[2]])
            }
        }

        impl std::ops::Sub for $ty {
            type Output = $ty;
            fn sub(self, rhs: $ty) -> $ty {
                let (l, r) = (self.to_array(), rhs.to_array());
                $ty::from_array([l[0] - r[0], l[1] - r[1], l[2] - r[2]])
            }
        }
    };
}

triple_impl!(PhaseVoltages, va, vb, vc);
triple_impl!(SequenceVoltages, v0, v1, v2);
triple_impl!(PhasePowers, sa, sb, sc);
triple_impl!(PhaseCurrents, ia, ib, ic);
triple_impl!(SequenceCurrents, i0, i1, i2);

impl PhaseVoltages {
    /// Balanced positive-sequence set `(v, v∠−120°, v∠120°)`.
    pub fn balanced(v: Complex64) -> Self {
        let a = a_op();
        Self::new(v, v * a * a, v * a)
    }

    pub fn get(&self, phase: Phase) -> Complex64 {
        self.to_array()[phase.index()]
    }

    pub fn magnitudes(&self) -> [f64; 3] {
        self.to_array().map(|c| c.norm())
    }
}

impl PhasePowers {
    pub fn total(&self) -> Complex64 {
        self.sa + self.sb + self.sc
    }

    pub fn get(&self, phase: Phase) -> Complex64 {
        self.to_array()[phase.index()]
    }
}

fn forward(x: [Complex64; 3]) -> [Complex64; 3] {
    let a = a_op();
    let a2 = a * a;
    let third = 1.0 / 3.0;
    [
        (x[0] + x[1] + x[2]) * third,
        (x[0] + a * x[1] + a2 * x[2]) * third,
        (x[0] + a2 * x[1] + a * x[2]) * third,
    ]
}

fn inverse(x: [Complex64; 3]) -> [Complex64; 3] {
    let a = a_op();
    let a2 = a * a;
    [
        x[0] + x[1] + x[2],
        x[0] + a2 * x[1] + a * x[2],
        x[0] + a * x[1] + a2 * x[2],
    ]
}

pub fn phase_to_sequence(v: PhaseVoltages) -> SequenceVoltages {
    SequenceVoltages::from_array(forward(v.to_array()))
}

pub fn sequence_to_phase(v: SequenceVoltages) -> PhaseVoltages {
    PhaseVoltages::from_array(inverse(v.to_array()))
}

pub fn phase_to_sequence_currents(i: PhaseCurrents) -> SequenceCurrents {
    SequenceCurrents::from_array(forward(i.to_array()))
}

pub fn sequence_to_phase_currents(i: SequenceCurrents) -> PhaseCurrents {
    PhaseCurrents::from_array(inverse(i.to_array()))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqError {
    #[error("phase {phase} voltage magnitude {magnitude:e} pu is below the {floor:e} pu floor")]
    DegenerateVoltage {
        phase: Phase,
        magnitude: f64,
        floor: f64,
    },
}

/// Currents drawn by constant-power phase loads, `i_p = conj(s_p / v_p)`.
pub fn phase_currents_from_power(
    s: PhasePowers,
    v: PhaseVoltages,
) -> Result<PhaseCurrents, SeqError> {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for phase in Phase::ALL {
        let vp = v.get(phase);
        let magnitude = vp.norm();
        if !(magnitude > VOLTAGE_FLOOR) {
            return Err(SeqError::DegenerateVoltage {
                phase,
                magnitude,
                floor: VOLTAGE_FLOOR,
            });
        }
        out[phase.index()] = (s.get(phase) / vp).conj();
    }
    Ok(PhaseCurrents::from_array(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn polar_deg(m: f64, deg: f64) -> Complex64 {
        Complex64::from_polar(m, deg.to_radians())
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn balanced_set_is_pure_positive_sequence() {
        let v = PhaseVoltages::new(
            polar_deg(1.0, 0.0),
            polar_deg(1.0, -120.0),
            polar_deg(1.0, 120.0),
        );
        let s = phase_to_sequence(v);
        assert!(close(s.v0, c(0.0, 0.0), 1e-15));
        assert!(close(s.v1, c(1.0, 0.0), 1e-15));
        assert!(close(s.v2, c(0.0, 0.0), 1e-15));
    }

    #[test]
    fn common_mode_set_is_pure_zero_sequence() {
        let one = c(1.0, 0.0);
        let s = phase_to_sequence(PhaseVoltages::new(one, one, one));
        assert!(close(s.v0, one, 1e-15));
        assert!(close(s.v1, c(0.0, 0.0), 1e-15));
        assert!(close(s.v2, c(0.0, 0.0), 1e-15));
    }

    #[test]
    fn unbalanced_set_matches_dense_matrix_product() {
        // Build A⁻¹ explicitly as a matrix and multiply entry by entry.
        let a = polar_deg(1.0, 120.0);
        let a2 = polar_deg(1.0, 240.0);
        let one = c(1.0, 0.0);
        let m = [[one, one, one], [one, a, a2], [one, a2, a]];
        let x = [
            polar_deg(1.02, 0.0),
            polar_deg(0.98, -118.0),
            polar_deg(1.00, 121.0),
        ];
        let mut expect = [c(0.0, 0.0); 3];
        for r in 0..3 {
            for k in 0..3 {
                expect[r] += m[r][k] * x[k] / 3.0;
            }
        }
        let got = phase_to_sequence(PhaseVoltages::from_array(x)).to_array();
        for k in 0..3 {
            assert!(
                close(got[k], expect[k], 1e-14),
                "{k}: {} vs {}",
                got[k],
                expect[k]
            );
        }
    }

    #[test]
    fn sequence_to_phase_inverts_balanced_case() {
        let v = sequence_to_phase(SequenceVoltages::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)));
        assert!(close(v.va, polar_deg(1.0, 0.0), 1e-15));
        assert!(close(v.vb, polar_deg(1.0, -120.0), 1e-15));
        assert!(close(v.vc, polar_deg(1.0, 120.0), 1e-15));
        let z = sequence_to_phase(SequenceVoltages::default());
        assert_eq!(z, PhaseVoltages::default());
    }

    #[test]
    fn unity_voltage_currents() {
        let v = PhaseVoltages::balanced(c(1.0, 0.0));
        let s = PhasePowers::new(c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        let i = phase_currents_from_power(s, v).unwrap();
        // unit power factor: current in phase with voltage
        assert!(close(i.ia, v.va, 1e-15));
        assert!(close(i.ib, v.vb, 1e-15));
        assert!(close(i.ic, v.vc, 1e-15));
        let zero = phase_currents_from_power(PhasePowers::default(), v).unwrap();
        assert_eq!(zero, PhaseCurrents::default());
    }

    #[test]
    fn unbalanced_currents_match_scalar_division() {
        let v = PhaseVoltages::new(
            polar_deg(1.01, -2.0),
            polar_deg(0.97, -121.0),
            polar_deg(1.03, 118.5),
        );
        let s = PhasePowers::new(c(0.4, 0.1), c(0.25, -0.05), c(0.6, 0.3));
        let i = phase_currents_from_power(s, v).unwrap();
        // conj(s/v) = conj(s) / conj(v)
        for (got, (sp, vp)) in i
            .to_array()
            .iter()
            .zip(s.to_array().iter().zip(v.to_array()))
        {
            let expect = sp.conj() / vp.conj();
            assert!(close(*got, expect, 1e-15));
        }
    }

    #[test]
    fn degenerate_voltage_names_phase() {
        let v = PhaseVoltages::new(c(1.0, 0.0), c(1e-9, 0.0), c(1.0, 0.0));
        let err = phase_currents_from_power(PhasePowers::default(), v).unwrap_err();
        assert!(matches!(
            err,
            SeqError::DegenerateVoltage {
                phase: Phase::B,
                ..
            }
        ));
        assert!(err.to_string().contains("phase b"));
    }

    fn arb_c() -> impl Strategy<Value = Complex64> {
        (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(r, i)| c(r, i))
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(x in arb_c(), y in arb_c(), z in arb_c()) {
            let v = SequenceVoltages::new(x, y, z);
            let back = phase_to_sequence(sequence_to_phase(v));
            for (g, e) in back.to_array().iter().zip(v.to_array()) {
                prop_assert!((g - e).norm() < 1e-12);
            }
            let p = PhaseVoltages::new(x, y, z);
            let back = sequence_to_phase(phase_to_sequence(p));
            for (g, e) in back.to_array().iter().zip(p.to_array()) {
                prop_assert!((g - e).norm() < 1e-12);
            }
        }

        #[test]
        fn transform_is_linear(x in arb_c(), y in arb_c(), z in arb_c(), u in arb_c(), w in arb_c(), q in arb_c()) {
            let p = PhaseVoltages::new(x, y, z);
            let r = PhaseVoltages::new(u, w, q);
            let lhs = phase_to_sequence(p + r);
            let rhs = phase_to_sequence(p) + phase_to_sequence(r);
            for (g, e) in lhs.to_array().iter().zip(rhs.to_array()) {
                prop_assert!((g - e).norm() < 1e-12);
            }
        }

        #[test]
        fn total_power_is_three_times_sequence_power(
            va in arb_c(), vb in arb_c(), vc in arb_c(), ia in arb_c(), ib in arb_c(), ic in arb_c()
        ) {
            let v = PhaseVoltages::new(va, vb, vc);
            let i = PhaseCurrents::new(ia, ib, ic);
            let phase_total = va * ia.conj() + vb * ib.conj() + vc * ic.conj();
            let vs = phase_to_sequence(v);
            let is = phase_to_sequence_currents(i);
            let seq_total = (vs.v0 * is.i0.conj() + vs.v1 * is.i1.conj() + vs.v2 * is.i2.conj()) * 3.0;
            prop_assert!((phase_total - seq_total).norm() < 1e-10);
        }
    }
}

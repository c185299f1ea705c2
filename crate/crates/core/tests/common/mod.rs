//! Independent reference solvers. Nothing here calls into the solvers under
//! test; they share only the data types.

#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64 as C;
use tdcosim::dsolve::{synth_feeder, Feeder, NodeId, SynthSpec};
use tdcosim::io::load_feeder;
use tdcosim::netmodel::{BusId, BusKind, LoadKind, TransmissionCase, Units};

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("corpus")
}

/// Gaussian elimination with partial pivoting on a dense complex system.
pub fn dense_solve(mut a: Vec<Vec<C>>, mut b: Vec<C>) -> Vec<C> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.norm() > 1e-300, "singular oracle system");
        for r in col + 1..n {
            let f = a[r][col] / d;
            if f == C::new(0.0, 0.0) {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[r][k] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![C::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    x
}

pub fn dense_inverse(a: &[Vec<C>]) -> Vec<Vec<C>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![C::new(0.0, 0.0); n];
        e[j] = C::new(1.0, 0.0);
        cols.push(dense_solve(a.to_vec(), e));
    }
    (0..n)
        .map(|i| (0..n).map(|j| cols[j][i]).collect())
        .collect()
}

/// Positive-sequence bus admittance matrix stamped element by element.
pub fn naive_y1(case: &TransmissionCase) -> (Vec<BusId>, Vec<Vec<C>>) {
    let ids: Vec<BusId> = case.buses.iter().map(|b| b.id).collect();
    let n = ids.len();
    let at = |id: BusId| ids.iter().position(|&x| x == id).unwrap();
    let mut y = vec![vec![C::new(0.0, 0.0); n]; n];
    for br in &case.branches {
        let (f, t) = (at(br.from), at(br.to));
        let ys = C::new(1.0, 0.0) / br.z1;
        let sh = C::new(0.0, br.b1_shunt / 2.0);
        let a = br.tap;
        y[f][f] += (ys + sh) / (a * a);
        y[t][t] += ys + sh;
        y[f][t] += -ys / a;
        y[t][f] += -ys / a;
    }
    (ids, y)
}

fn injections(y: &[Vec<C>], v: &[C]) -> Vec<C> {
    (0..v.len())
        .map(|i| {
            let cur: C = (0..v.len()).map(|j| y[i][j] * v[j]).sum();
            v[i] * cur.conj()
        })
        .collect()
}

/// Newton's method on real variables with a central-difference Jacobian.
/// Returns the root and the final max-norm residual.
pub fn fd_newton(
    x0: Vec<f64>,
    f: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let mut x = x0;
    let n = x.len();
    let mut r = f(&x);
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..max_iter {
        if norm(&r) < tol {
            break;
        }
        let h = 1e-7;
        let mut jac = vec![vec![C::new(0.0, 0.0); n]; n];
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (f(&xp), f(&xm));
            for i in 0..n {
                jac[i][j] = C::new((fp[i] - fm[i]) / (2.0 * h), 0.0);
            }
        }
        let rhs: Vec<C> = r.iter().map(|v| C::new(-v, 0.0)).collect();
        let dx = dense_solve(jac, rhs);
        for j in 0..n {
            x[j] += dx[j].re;
        }
        r = f(&x);
    }
    let res = norm(&r);
    (x, res)
}

/// Balanced power flow in rectangular coordinates (e + jf) without reactive
/// limits. `case` must be per-unit; `extra` adds per-bus loads (pu).
pub fn rectangular_nr(case: &TransmissionCase, extra: &BTreeMap<BusId, C>) -> BTreeMap<BusId, C> {
    assert_eq!(case.units, Units::PerUnit);
    let (ids, y) = naive_y1(case);
    let n = ids.len();
    let mut spec = vec![C::new(0.0, 0.0); n];
    for g in &case.generators {
        let i = ids.iter().position(|&b| b == g.bus).unwrap();
        spec[i] += C::new(g.p_set, g.q_set);
    }
    for l in &case.loads {
        if let LoadKind::Lumped { p, q } = l.kind {
            let i = ids.iter().position(|&b| b == l.bus).unwrap();
            spec[i] -= C::new(p, q);
        }
    }
    for (bus, s) in extra {
        let i = ids.iter().position(|b| b == bus).unwrap();
        spec[i] -= *s;
    }
    let slack = case
        .buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .unwrap();
    let sb = &case.buses[slack];
    let v_slack = C::from_polar(sb.v_setpoint.unwrap(), sb.angle_setpoint.unwrap_or(0.0));
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();

    let assemble = |x: &[f64]| -> Vec<C> {
        let mut v = vec![v_slack; n];
        for (k, &i) in free.iter().enumerate() {
            v[i] = C::new(x[2 * k], x[2 * k + 1]);
        }
        v
    };
    let residual = |x: &[f64]| -> Vec<f64> {
        let v = assemble(x);
        let s = injections(&y, &v);
        let mut out = Vec::with_capacity(2 * free.len());
        for &i in &free {
            out.push(s[i].re - spec[i].re);
            match case.buses[i].kind {
                BusKind::Pv => {
                    let vs = case.buses[i].v_setpoint.unwrap();
                    out.push(v[i].norm_sqr() - vs * vs);
                }
                _ => out.push(s[i].im - spec[i].im),
            }
        }
        out
    };
    let mut x0 = Vec::new();
    for &i in &free {
        x0.push(case.buses[i].v_setpoint.unwrap_or(1.0));
        x0.push(0.0);
    }
    let (x, res) = fd_newton(x0, residual, 1e-13, 60);
    assert!(res < 1e-11, "oracle power flow did not converge: {res}");
    let v = assemble(&x);
    ids.into_iter().zip(v).collect()
}

/// Two-bus network (slack `v1`, series `z`) feeding a PQ load: Gauss–Seidel.
pub fn gauss_seidel_two_bus(v1: C, z: C, load: C) -> C {
    let y = C::new(1.0, 0.0) / z;
    let mut v2 = v1;
    for _ in 0..100_000 {
        let next = ((-load / v2).conj() + y * v1) / y;
        if (next - v2).norm() < 1e-15 {
            return next;
        }
        v2 = next;
    }
    panic!("Gauss–Seidel did not settle");
}

/// Full complex nodal equations of a radial or meshed feeder, solved with
/// Newton on real variables. Voltages per node (pu), absent phases zero.
pub fn nodal_newton_feeder(feeder: &Feeder, head: [C; 3]) -> BTreeMap<NodeId, [C; 3]> {
    let zb = feeder.base_kv * feeder.base_kv / feeder.base_mva;
    let per_phase = feeder.base_mva / 3.0;

    // phases present at each node: union of incident line phases
    let mut phases: BTreeMap<NodeId, [bool; 3]> = BTreeMap::new();
    phases.insert(feeder.head, [true; 3]);
    for l in &feeder.lines {
        for node in [l.from, l.to] {
            let e = phases.entry(node).or_insert([false; 3]);
            for k in l.phases.indices() {
                e[k] = true;
            }
        }
    }
    let mut unknowns: Vec<(NodeId, usize)> = Vec::new();
    for (&node, ph) in &phases {
        if node == feeder.head {
            continue;
        }
        for k in 0..3 {
            if ph[k] {
                unknowns.push((node, k));
            }
        }
    }
    let slot = |node: NodeId, k: usize| unknowns.iter().position(|&u| u == (node, k));

    // line admittances over the line's own phases
    let lines: Vec<(NodeId, NodeId, Vec<usize>, Vec<Vec<C>>)> = feeder
        .lines
        .iter()
        .map(|l| {
            let idx: Vec<usize> = l.phases.indices().collect();
            let z: Vec<Vec<C>> = idx
                .iter()
                .map(|&r| {
                    idx.iter()
                        .map(|&cc| l.z_per_length[r][cc] * l.length / zb)
                        .collect()
                })
                .collect();
            (l.from, l.to, idx, dense_inverse(&z))
        })
        .collect();
    let mut loads: BTreeMap<(NodeId, usize), C> = BTreeMap::new();
    for l in &feeder.loads {
        for k in l.phases.indices() {
            *loads.entry((l.node, k)).or_default() += l.s[k] / per_phase;
        }
    }

    let voltage = |x: &[f64], node: NodeId, k: usize| -> C {
        if node == feeder.head {
            head[k]
        } else {
            let s = slot(node, k).unwrap();
            C::new(x[2 * s], x[2 * s + 1])
        }
    };
    let residual = |x: &[f64]| -> Vec<f64> {
        let mut mismatch = vec![C::new(0.0, 0.0); unknowns.len()];
        for (from, to, idx, y) in &lines {
            for (r, &kr) in idx.iter().enumerate() {
                let mut i = C::new(0.0, 0.0);
                for (cc, &kc) in idx.iter().enumerate() {
                    i += y[r][cc] * (voltage(x, *from, kc) - voltage(x, *to, kc));
                }
                if let Some(s) = slot(*from, kr) {
                    mismatch[s] += i;
                }
                if let Some(s) = slot(*to, kr) {
                    mismatch[s] -= i;
                }
            }
        }
        for (&(node, k), &s) in &loads {
            if let Some(p) = slot(node, k) {
                mismatch[p] += (s / voltage(x, node, k)).conj();
            }
        }
        mismatch.iter().flat_map(|m| [m.re, m.im]).collect()
    };
    let x0: Vec<f64> = unknowns
        .iter()
        .flat_map(|&(_, k)| [head[k].re, head[k].im])
        .collect();
    let (x, res) = fd_newton(x0, residual, 1e-14, 60);
    assert!(res < 1e-12, "feeder oracle did not converge: {res}");

    phases
        .iter()
        .map(|(&node, ph)| {
            let mut v = [C::new(0.0, 0.0); 3];
            for k in 0..3 {
                if ph[k] {
                    v[k] = voltage(&x, node, k);
                }
            }
            (node, v)
        })
        .collect()
}

/// Direct solve of a two-bus, three-sequence network whose branch carries a
/// full 3×3 series sequence admittance (diagonal plus coupling block).
/// Unknown ordering: (bus0: v0, v1, v2, bus1: v0, v1, v2).
pub fn coupled_two_bus(ybranch: [[C; 3]; 3], shunt: [[C; 3]; 2], inj: [[C; 3]; 2]) -> [[C; 3]; 2] {
    let mut a = vec![vec![C::new(0.0, 0.0); 6]; 6];
    for k in 0..3 {
        for m in 0..3 {
            a[k][m] += ybranch[k][m];
            a[3 + k][3 + m] += ybranch[k][m];
            a[k][3 + m] -= ybranch[k][m];
            a[3 + k][m] -= ybranch[k][m];
        }
        a[k][k] += shunt[0][k];
        a[3 + k][3 + k] += shunt[1][k];
    }
    let b: Vec<C> = inj.iter().flat_map(|r| r.iter().copied()).collect();
    let x = dense_solve(a, b);
    [[x[0], x[1], x[2]], [x[3], x[4], x[5]]]
}

/// KKT residual report for a dispatch: max |MC − λ| over interior units, and
/// whether every unit at a limit satisfies the sign condition.
pub fn kkt_check(units: &[(f64, f64, f64, f64)], p: &[f64], lambda: f64, tol: f64) -> (f64, bool) {
    let mut interior = 0.0f64;
    let mut signs_ok = true;
    for (&(a, b, pmin, pmax), &pi) in units.iter().zip(p) {
        let mc = 2.0 * a * pi + b;
        if (pi - pmax).abs() <= tol {
            signs_ok &= mc <= lambda + 1e-6;
        } else if (pi - pmin).abs() <= tol {
            signs_ok &= mc >= lambda - 1e-6;
        } else {
            interior = interior.max((mc - lambda).abs());
        }
    }
    (interior, signs_ok)
}

/// Every small feeder the oracle comparison runs on.
pub fn small_corpus() -> Vec<Feeder> {
    let mut out = vec![load_feeder(&data("two_node.td")).unwrap()];
    let mut paths: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "td"))
        .collect();
    paths.sort();
    for p in paths {
        out.push(load_feeder(&p).unwrap());
    }
    for seed in 0..4 {
        out.push(synth_feeder(&SynthSpec::new(10, 1.2, 0.4, 12.47, seed)).unwrap());
    }
    out.push(synth_feeder(&SynthSpec::new(7, 2.0, 0.5, 4.16, 11)).unwrap());
    out
}

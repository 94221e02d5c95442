//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pnpmpc::geometry::HPolytope;
use pnpmpc::netmodel::{MatchedMap, SubsystemModel};

pub fn combos(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Vertices of `{x : A x <= b}` by solving every square subsystem.
pub fn vertices(p: &HPolytope) -> Vec<DVector<f64>> {
    let a = p.normals();
    let b = p.offsets();
    let n = a.ncols();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for rows in combos(a.nrows(), n) {
        let mut m = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for (i, &row) in rows.iter().enumerate() {
            m.set_row(i, &a.row(row));
            r[i] = b[row];
        }
        if m.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(x) = m.lu().solve(&r) else { continue };
        let slack = a * &x - b;
        if slack.iter().all(|s| *s <= 1e-9) && !out.iter().any(|v| (v - &x).amax() < 1e-9) {
            out.push(x);
        }
    }
    out
}

pub fn support_by_vertices(vs: &[DVector<f64>], d: &DVector<f64>) -> f64 {
    vs.iter().map(|v| v.dot(d)).fold(f64::NEG_INFINITY, f64::max)
}

/// `min ½x'Gx + a'x  s.t.  C x >= b` by enumerating active sets.
pub fn qp_by_enumeration(g: &DMatrix<f64>, a: &DVector<f64>, c: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let n = g.nrows();
    let m = c.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for k in 0..=n.min(m) {
        for set in combos(m, k) {
            let dim = n + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(g);
            for i in 0..n {
                rhs[i] = -a[i];
            }
            for (j, &row) in set.iter().enumerate() {
                for i in 0..n {
                    kkt[(i, n + j)] = -c[(row, i)];
                    kkt[(n + j, i)] = c[(row, i)];
                }
                rhs[n + j] = b[row];
            }
            if kkt.determinant().abs() < 1e-14 {
                continue;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let lam = sol.rows(n, k);
            let feasible = (c * &x - b).iter().all(|s| *s >= -1e-9);
            if !feasible || lam.iter().any(|l| *l < -1e-9) {
                continue;
            }
            let f = 0.5 * x.dot(&(g * &x)) + a.dot(&x);
            if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
    }
    best
}

/// Unstable scalar subsystem with one scalar parent.
pub fn scalar_model(a: f64, coupling: f64) -> (SubsystemModel, BTreeMap<usize, HPolytope>) {
    let model = SubsystemModel {
        id: 1,
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, 1.0),
        matched: MatchedMap::Unit,
        coupling: DMatrix::from_element(1, 1, coupling),
        exogenous: None,
        x_set: HPolytope::symmetric_box(&[1.0]).unwrap(),
        u_set: HPolytope::symmetric_box(&[1.0]).unwrap(),
        o_set: HPolytope::symmetric_box(&[0.01]).unwrap(),
        parents: vec![2],
        children: vec![2],
        psi_layout: vec![(2, 0)],
    };
    let mut parents = BTreeMap::new();
    parents.insert(2, HPolytope::symmetric_box(&[1.0]).unwrap());
    (model, parents)
}

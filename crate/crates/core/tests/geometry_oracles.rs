mod common;

use common::{support_by_vertices, vertices};
use nalgebra::{DMatrix, DVector};
use pnpmpc::geometry::{parse_set_spec, HPolytope};
use proptest::prelude::*;

fn zono(n: usize, center: Vec<f64>, gens: Vec<f64>) -> HPolytope {
    let k = gens.len() / n;
    HPolytope::zonotope(DVector::from_vec(center), DMatrix::from_column_slice(n, k, &gens[..n * k])).unwrap()
}

fn zono_strategy(n: usize) -> impl Strategy<Value = HPolytope> {
    (
        prop::collection::vec(-1.0..1.0f64, n),
        prop::collection::vec(-1.0..1.0f64, n * (n + 1)..=n * (n + 2)),
    )
        .prop_map(move |(c, mut g)| {
            // Full-dimensional: add a small box.
            for i in 0..n {
                let mut col = vec![0.0; n];
                col[i] = 0.2;
                g.extend(col);
            }
            zono(n, c, g)
        })
}

fn dirs(n: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), 8).prop_map(|v| v.into_iter().map(DVector::from_vec).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn support_matches_vertex_enumeration(p in zono_strategy(3), ds in dirs(3)) {
        let vs = vertices(&p);
        for d in &ds {
            let s = p.support_value(d).unwrap();
            let o = support_by_vertices(&vs, d);
            prop_assert!((s - o).abs() <= 1e-9 * (1.0 + o.abs()), "{s} vs {o}");
        }
    }

    #[test]
    fn minkowski_sum_adds_supports(a in zono_strategy(2), b in zono_strategy(2), ds in dirs(2)) {
        let sum = a.minkowski_sum(&b).unwrap();
        let va = vertices(&a);
        let vb = vertices(&b);
        let vs = vertices(&sum.clone().into_general());
        for d in &ds {
            let expect = support_by_vertices(&va, d) + support_by_vertices(&vb, d);
            let got = support_by_vertices(&vs, d);
            prop_assert!((expect - got).abs() <= 1e-9 * (1.0 + expect.abs()), "{expect} vs {got}");
        }
    }

    #[test]
    fn pontryagin_difference_is_sound_and_tight(a in zono_strategy(2), s in 0.05..0.4f64) {
        let b = HPolytope::symmetric_box(&[s, s / 2.0]).unwrap();
        let Some(d) = a.pontryagin_diff(&b).unwrap() else { return Ok(()) };
        let vd = vertices(&d);
        let vb = vertices(&b);
        for x in &vd {
            for w in &vb {
                prop_assert!(a.max_violation(&(x + w)) <= 1e-9);
            }
        }
        // Each facet of A is reached by D ⊕ B.
        for r in 0..a.num_halfspaces() {
            let n: DVector<f64> = a.normals().row(r).transpose();
            let lhs = support_by_vertices(&vd, &n) + support_by_vertices(&vb, &n);
            prop_assert!(lhs <= a.offsets()[r] + 1e-9);
        }
    }

    #[test]
    fn linear_map_transforms_supports(p in zono_strategy(2), m in prop::collection::vec(-2.0..2.0f64, 4), ds in dirs(2)) {
        let mm = DMatrix::from_row_slice(2, 2, &m) + DMatrix::identity(2, 2) * 2.5;
        let img = p.linear_map(&mm).unwrap();
        let vp = vertices(&p);
        let vi = vertices(&img.clone().into_general());
        for d in &ds {
            let expect = support_by_vertices(&vp, &(mm.transpose() * d));
            let got = support_by_vertices(&vi, d);
            prop_assert!((expect - got).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn containment_agrees_with_vertices(a in zono_strategy(2), b in zono_strategy(2)) {
        let by_vertices = vertices(&b).iter().all(|v| a.max_violation(v) <= 1e-9);
        prop_assert_eq!(a.contains(&b).unwrap(), by_vertices);
    }

    #[test]
    fn spec_round_trip_keeps_the_set(p in zono_strategy(3), ds in dirs(3)) {
        let q = p.to_spec().build().unwrap();
        for d in &ds {
            prop_assert!((p.support_value(d).unwrap() - q.support_value(d).unwrap()).abs() <= 1e-12);
        }
    }
}

#[test]
fn box_support_hand_value() {
    let b = HPolytope::symmetric_box(&[3.0, 2.0]).unwrap();
    let d = DVector::from_vec(vec![1.0, -1.0]);
    assert!((b.support_value(&d).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn set_spec_text_parses() {
    let p = parse_set_spec("type = \"box\"\ncenter = [1.0]\nhalf_widths = [0.5]\n").unwrap();
    let i = p.coord_interval(0).unwrap();
    assert!((i.lo - 0.5).abs() < 1e-12 && (i.hi - 1.5).abs() < 1e-12);
    assert!(parse_set_spec("type = \"box\"\ncenter = [1.0]\n").is_err());
    assert!(parse_set_spec("type = \"hpoly\"\nnormals = [[1.0], [1.0, 2.0]]\noffsets = [1.0, 1.0]\n").is_err());
}

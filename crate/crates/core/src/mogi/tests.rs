use proptest::prelude::*;

use super::*;
use crate::diffcore::{finite_difference, grads_close};

fn one_station(x_km: f64, y_km: f64) -> StationGeometry {
    StationGeometry::new(vec![Station {
        id: "A".into(),
        x_km,
        y_km,
    }])
    .unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

#[test]
fn rescale_depth_endpoints_and_midpoint() {
    let b = VariableBounds::default();
    let depth = |e: f64| rescale(&[0.5, 0.5, e, 0.5], &b).unwrap().depth;
    assert_eq!(depth(0.0), 2.0);
    assert_eq!(depth(1.0), 20.0);
    assert_eq!(depth(0.5), 11.0);
}

#[test]
fn rescale_rejects_out_of_range() {
    let err = rescale(&[0.5, 1.2, 0.5, 0.5], &VariableBounds::default()).unwrap_err();
    assert!(matches!(err, Error::OutOfUnitRange { index: 1, .. }));
}

#[test]
fn zero_volume_change_gives_zero_field() {
    let geom = StationGeometry::default_layout(12, &VariableBounds::default(), 3).unwrap();
    let f = mogi_forward(&MogiParams::new(1.0, 2.0, 7.0, 0.0), &geom);
    assert!(f.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn station_above_source() {
    let p = MogiParams::new(1.5, -2.0, 9.35, 3.7e6);
    let f = mogi_forward(&p, &one_station(1.5, -2.0));
    assert_eq!(f.east[0], 0.0);
    assert_eq!(f.north[0], 0.0);
    let expected = 1e3 * p.strength() / (9350.0 * 9350.0);
    assert!(rel_close(f.up[0], expected, 1e-14));
    // Independent evaluation: 10.1039 mm of uplift.
    assert!((f.up[0] - 10.103919862278236).abs() < 1e-9);
}

#[test]
fn closed_form_example_five_km_east() {
    // Frozen from an independent script: α = 3e6/π, R = 11180.34 m.
    let f = mogi_forward(&MogiParams::new(0.0, 0.0, 10.0, 4e6), &one_station(5.0, 0.0));
    assert!(rel_close(f.east[0], 3.4164602084024494, 1e-12), "{}", f.east[0]);
    assert_eq!(f.north[0], 0.0);
    assert!(rel_close(f.up[0], 6.832920416804899, 1e-12), "{}", f.up[0]);
}

#[test]
fn east_displacement_derivative_in_depth_matches_finite_difference() {
    let geom = one_station(4.0, 1.0);
    let base = MogiParams::new(0.5, -0.5, 8.0, 2e6);
    let jac = mogi_jacobian(&base, &geom);
    let fd = finite_difference(
        |t| {
            let mut p = base;
            p.depth = t.item();
            mogi_forward(&p, &geom).east[0]
        },
        &Tensor::scalar(base.depth),
        None,
    )
    .unwrap();
    assert!(rel_close(jac.get(0, 2), fd.item(), 1e-5));
}

#[test]
fn jacobian_volume_column_is_field_over_volume() {
    let geom = StationGeometry::default_layout(12, &VariableBounds::default(), 9).unwrap();
    let p = MogiParams::new(2.0, 1.0, 6.0, -3e6);
    let u = mogi_forward(&p, &geom).to_vec();
    let jac = mogi_jacobian(&p, &geom);
    for (j, &uj) in u.iter().enumerate() {
        assert!(rel_close(jac.get(j, 3), uj / p.dv, 1e-12));
    }
}

#[test]
fn jacobian_matches_finite_differences_on_symmetric_layout() {
    // Four stations symmetric about the source.
    let geom = StationGeometry::new(
        [(5.0, 0.0), (-5.0, 0.0), (0.0, 5.0), (0.0, -5.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Station {
                id: format!("S{i}"),
                x_km: x,
                y_km: y,
            })
            .collect(),
    )
    .unwrap();
    let p = MogiParams::new(0.0, 0.0, 10.0, 4e6);
    let jac = mogi_jacobian(&p, &geom);
    let x0 = Tensor::vector(p.as_array().to_vec());
    for j in 0..geom.obs_dim() {
        let fd = finite_difference(
            |t| {
                let d = t.data();
                mogi_forward(&MogiParams::new(d[0], d[1], d[2], d[3]), &geom).to_vec()[j]
            },
            &x0,
            None,
        )
        .unwrap();
        let row = Tensor::vector((0..4).map(|k| jac.get(j, k)).collect());
        assert!(grads_close(&row, &fd, 1e-5, 1e-9), "row {j}: {:?} vs {:?}", row.data(), fd.data());
    }
}

#[test]
fn taped_forward_and_gradient_match_closed_form() {
    let bounds = VariableBounds::default();
    let geom = StationGeometry::default_layout(12, &bounds, 1).unwrap();
    let etas = [[0.3, 0.6, 0.4, 0.8], [0.5, 0.5, 0.5, 0.5], [0.9, 0.1, 0.05, 0.2]];
    let mut tape = Tape::new();
    let eta = tape.leaf(Tensor::from_rows(&etas.map(|e| e.to_vec())));
    let xf = mogi_forward_tape(&mut tape, eta, &bounds, &geom, DEFAULT_POISSON);
    for (i, e) in etas.iter().enumerate() {
        let u = mogi_forward(&rescale(e, &bounds).unwrap(), &geom).to_vec();
        for (j, &uj) in u.iter().enumerate() {
            assert!((tape.value(xf).get(i, j) - uj).abs() <= 1e-12 * uj.abs().max(1e-3));
        }
    }
    // d(sum of every row's east block)/d eta: row i only sees its own jacobian
    let east = tape.slice_cols(xf, 0, geom.len());
    let loss = tape.sum(east);
    let grads = tape.backward(loss).unwrap().wrt(eta);
    let span = bounds.span();
    for (i, e) in etas.iter().enumerate() {
        let jac = mogi_jacobian(&rescale(e, &bounds).unwrap(), &geom);
        for k in 0..4 {
            let want: f64 = (0..geom.len()).map(|j| jac.get(j, k)).sum::<f64>() * span[k];
            assert!(rel_close(grads.get(i, k), want, 1e-9), "{i},{k}: {} vs {want}", grads.get(i, k));
        }
    }
}

#[test]
fn geometry_csv_roundtrip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stations.csv");
    let geom = StationGeometry::default_layout(12, &VariableBounds::default(), 4).unwrap();
    geom.write_csv(&path).unwrap();
    assert_eq!(StationGeometry::read_csv(&path).unwrap(), geom);

    std::fs::write(&path, "station,x_km,y_km\nA,0,0\nA,1,1\n").unwrap();
    assert!(StationGeometry::read_csv(&path).is_err());
    std::fs::write(&path, "name,x,y\nA,0,0\n").unwrap();
    assert!(StationGeometry::read_csv(&path).is_err());
}

#[test]
fn default_layout_is_inside_box_and_seeded() {
    let b = VariableBounds::default();
    let g = StationGeometry::default_layout(12, &b, 42).unwrap();
    assert_eq!(g.obs_dim(), 36);
    for s in g.stations() {
        assert!((b.x_m[0]..=b.x_m[1]).contains(&s.x_km));
        assert!((b.y_m[0]..=b.y_m[1]).contains(&s.y_km));
    }
    assert_eq!(g, StationGeometry::default_layout(12, &b, 42).unwrap());
    assert_ne!(g, StationGeometry::default_layout(12, &b, 43).unwrap());
}

#[test]
fn unknown_variable_lists_valid_names() {
    let err = "pressure".parse::<Variable>().unwrap_err();
    assert!(err.to_string().contains("x_m, y_m, depth, dv"));
}

fn unit_std(geom: &StationGeometry) -> Vec<f64> {
    vec![1.0; geom.obs_dim()]
}

#[test]
fn sensitivity_constant_along_volume_axis() {
    let bounds = VariableBounds::default();
    let geom = StationGeometry::default_layout(12, &bounds, 2).unwrap();
    let grid = GridSpec {
        sweeps: vec![(Variable::DeltaV, bounds.dv, 9)],
        fixed: MogiParams::new(2.0, 0.5, 9.35, 0.0),
    };
    let table = sensitivity_profile(&bounds, &geom, &grid, &unit_std(&geom)).unwrap();
    assert_eq!(table.rows.len(), 9 * 36);
    for j in 0..36 {
        let vals: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.output_dim == j)
            .map(|r| r.grads[0])
            .collect();
        assert!(vals.iter().all(|&v| v == vals[0]));
    }
}

#[test]
fn sensitivity_vertical_gradient_decays_with_depth_above_source() {
    let bounds = VariableBounds::default();
    let geom = one_station(0.0, 0.0);
    let grid = GridSpec {
        sweeps: vec![(Variable::Depth, [4.0, 8.0], 2)],
        fixed: MogiParams::new(0.0, 0.0, 0.0, 3.7e6),
    };
    let table = sensitivity_profile(&bounds, &geom, &grid, &[1.0; 3]).unwrap();
    let up: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| r.output_dim == 2)
        .map(|r| r.grads[0].abs())
        .collect();
    assert!(up[1] < up[0]);
    // u_v = α/d² above the source, so ∂u_v/∂d = −2α/d³ (mm per km here).
    let alpha = MogiParams::new(0.0, 0.0, 4.0, 3.7e6).strength();
    let want = 2.0 * alpha * 1e3 / (4.0e3f64).powi(3) * 1e3 * bounds.span()[2];
    assert!(rel_close(up[0], want, 1e-12));
}

#[test]
fn sensitivity_equals_chain_ruled_jacobian() {
    let bounds = VariableBounds::default();
    let geom = StationGeometry::default_layout(12, &bounds, 8).unwrap();
    let std: Vec<f64> = (0..36).map(|j| 0.5 + j as f64 * 0.1).collect();
    let grid = GridSpec {
        sweeps: vec![(Variable::XM, [-2.0, 4.0], 3), (Variable::Depth, [3.0, 15.0], 4)],
        fixed: MogiParams::new(0.0, 1.0, 9.0, 3.7e6),
    };
    let table = sensitivity_profile(&bounds, &geom, &grid, &std).unwrap();
    assert_eq!(table.rows.len(), 12 * 36);
    let span = bounds.span();
    for row in &table.rows {
        let p = MogiParams::new(row.coords[0], 1.0, row.coords[1], 3.7e6);
        let jac = mogi_jacobian(&p, &geom);
        let j = row.output_dim;
        assert!((row.grads[0] - jac.get(j, 0) * span[0] / std[j]).abs() <= 1e-10);
        assert!((row.grads[1] - jac.get(j, 2) * span[2] / std[j]).abs() <= 1e-10);
    }
}

fn source_strategy() -> impl Strategy<Value = MogiParams> {
    let b = VariableBounds::default();
    (
        b.x_m[0]..b.x_m[1],
        b.y_m[0]..b.y_m[1],
        b.depth[0]..b.depth[1],
        b.dv[0]..b.dv[1],
    )
        .prop_map(|(x, y, d, v)| MogiParams::new(x, y, d, v))
}

fn stations_strategy() -> impl Strategy<Value = StationGeometry> {
    prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 1..16).prop_map(|xy| {
        StationGeometry::new(
            xy.into_iter()
                .enumerate()
                .map(|(i, (x, y))| Station {
                    id: format!("P{i}"),
                    x_km: x,
                    y_km: y,
                })
                .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn field_is_linear_in_volume(p in source_strategy(), geom in stations_strategy(), k in -4.0f64..4.0) {
        let base = mogi_forward(&p, &geom).to_vec();
        let mut scaled = p;
        scaled.dv *= k;
        let out = mogi_forward(&scaled, &geom).to_vec();
        for (a, b) in out.iter().zip(&base) {
            prop_assert!((a - k * b).abs() <= 1e-12 * b.abs().max(1e-9) * k.abs().max(1.0));
        }
    }

    #[test]
    fn rotation_about_source_rotates_horizontal_field(
        p in source_strategy(), geom in stations_strategy(), theta in 0.0f64..std::f64::consts::TAU
    ) {
        let (s, c) = theta.sin_cos();
        let rotated = StationGeometry::new(
            geom.stations().iter().map(|st| {
                let (dx, dy) = (st.x_km - p.x_m, st.y_km - p.y_m);
                Station { id: st.id.clone(), x_km: p.x_m + c * dx - s * dy, y_km: p.y_m + s * dx + c * dy }
            }).collect()
        ).unwrap();
        let a = mogi_forward(&p, &geom);
        let b = mogi_forward(&p, &rotated);
        for i in 0..geom.len() {
            let (e, n) = (c * a.east[i] - s * a.north[i], s * a.east[i] + c * a.north[i]);
            prop_assert!((b.east[i] - e).abs() < 1e-12);
            prop_assert!((b.north[i] - n).abs() < 1e-12);
            prop_assert!((b.up[i] - a.up[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn inflation_points_radially_outward(p in source_strategy(), geom in stations_strategy()) {
        let mut p = p;
        p.dv = p.dv.abs().max(1e3);
        let f = mogi_forward(&p, &geom);
        for (i, st) in geom.stations().iter().enumerate() {
            let (dx, dy) = (st.x_km - p.x_m, st.y_km - p.y_m);
            if dx.hypot(dy) > 1e-9 {
                prop_assert!(f.east[i] * dx + f.north[i] * dy > 0.0);
            }
            prop_assert!(f.up[i] > 0.0);
        }
    }

    #[test]
    fn magnitude_decays_with_horizontal_distance(p in source_strategy(), r1 in 0.0f64..40.0, dr in 0.01f64..10.0, dir in 0.0f64..std::f64::consts::TAU) {
        prop_assume!(p.dv.abs() > 1.0);
        let at = |r: f64| {
            let g = one_station(p.x_m + r * dir.cos(), p.y_m + r * dir.sin());
            let f = mogi_forward(&p, &g);
            (f.east[0].powi(2) + f.north[0].powi(2) + f.up[0].powi(2)).sqrt()
        };
        prop_assert!(at(r1 + dr) < at(r1));
    }

    #[test]
    fn rescale_is_affine_and_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let bounds = VariableBounds::default();
        let za = rescale(&[a; 4], &bounds).unwrap().as_array();
        let zb = rescale(&[b; 4], &bounds).unwrap().as_array();
        let mid = rescale(&[0.5; 4], &bounds).unwrap().as_array();
        for k in 0..4 {
            let [lo, hi] = bounds.get(Variable::ALL[k]);
            prop_assert!((mid[k] - 0.5 * (lo + hi)).abs() < 1e-9 * hi.abs().max(1.0));
            if a < b { prop_assert!(za[k] < zb[k]); }
        }
        let lo = rescale(&[0.0; 4], &bounds).unwrap();
        let hi = rescale(&[1.0; 4], &bounds).unwrap();
        prop_assert_eq!(lo.as_array(), bounds.lower());
        prop_assert_eq!(hi.as_array(), Variable::ALL.map(|v| bounds.get(v)[1]));
    }

    #[test]
    fn jacobian_is_finite_inside_bounds(p in source_strategy()) {
        let geom = StationGeometry::default_layout(12, &VariableBounds::default(), 5).unwrap();
        prop_assert!(mogi_jacobian(&p, &geom).all_finite());
    }
}

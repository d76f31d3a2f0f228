use bevtrack_core::geometry::{
    ground_homography, ground_to_image, image_to_ground, project_world_to_image, projection_matrix,
    CameraCalibration, GroundGrid, WorldPoint,
};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

/// Camera at `center` looking at `target` on the ground, rolled by `roll`.
fn look_at(center: Vector3<f64>, target: Vector3<f64>, roll: f64, f: f64) -> CameraCalibration {
    let forward = (target - center).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let base = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), roll).matrix() * base;
    let k = Matrix3::new(f, 0.5, 960.0, 0.0, f * 1.02, 540.0, 0.0, 0.0, 1.0);
    CameraCalibration::new(0, k, r, -(r * center), (1080, 1920)).unwrap()
}

fn camera() -> impl Strategy<Value = CameraCalibration> {
    (
        -10.0..10.0f64,
        -10.0..10.0f64,
        2.0..12.0f64,
        -5.0..5.0f64,
        -5.0..5.0f64,
        -0.5..0.5f64,
        300.0..2000.0f64,
    )
        .prop_map(|(cx, cy, cz, tx, ty, roll, f)| {
            look_at(Vector3::new(cx, cy, cz), Vector3::new(tx + cx * 0.1, ty, 0.0), roll, f)
        })
}

proptest! {
    #[test]
    fn projection_matrix_matches_expansion(c in camera()) {
        let p = projection_matrix(&c);
        for i in 0..3 {
            for j in 0..4 {
                let rt = |k: usize| if j < 3 { c.r[(k, j)] } else { c.t[k] };
                let want: f64 = (0..3).map(|k| c.k[(i, k)] * rt(k)).sum();
                prop_assert!((p[(i, j)] - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn homography_agrees_with_pinhole(c in camera(), pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 100)) {
        let h = ground_homography(&c).unwrap();
        for (x, y) in pts {
            let p = project_world_to_image(&c, WorldPoint::ground(x, y)).unwrap();
            let (u, v) = ground_to_image(&h, x, y).unwrap();
            prop_assert!((p.u - u).abs() <= 1e-12 && (p.v - v).abs() <= 1e-12);
            if p.in_front() && c.contains_pixel(p.u, p.v) {
                let (xb, yb) = image_to_ground(&h, p.u, p.v).unwrap();
                prop_assert!((xb - x).abs() < 1e-9 && (yb - y).abs() < 1e-9, "({x}, {y}) -> ({xb}, {yb})");
            }
        }
    }

    #[test]
    fn random_homography_round_trip(
        m in prop::array::uniform9(-1.0..1.0f64),
        x in -5.0..5.0f64,
        y in -5.0..5.0f64,
    ) {
        let h = Matrix3::from_row_slice(&m) + Matrix3::identity() * 2.0;
        prop_assume!(h.determinant().abs() > 0.1);
        prop_assume!((h * Vector3::new(x, y, 1.0)).z.abs() > 0.1);
        let (u, v) = ground_to_image(&h, x, y).unwrap();
        prop_assume!(u.abs() < 1e3 && v.abs() < 1e3);
        let (xb, yb) = image_to_ground(&h, u, v).unwrap();
        prop_assert!((xb - x).abs() < 1e-9 && (yb - y).abs() < 1e-9);
    }

    #[test]
    fn locate_inverts_position(x in 0.0..11.9f64, y in 0.0..35.9f64) {
        let g = GroundGrid::wildtrack();
        let (cell, sub) = g.locate(x, y).unwrap();
        let (xb, yb) = g.position(cell, sub);
        prop_assert!((xb - x).abs() < 1e-9 && (yb - y).abs() < 1e-9);
        prop_assert_eq!(g.world_to_grid(x, y), Some(cell));
    }
}

#[test]
fn snapping_handles_exact_multiples() {
    let g = GroundGrid::new((0.0, 0.0), 0.4, 100, 100).unwrap();
    assert_eq!(g.world_to_grid(1.2, 2.0).map(|c| (c.row, c.col)), Some((3, 5)));
}

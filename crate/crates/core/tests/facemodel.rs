mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use diffcore::Tensor;
use facefill::facemodel::{canonical_quat, decode_pose, project_landmarks, Pose, PoseT};
use proptest::prelude::*;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn unit_coefficient_adds_one_basis_vector() {
    let m = common::model();
    let mut c = vec![0.0; m.num_coeffs()];
    c[0] = 1.0;
    let s = m.assemble_shape(&c).unwrap();
    for v in 0..m.num_vertices() {
        for a in 0..3 {
            assert_eq!(s[v][a], m.mean_shape[v][a] + m.shape_basis[3 * v + a]);
        }
    }
}

#[test]
fn assemble_matches_dense_product() {
    let m = common::model();
    let mut r = common::rng(1);
    let c: Vec<f64> = (0..m.num_coeffs()).map(|_| r.gen_range(-2.0..2.0)).collect();
    let s = m.assemble_shape(&c).unwrap();
    let n = 3 * m.num_vertices();
    for i in 0..n {
        let mut acc = m.mean_shape[i / 3][i % 3];
        for (k, ck) in c.iter().enumerate() {
            let b = if k < m.d_shape { m.shape_basis[k * n + i] } else { m.expr_basis[(k - m.d_shape) * n + i] };
            acc += ck * b;
        }
        assert!(close(s[i / 3][i % 3], acc, 1e-6));
    }
    let t = m.assemble_shape_t(&Tensor::<f64>::from_vec(c, &[1, m.num_coeffs()]).unwrap()).unwrap();
    for (i, v) in t.data().iter().enumerate() {
        assert!(close(*v, s[i / 3][i % 3], 1e-9));
    }
}

#[test]
fn assemble_rejects_wrong_length() {
    let m = common::model();
    assert!(m.assemble_shape(&[0.0; 3]).is_err());
}

proptest! {
    #[test]
    fn assemble_is_affine(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let m = common::model();
        let mut r = common::rng(seed);
        let c1: Vec<f64> = (0..m.num_coeffs()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c2: Vec<f64> = (0..m.num_coeffs()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let (s1, s2, s) = (m.assemble_shape(&c1).unwrap(), m.assemble_shape(&c2).unwrap(), m.assemble_shape(&mix).unwrap());
        for v in 0..m.num_vertices() {
            for k in 0..3 {
                let rhs = a * s1[v][k] + b * s2[v][k] - (a + b - 1.0) * m.mean_shape[v][k];
                prop_assert!(close(s[v][k], rhs, 1e-6));
            }
        }
    }

    #[test]
    fn quaternion_is_unit_and_canonical(yaw in -3.0f64..3.0, roll in -3.0f64..3.0, pitch in -3.0f64..3.0) {
        let q = Pose { yaw, roll, pitch, ..Pose::identity() }.quaternion();
        prop_assert!(close(q.iter().map(|v| v * v).sum::<f64>(), 1.0, 1e-9));
        prop_assert!(q[0] >= 0.0);
        prop_assert_eq!(canonical_quat(q.map(|v| -v)), canonical_quat(q));
    }

    #[test]
    fn quaternion_rotates_like_the_matrix(yaw in -3.0f64..3.0, roll in -3.0f64..3.0, pitch in -3.0f64..3.0) {
        let pose = Pose { yaw, roll, pitch, ..Pose::identity() };
        let [w, x, y, z] = pose.quaternion();
        let r = pose.rotation();
        let qm = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(close(r[i][j], qm[i][j], 1e-9));
            }
        }
    }
}

#[test]
fn decode_pose_examples() {
    let p = decode_pose(&[0.0; 6], 40.0, 112);
    assert_eq!((p.s, p.yaw, p.roll, p.pitch, p.t), (40.0, 0.0, 0.0, 0.0, [0.0, 0.0]));
    let p = decode_pose(&[0.0, 1.0 - 1e-12, 0.0, 0.0, 0.0, 0.0], 40.0, 112);
    assert!(close(p.yaw, FRAC_PI_2, 1e-9));
    let p = decode_pose(&[0.0, 0.0, 0.0, 0.0, 0.5, 0.0], 40.0, 64);
    assert_eq!(p.t[0], 32.0);
    let raw = [0.3, -0.2, 0.1, 0.05, 0.4, 0.6];
    let back = decode_pose(&raw, 40.0, 112).to_raw(40.0, 112);
    for (a, b) in raw.iter().zip(back) {
        assert!(close(*a, b, 1e-12));
    }
}

#[test]
fn camera_examples() {
    let id = Pose::identity();
    assert_eq!(id.project([0.3, -0.7, 5.0]), [0.3, -0.7]);
    assert_eq!(id.camera_matrix(), [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
    let p = Pose { s: 2.0, t: [3.0, 4.0], ..Pose::identity() };
    assert_eq!(p.project([1.0, 1.0, 5.0]), [5.0, 6.0]);
    let yawed = Pose { yaw: FRAC_PI_2, ..Pose::identity() };
    assert!(yawed.project([1.0, 0.0, 0.0])[0].abs() < 1e-12);
}

#[test]
fn rotation_matches_composed_axis_matrices() {
    let (yaw, roll, pitch): (f64, f64, f64) = (0.4, -0.3, 0.2);
    let ry = [[yaw.cos(), 0.0, yaw.sin()], [0.0, 1.0, 0.0], [-yaw.sin(), 0.0, yaw.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, pitch.cos(), -pitch.sin()], [0.0, pitch.sin(), pitch.cos()]];
    let rz = [[roll.cos(), -roll.sin(), 0.0], [roll.sin(), roll.cos(), 0.0], [0.0, 0.0, 1.0]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    };
    let want = mul(rz, mul(rx, ry));
    let got = Pose { yaw, roll, pitch, ..Pose::identity() }.rotation();
    for i in 0..3 {
        for j in 0..3 {
            assert!(close(got[i][j], want[i][j], 1e-12));
        }
    }
}

#[test]
fn half_turn_about_z_quaternion_distance() {
    let a = Pose::identity().quaternion();
    let b = Pose { roll: PI, ..Pose::identity() }.quaternion();
    let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    assert!(close(d, 2.0, 1e-12));
}

#[test]
fn landmark_projection() {
    let m = common::model();
    let s = common::mean_shape();
    let id = project_landmarks(m, &s, &Pose::identity());
    for (l, &v) in id.iter().zip(&m.landmarks) {
        assert_eq!(*l, [s[v][0], s[v][1]]);
    }
    let moved = project_landmarks(m, &s, &Pose { t: [7.0, -2.0], ..Pose::identity() });
    for (a, b) in moved.iter().zip(&id) {
        assert!(close(a[0], b[0] + 7.0, 1e-12) && close(a[1], b[1] - 2.0, 1e-12));
    }
    let mut r = common::rng(5);
    let pose = common::rand_pose(m, 112, &mut r);
    let mat = pose.camera_matrix();
    for (l, &v) in project_landmarks(m, &s, &pose).iter().zip(&m.landmarks) {
        for row in 0..2 {
            let o = mat[row][0] * s[v][0] + mat[row][1] * s[v][1] + mat[row][2] * s[v][2] + mat[row][3];
            assert!(close(l[row], o, 1e-9));
        }
    }
}

#[test]
fn mirrored_pose_mirrors_projection() {
    let m = common::model();
    let s = common::mean_shape();
    let mut r = common::rng(6);
    let pose = common::rand_pose(m, 112, &mut r);
    let mp = pose.mirrored(112);
    for v in (0..m.num_vertices()).step_by(37) {
        let a = pose.project(s[v]);
        let b = mp.project(s[m.mirror_vertex[v]]);
        assert!(close(a[0], 112.0 - b[0], 1e-9) && close(a[1], b[1], 1e-9));
    }
}

#[test]
fn tensor_pose_matches_plain() {
    let m = common::model();
    let mut r = common::rng(7);
    let poses: Vec<Pose> = (0..3).map(|_| common::rand_pose(m, 112, &mut r)).collect();
    let pt = PoseT::<f64>::from_poses(&poses).unwrap();
    let s = common::mean_shape();
    let verts = m.mean_tensor::<f64>().broadcast_to(&[3, m.num_vertices(), 3]).unwrap();
    let proj = pt.project(&verts).unwrap();
    let q = pt.quaternion().unwrap();
    for (b, pose) in poses.iter().enumerate() {
        assert_eq!(pt.pose(b), *pose);
        for v in (0..m.num_vertices()).step_by(11) {
            let want = pose.project(s[v]);
            let o = (b * m.num_vertices() + v) * 2;
            assert!(close(proj.data()[o], want[0], 1e-9) && close(proj.data()[o + 1], want[1], 1e-9));
        }
        for (k, want) in pose.quaternion().iter().enumerate() {
            assert!(close(q.data()[4 * b + k], *want, 1e-12));
        }
    }
    let raw = Tensor::<f64>::from_f64(&poses[0].to_raw(40.0, 112), &[1, 6]).unwrap();
    let d = PoseT::decode(&raw, 40.0, 112).unwrap().pose(0);
    assert!(close(d.s, poses[0].s, 1e-9) && close(d.yaw, poses[0].yaw, 1e-12) && close(d.t[1], poses[0].t[1], 1e-9));
}

#[test]
fn assemble_and_projection_gradients() {
    let m = common::model();
    let mut r = common::rng(8);
    let coeffs = common::rand_t(&mut r, &[1, m.num_coeffs()], -1.0, 1.0);
    let raw = common::rand_t(&mut r, &[1, 6], -0.3, 0.3);
    let idx = m.landmark_index();
    common::check(&[coeffs, raw], &|_, _| false, None, |xs| {
        let verts = m.assemble_shape_t(&xs[0])?;
        let pose = PoseT::decode(&xs[1], m.s_ref(112), 112)?;
        Ok(pose.project(&verts)?.gather_rows(&idx)?.mul_scalar(0.01)?)
    });
    let raw = common::rand_t(&mut r, &[2, 6], -0.5, 0.5);
    common::check(&[raw], &|_, _| false, None, |xs| PoseT::decode(&xs[0], 40.0, 112)?.quaternion());
}

mod common;

use std::collections::HashMap;

use facefill::store::{
    generate_synthetic_model, load_image, read_container, save_image, write_container, Container, Entry, Image,
    SyntheticModelSpec,
};
use facefill::FaceError;
use proptest::prelude::*;
use rand::Rng;

fn is_container_err(r: facefill::Result<Container>, needle: &str) -> bool {
    matches!(r, Err(FaceError::Container(m)) if m.contains(needle))
}

#[test]
fn f32_entry_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.af3d");
    let mut c = Container::new();
    c.push(Entry::from_f32("x", &[2], &[1.0, 2.0]).unwrap()).unwrap();
    write_container(&path, &c).unwrap();
    let back = read_container(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.entries[0].data, [1.0f32.to_le_bytes(), 2.0f32.to_le_bytes()].concat());
}

#[test]
fn empty_container_is_valid() {
    let c = Container::new();
    let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
    assert!(back.entries.is_empty());
}

#[test]
fn corrupt_byte_fails_checksum() {
    let mut c = Container::new();
    c.push(Entry::from_f64("w", &[3], &[1.0, -2.0, 0.5]).unwrap()).unwrap();
    let mut bytes = c.to_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 8] ^= 0x40;
    assert!(is_container_err(Container::from_bytes(&bytes), "checksum"));
}

#[test]
fn header_and_length_errors() {
    let mut c = Container::new();
    c.push(Entry::from_u8("m", &[2, 2], &[0, 1, 2, 3]).unwrap()).unwrap();
    let bytes = c.to_bytes().unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(is_container_err(Container::from_bytes(&bad), "magic"));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(is_container_err(Container::from_bytes(&bad), "version"));

    assert!(is_container_err(Container::from_bytes(&bytes[..bytes.len() - 3]), "truncated"));

    let mut bad = bytes.clone();
    bad.push(0);
    assert!(is_container_err(Container::from_bytes(&bad), "trailing"));
}

#[test]
fn duplicate_and_malformed_entries_rejected() {
    let mut c = Container::new();
    c.push(Entry::from_i64("a", &[1], &[5]).unwrap()).unwrap();
    assert!(c.push(Entry::from_i64("a", &[1], &[6]).unwrap()).is_err());
    assert!(Entry::from_f32("b", &[3], &[1.0, 2.0]).is_err());
}

fn arb_entry() -> impl Strategy<Value = Entry> {
    (0u8..4, prop::collection::vec(1usize..4, 0..3), any::<u64>()).prop_map(|(code, shape, seed)| {
        let n: usize = shape.iter().product();
        let mut r = common::rng(seed);
        match code {
            0 => Entry::from_f32("e", &shape, &(0..n).map(|_| r.gen::<f32>()).collect::<Vec<_>>()),
            1 => Entry::from_f64("e", &shape, &(0..n).map(|_| r.gen::<f64>() * 1e6).collect::<Vec<_>>()),
            2 => Entry::from_u8("e", &shape, &(0..n).map(|_| r.gen::<u8>()).collect::<Vec<_>>()),
            _ => Entry::from_i64("e", &shape, &(0..n).map(|_| r.gen::<i64>()).collect::<Vec<_>>()),
        }
        .unwrap()
    })
}

proptest! {
    #[test]
    fn container_round_trip_is_bit_exact(entries in prop::collection::vec(arb_entry(), 0..6)) {
        let mut c = Container::new();
        for (i, mut e) in entries.into_iter().enumerate() {
            e.name = format!("t{i}");
            c.push(e).unwrap();
        }
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

fn write_png(path: &std::path::Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) {
    let file = std::fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(file, w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.write_header().unwrap().write_image_data(data).unwrap();
}

#[test]
fn png_known_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.png");
    let bytes = [0u8, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60];
    write_png(&path, 2, 2, png::ColorType::Rgb, png::BitDepth::Eight, &bytes);
    let img = load_image(&path).unwrap();
    assert_eq!((img.channels, img.height, img.width), (3, 2, 2));
    for (k, &b) in bytes.iter().enumerate() {
        let (px, c) = (k / 3, k % 3);
        assert_eq!(img.get(c, px / 2, px % 2), b as f32 / 255.0);
    }
}

#[test]
fn rgba_drops_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    write_png(&path, 1, 1, png::ColorType::Rgba, png::BitDepth::Eight, &[10, 20, 30, 0]);
    let img = load_image(&path).unwrap();
    assert_eq!(img.data, vec![10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
}

#[test]
fn png_round_trip_random_u8() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.png");
    let mut r = common::rng(3);
    let data: Vec<f32> = (0..3 * 5 * 7).map(|_| r.gen::<u8>() as f32 / 255.0).collect();
    let img = Image::from_data(3, 5, 7, data).unwrap();
    save_image(&path, &img).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);
}

#[test]
fn sixteen_bit_png_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.png");
    write_png(&path, 1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0; 6]);
    assert!(matches!(load_image(&path), Err(FaceError::Image(m)) if m.contains("bit depth")));
}

#[test]
fn missing_image_is_io_error() {
    assert!(matches!(load_image(std::path::Path::new("/nonexistent/x.png")), Err(FaceError::Io { .. })));
}

#[test]
fn model_is_deterministic() {
    let spec = SyntheticModelSpec::default();
    let a = generate_synthetic_model(&spec).unwrap();
    let b = generate_synthetic_model(&spec).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic_model(&SyntheticModelSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.shape_basis, c.shape_basis);
}

#[test]
fn mean_shape_is_mirror_symmetric() {
    let m = common::model();
    let key = |p: [f64; 3]| ((p[0] * 1e5).round() as i64, (p[1] * 1e5).round() as i64, (p[2] * 1e5).round() as i64);
    let mut index: HashMap<_, Vec<usize>> = HashMap::new();
    for (i, &p) in m.mean_shape.iter().enumerate() {
        index.entry(key(p)).or_default().push(i);
    }
    for (i, &p) in m.mean_shape.iter().enumerate() {
        let q = m.mean_shape[m.mirror_vertex[i]];
        assert!((q[0] + p[0]).abs() < 1e-6 && (q[1] - p[1]).abs() < 1e-6 && (q[2] - p[2]).abs() < 1e-6);
        // the pairing also exists without the stored table
        let found =
            m.mean_shape.iter().any(|o| (o[0] + p[0]).abs() < 1e-6 && (o[1] - p[1]).abs() < 1e-6 && (o[2] - p[2]).abs() < 1e-6);
        assert!(found, "vertex {i} has no mirror partner");
    }
}

#[test]
fn bases_are_mirror_symmetric() {
    let m = common::model();
    for k in 0..m.num_coeffs() {
        let row = m.basis_row(k);
        for v in 0..m.num_vertices() {
            let w = m.mirror_vertex[v];
            assert!((row[3 * v] + row[3 * w]).abs() < 1e-12);
            assert!((row[3 * v + 1] - row[3 * w + 1]).abs() < 1e-12);
            assert!((row[3 * v + 2] - row[3 * w + 2]).abs() < 1e-12);
        }
    }
}

#[test]
fn uv_flip_is_a_texel_permutation_of_the_surface() {
    let m = common::model();
    let (h, w) = (m.uv_height, m.uv_width);
    let point = |i: usize| -> [f64; 3] {
        let t = m.triangles[m.texel_tri[i].unwrap()];
        let b = m.texel_bary[i];
        let mut p = [0.0; 3];
        for k in 0..3 {
            for a in 0..3 {
                p[a] += b[k] * m.mean_shape[t[k]][a];
            }
        }
        p
    };
    for r in 0..h {
        for c in 0..w {
            let (i, j) = (r * w + c, r * w + w - 1 - c);
            assert_eq!(m.texel_tri[i].is_some(), m.texel_tri[j].is_some());
            let (p, q) = (point(i), point(j));
            assert!((p[0] + q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9 && (p[2] - q[2]).abs() < 1e-9);
        }
    }
    for (v, uv) in m.uv.iter().enumerate() {
        let u2 = m.uv[m.mirror_vertex[v]];
        assert!((uv[0] + u2[0] - (w - 1) as f64).abs() < 1e-9 && uv[1] == u2[1]);
    }
}

#[test]
fn texel_tables_are_valid() {
    let m = common::model();
    let nv = m.num_vertices();
    assert!(m.triangles.iter().flatten().all(|&v| v < nv));
    assert_eq!(m.texel_tri.len(), m.num_texels());
    for (t, b) in m.texel_tri.iter().zip(&m.texel_bary) {
        let t = t.expect("every texel is covered");
        assert!(t < m.triangles.len());
        assert!(b.iter().all(|&x| x >= 0.0));
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        // the texel's barycentric point reproduces its own UV position
        let tri = m.triangles[t];
        let u: f64 = (0..3).map(|k| b[k] * m.uv[tri[k]][0]).sum();
        let v: f64 = (0..3).map(|k| b[k] * m.uv[tri[k]][1]).sum();
        let i = m.texel_tri.iter().zip(&m.texel_bary).position(|x| std::ptr::eq(x.1, b)).unwrap();
        assert!((u - (i % m.uv_width) as f64).abs() < 1e-9 && (v - (i / m.uv_width) as f64).abs() < 1e-9);
    }
}

#[test]
fn landmarks_are_valid_distinct_and_stable() {
    let m = common::model();
    assert_eq!(m.landmarks.len(), 68);
    assert!(m.landmarks.iter().all(|&v| v < m.num_vertices()));
    let mut s = m.landmarks.clone();
    s.sort_unstable();
    s.dedup();
    assert_eq!(s.len(), 68);
    let again = generate_synthetic_model(&SyntheticModelSpec::default()).unwrap();
    assert_eq!(again.landmarks, m.landmarks);
}

#[test]
fn zero_coefficients_give_the_mean() {
    let m = common::model();
    assert_eq!(m.assemble_shape(&vec![0.0; m.num_coeffs()]).unwrap(), m.mean_shape);
}

#[test]
fn invalid_specs_rejected() {
    let spec = SyntheticModelSpec::default();
    assert!(generate_synthetic_model(&SyntheticModelSpec { vertex_count: 40, ..spec }).is_err());
    assert!(generate_synthetic_model(&SyntheticModelSpec { uv_width: 63, ..spec }).is_err());
    assert!(generate_synthetic_model(&SyntheticModelSpec { d_shape: 0, ..spec }).is_err());
    assert!(generate_synthetic_model(&SyntheticModelSpec { d_expr: 0, ..spec }).is_ok());
}

#[test]
fn model_container_round_trip() {
    let m = common::model();
    let c = m.to_container().unwrap();
    let back = facefill::facemodel::FaceModel::from_container(&Container::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(&back, m);
}

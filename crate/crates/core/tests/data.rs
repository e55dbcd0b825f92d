mod common;

use proptest::prelude::*;
use tqd::data::{
    decode_features, encode_features, gen_synthetic, read_features_csv, Dataset, DatasetManifest,
    LabelTransform, ManifestEntry, Split, SynthConfig,
};
use tqd::head::aggregate;
use tqd::tensor::Tensor;
use tqd::{Error, ErrorCategory};

fn small(seed: u64, noise: f64) -> SynthConfig {
    SynthConfig {
        n_train: 20,
        n_test: 5,
        clips: 6,
        dim: 16,
        noise_sigma: noise,
        seed,
    }
}

#[test]
fn known_bytes_decode_exactly() {
    let mut bytes = b"TQDF".to_vec();
    for v in [1u32, 2, 3] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in [1.0f32, -2.5, 0.125, 4.0, 5.5, -0.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let f = decode_features(&bytes).unwrap();
    assert_eq!(f.features.shape(), &[2, 3]);
    assert_eq!(f.features.data(), &[1.0, -2.5, 0.125, 4.0, 5.5, -0.0]);
    assert_eq!(f.label, None);
    bytes.extend_from_slice(b"LABL");
    bytes.extend_from_slice(&0.75f64.to_le_bytes());
    assert_eq!(decode_features(&bytes).unwrap().label, Some(0.75));
    assert_eq!(encode_features(&f.features, Some(0.75)).unwrap(), bytes);
}

#[test]
fn every_truncation_is_a_parse_error() {
    let t = Tensor::matrix(3, 4, (0..12).map(|i| i as f32 * 0.5).collect()).unwrap();
    let bytes = encode_features(&t, Some(0.3)).unwrap();
    for cut in 0..bytes.len() {
        // Cutting exactly at the end of the payload drops the optional
        // label section, which is still a valid file.
        if cut == 16 + 48 {
            assert!(decode_features(&bytes[..cut]).unwrap().label.is_none());
            continue;
        }
        match decode_features(&bytes[..cut]) {
            Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}

#[test]
fn malformed_headers_and_payloads_report_offsets() {
    let t = Tensor::matrix(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let good = encode_features(&t, None).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_features(&bad),
        Err(Error::Parse { offset: 0, .. })
    ));

    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(
        decode_features(&bad),
        Err(Error::Parse { offset: 4, .. })
    ));

    let mut bad = good.clone();
    bad[16 + 8..16 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        decode_features(&bad),
        Err(Error::Parse { offset: 24, .. })
    ));

    let mut bad = good.clone();
    bad.extend_from_slice(b"JUNK");
    assert!(matches!(
        decode_features(&bad),
        Err(Error::Parse { offset: 32, .. })
    ));

    // Declared shape larger than the payload never reshapes silently.
    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&3u32.to_le_bytes());
    assert!(matches!(decode_features(&bad), Err(Error::Parse { .. })));
    assert_eq!(
        decode_features(&bad).unwrap_err().category(),
        ErrorCategory::Data
    );
}

#[test]
fn csv_features_import() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    std::fs::write(&p, "a,b,c\n1,2,3\n4.5,-1,0\n").unwrap();
    let t = read_features_csv(&p).unwrap();
    assert_eq!(t.shape(), &[2, 3]);
    assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.5, -1.0, 0.0]);
    std::fs::write(&p, "a,b\n1,2\n3\n").unwrap();
    assert_eq!(
        read_features_csv(&p).unwrap_err().category(),
        ErrorCategory::Data
    );
    std::fs::write(&p, "a,b\n1,nan\n").unwrap();
    assert_eq!(
        read_features_csv(&p).unwrap_err().category(),
        ErrorCategory::Data
    );
}

#[test]
fn synthetic_labels_are_the_aggregate_of_planted_truth() {
    let syn = gen_synthetic(&small(3, 0.05)).unwrap();
    assert_eq!(syn.dataset.split(Split::Train).len(), 20);
    assert_eq!(syn.dataset.split(Split::Test).len(), 5);
    for s in &syn.dataset.samples {
        let t = s.truth.as_ref().unwrap();
        assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.qualities.iter().all(|q| (0.0..=1.0).contains(q)));
        assert!((0.0..=1.0).contains(&s.label));
        assert!((aggregate(&t.weights, &t.qualities).unwrap() - s.label).abs() < 1e-12);
        assert_eq!(s.features.shape(), &[6, 16]);
    }
}

#[test]
fn degenerate_generator_settings_are_config_errors() {
    for cfg in [
        SynthConfig {
            clips: 1,
            ..small(0, 0.0)
        },
        SynthConfig {
            dim: 4,
            ..small(0, 0.0)
        },
        SynthConfig {
            noise_sigma: -1.0,
            ..small(0, 0.0)
        },
    ] {
        assert_eq!(
            gen_synthetic(&cfg).err().unwrap().category(),
            ErrorCategory::Config
        );
    }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "features", "truth"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((
                p.strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn same_seed_writes_byte_identical_datasets() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    gen_synthetic(&small(11, 0.05))
        .unwrap()
        .dataset
        .write(a.path())
        .unwrap();
    gen_synthetic(&small(11, 0.05))
        .unwrap()
        .dataset
        .write(b.path())
        .unwrap();
    gen_synthetic(&small(12, 0.05))
        .unwrap()
        .dataset
        .write(c.path())
        .unwrap();
    let (ba, bb, bc) = (
        dir_bytes(a.path()),
        dir_bytes(b.path()),
        dir_bytes(c.path()),
    );
    assert_eq!(ba.len(), 1 + 25 + 25);
    assert_eq!(ba, bb);
    assert_ne!(ba, bc);
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let syn = gen_synthetic(&small(5, 0.05)).unwrap();
    syn.dataset.write(dir.path()).unwrap();
    let back = Dataset::load(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(back.manifest, syn.dataset.manifest);
    for (a, b) in back.samples.iter().zip(&syn.dataset.samples) {
        assert_eq!(a.features, b.features);
        assert_eq!(a.label.to_bits(), b.label.to_bits());
        // Truth goes through decimal text; shortest round-trip formatting
        // keeps it exact.
        assert_eq!(a.truth, b.truth);
    }
}

#[test]
fn load_rejects_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let syn = gen_synthetic(&small(5, 0.0)).unwrap();
    let mut ds = syn.dataset;
    ds.write(dir.path()).unwrap();
    ds.manifest.dim = 17;
    ds.manifest.write(&dir.path().join("manifest.txt")).unwrap();
    let e = Dataset::load(&dir.path().join("manifest.txt")).unwrap_err();
    assert_eq!(e.category(), ErrorCategory::Data);
}

/// Solves `(XᵀX + λI) β = Xᵀy` by Gaussian elimination with pivoting.
fn ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, piv);
        for r in c + 1..p {
            let f = a[r][c] / a[c][c];
            for k in c..=p {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut beta = vec![0.0; p];
    for c in (0..p).rev() {
        let s: f64 = (c + 1..p).map(|k| a[c][k] * beta[k]).sum();
        beta[c] = (a[c][p] - s) / a[c][c];
    }
    beta
}

fn r_squared(x: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(r, t)| (t - r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn noise_free_features_linearly_encode_planted_truth() {
    let cfg = SynthConfig {
        noise_sigma: 0.0,
        ..SynthConfig::default()
    };
    let syn = gen_synthetic(&cfg).unwrap();
    let mut x = Vec::new();
    let mut w = Vec::new();
    let mut q = Vec::new();
    for s in &syn.dataset.samples {
        let t = s.truth.as_ref().unwrap();
        for k in 0..s.clips() {
            let mut row: Vec<f64> = s.features.row(k).iter().map(|&v| v as f64).collect();
            row.push(1.0);
            x.push(row);
            w.push(t.weights[k]);
            q.push(t.qualities[k]);
        }
    }
    let bw = ridge(&x, &w, 1e-8);
    let bq = ridge(&x, &q, 1e-8);
    let (rw, rq) = (r_squared(&x, &w, &bw), r_squared(&x, &q, &bq));
    assert!(rw > 0.99 && rq > 0.99, "R² weights {rw}, qualities {rq}");
}

#[test]
fn label_normalization() {
    let entry = |id: &str, label: f64, split| ManifestEntry {
        id: id.into(),
        path: format!("{id}.tqdf"),
        label,
        split,
    };
    let m = DatasetManifest {
        dim: 4,
        clips: 2,
        label_min: 0.0,
        label_max: 100.0,
        normalization: None,
        samples: vec![
            entry("a", 10.0, Split::Train),
            entry("b", 20.0, Split::Train),
            entry("c", 30.0, Split::Train),
            entry("d", 40.0, Split::Test),
            entry("e", 5.0, Split::Test),
        ],
    };
    let n = m.normalize_labels().unwrap();
    let labels: Vec<f64> = n.samples.iter().map(|s| s.label).collect();
    assert_eq!(labels, vec![0.0, 0.5, 1.0, 1.5, -0.25]);
    let t = n.normalization.unwrap();
    for s in &m.samples {
        assert!((t.inverse(t.apply(s.label)) - s.label).abs() < 1e-12);
    }
    assert_eq!(DatasetManifest::parse(&n.to_text()).unwrap(), n);
    assert_eq!(
        n.normalize_labels().unwrap_err().category(),
        ErrorCategory::Data
    );

    let mut flat = m.clone();
    for s in &mut flat.samples {
        s.label = 7.0;
    }
    assert!(matches!(flat.normalize_labels(), Err(Error::Range(_))));
    assert!(matches!(
        LabelTransform::new(1.0, 1.0),
        Err(Error::Range(_))
    ));
}

#[test]
fn manifest_rejects_bad_input() {
    let head = "#tqd-manifest v1\n#dim=4\n#clips=2\n#label_min=0\n#label_max=1\n";
    assert!(DatasetManifest::parse(&format!("{head}a,a.tqdf,0.5,train\n")).is_ok());
    for body in [
        "a,a.tqdf,0.5,valid\n",
        "a,a.tqdf,0.5\n",
        "a,a.tqdf,1.5,train\n",
        "a,a.tqdf,0.5,train\na,b.tqdf,0.5,test\n",
        "#colour=red\n",
    ] {
        let e = DatasetManifest::parse(&format!("{head}{body}")).unwrap_err();
        assert_eq!(e.category(), ErrorCategory::Data, "{body}");
    }
    assert!(DatasetManifest::parse("a,a.tqdf,0.5,train\n").is_err());
}

proptest! {
    #[test]
    fn feature_roundtrip_is_bit_exact(
        rows in 1usize..6,
        cols in 1usize..9,
        seed in any::<u64>(),
        label in prop::option::of(-1e6f64..1e6),
    ) {
        let mut r = common::rng(seed);
        let t: Tensor<f32> = common::uniform(&mut r, rows, cols).cast();
        let f = decode_features(&encode_features(&t, label).unwrap()).unwrap();
        prop_assert_eq!(
            f.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!(f.label.map(f64::to_bits), label.map(f64::to_bits));
    }
}

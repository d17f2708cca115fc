use std::collections::HashSet;
use std::path::PathBuf;

use ule_core::autodiff::Tensor;
use ule_core::data::{
    dataset_from_idx, load_mnist_dir, make_colored_mnist, make_mnist_sc, make_synthetic,
    parse_idx_images, parse_idx_labels, BatchStream, DataError, GroupedDataset, SyntheticSpec,
    COLOR_PALETTE,
};

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn tiny_mnist(n: usize) -> GroupedDataset<f64> {
    let pixels: Vec<u8> = (0..n * 784).map(|i| (i % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    dataset_from_idx::<f64>(&idx_images(n as u32, 28, 28, &pixels), &idx_labels(&labels)).unwrap()
}

#[test]
fn idx_parse_round_trip_and_scaling() {
    let pixels = vec![0u8, 1, 127, 128, 254, 255, 3, 9];
    let images = idx_images(2, 2, 2, &pixels);
    let labels = idx_labels(&[7, 3]);

    let (raw, n, rows, cols) = parse_idx_images(&images).unwrap();
    assert_eq!((n, rows, cols), (2, 2, 2));
    assert_eq!(raw, pixels);
    assert_eq!(parse_idx_labels(&labels).unwrap(), (vec![7, 3], 2));

    let ds = dataset_from_idx::<f64>(&images, &labels).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.sample_shape(), &[1, 2, 2]);
    assert_eq!(ds.labels(), &[7, 3]);
    assert_eq!(ds.attrs(), &[0, 0]);
    assert_eq!(ds.n_attrs(), 1);
    let data = ds.inputs().data();
    // byte 255 must land exactly on 1.0, byte 0 on 0.0
    assert_eq!(data[5], 1.0);
    assert_eq!(data[0], 0.0);
    assert_eq!(data[2], 127.0 / 255.0);
}

#[test]
fn idx_rejects_malformed_streams() {
    let good_images = idx_images(2, 2, 2, &[0; 8]);

    let mut bad_magic = good_images.clone();
    bad_magic[3] = 0x99;
    assert!(matches!(
        parse_idx_images(&bad_magic),
        Err(DataError::BadMagic { .. })
    ));

    let truncated = &good_images[..good_images.len() - 1];
    assert!(matches!(
        parse_idx_images(truncated),
        Err(DataError::Truncated { .. })
    ));

    let short_header = &good_images[..10];
    assert!(matches!(
        parse_idx_images(short_header),
        Err(DataError::Truncated { .. })
    ));

    let three_labels = idx_labels(&[1, 2, 3]);
    assert!(matches!(
        dataset_from_idx::<f32>(&good_images, &three_labels),
        Err(DataError::CountMismatch { .. })
    ));

    let big_label = idx_labels(&[1, 11]);
    assert!(matches!(
        dataset_from_idx::<f32>(&good_images, &big_label),
        Err(DataError::Invalid(_))
    ));

    assert!(matches!(
        parse_idx_labels(&good_images),
        Err(DataError::BadMagic { .. })
    ));
}

#[test]
fn mnist_sc_plants_the_label_pixel() {
    let ds = tiny_mnist(12);
    let sc = make_mnist_sc(&ds).unwrap();
    assert_eq!(sc.len(), 12);
    assert_eq!(sc.n_attrs(), 10);
    assert_eq!(sc.attrs(), sc.labels());

    let data = sc.inputs().data();
    let orig = ds.inputs().data();
    for i in 0..12 {
        let y = sc.labels()[i] as usize;
        for p in 0..784 {
            let v = data[i * 784 + p];
            if p == y {
                assert_eq!(v, 1.0, "sample {i} pixel {p}");
            } else {
                assert_eq!(v, orig[i * 784 + p], "sample {i} pixel {p}");
            }
        }
    }

    // the marker goes on clean digits only; re-marking is rejected
    assert!(make_mnist_sc(&sc).is_err());
}

#[test]
fn mnist_sc_requires_mnist_shape() {
    let inputs = Tensor::<f64>::zeros(&[3, 2, 2]);
    let ds = GroupedDataset::new(inputs, vec![0, 1, 0], vec![0, 0, 0], 2, 1).unwrap();
    assert!(matches!(
        make_mnist_sc(&ds),
        Err(DataError::NotMnistShaped(_))
    ));
}

#[test]
fn colored_mnist_tints_and_preserves_intensity() {
    let ds = tiny_mnist(10);
    let cm = make_colored_mnist(&ds, &COLOR_PALETTE).unwrap();
    assert_eq!(cm.sample_shape(), &[3, 28, 28]);
    assert_eq!(cm.n_attrs(), 10);
    assert_eq!(cm.attrs(), cm.labels());

    let gray = ds.inputs().data();
    let rgb = cm.inputs().data();
    for i in 0..10 {
        let color = &COLOR_PALETTE[cm.attrs()[i] as usize];
        for p in 0..784 {
            let v = gray[i * 784 + p];
            for k in 0..3 {
                let got = rgb[i * 3 * 784 + k * 784 + p];
                assert_eq!(got, v * color[k], "sample {i} chan {k} pixel {p}");
            }
        }
        // every palette entry has a unit channel, so channel-max recovers grayscale
        for p in 0..784 {
            let m = (0..3)
                .map(|k| rgb[i * 3 * 784 + k * 784 + p])
                .fold(f64::MIN, f64::max);
            assert!((m - gray[i * 784 + p]).abs() < 1e-12);
        }
    }
}

#[test]
fn colored_mnist_rejects_bad_palettes() {
    let ds = tiny_mnist(4);
    let mut dull = COLOR_PALETTE;
    dull[2] = [0.5, 0.5, 0.25]; // no unit channel
    assert!(matches!(
        make_colored_mnist(&ds, &dull),
        Err(DataError::BadPalette(_))
    ));
    let mut dupe = COLOR_PALETTE;
    dupe[3] = dupe[7];
    assert!(matches!(
        make_colored_mnist(&ds, &dupe),
        Err(DataError::BadPalette(_))
    ));
}

#[test]
fn synthetic_correlation_and_test_balance() {
    let spec = SyntheticSpec {
        n_train: 4000,
        n_test: 400,
        rho: 0.9,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let (train, test) = make_synthetic::<f64>(&spec).unwrap();

    assert_eq!(train.len(), 4000);
    assert_eq!(train.sample_shape(), &[10]);
    let aligned = train
        .labels()
        .iter()
        .zip(train.attrs())
        .filter(|(y, a)| y == a)
        .count();
    let frac = aligned as f64 / 4000.0;
    assert!((frac - 0.9).abs() < 0.03, "aligned fraction {frac}");

    assert_eq!(test.len(), 400);
    for g in 0..4 {
        assert_eq!(test.group_counts()[g], 100, "group {g}");
    }

    // distinct seeds give distinct draws
    let (other, _) = make_synthetic::<f64>(&SyntheticSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(train.inputs().data(), other.inputs().data());
    // same seed reproduces bits
    let (again, _) = make_synthetic::<f64>(&spec).unwrap();
    assert_eq!(train.inputs().data(), again.inputs().data());
}

#[test]
fn synthetic_extreme_rho() {
    let spec = SyntheticSpec {
        n_train: 500,
        n_test: 80,
        rho: 1.0,
        seed: 1,
        ..SyntheticSpec::default()
    };
    let (train, test) = make_synthetic::<f64>(&spec).unwrap();
    assert!(train.labels().iter().zip(train.attrs()).all(|(y, a)| y == a));
    // test stays balanced even when train never saw the minority groups
    assert_eq!(test.group_counts(), vec![20, 20, 20, 20]);

    assert!(make_synthetic::<f64>(&SyntheticSpec { rho: 1.5, ..spec }).is_err());
    assert!(make_synthetic::<f64>(&SyntheticSpec { n_test: 7, ..spec }).is_err());
}

#[test]
fn balanced_split_takes_min_group_count() {
    // group sizes 10/20/30/40 -> 10 per group in the balanced half
    let n = 100;
    let mut labels = Vec::new();
    let mut attrs = Vec::new();
    for (g, count) in [10usize, 20, 30, 40].iter().enumerate() {
        for _ in 0..*count {
            labels.push((g / 2) as u32);
            attrs.push((g % 2) as u32);
        }
    }
    let inputs = Tensor::<f64>::from_vec(&[n, 2], (0..2 * n).map(|i| i as f64).collect()).unwrap();
    let ds = GroupedDataset::new(inputs, labels, attrs, 2, 2).unwrap();
    let (rest, balanced) = ds.balanced_test_split(3).unwrap();

    assert_eq!(balanced.group_counts(), vec![10, 10, 10, 10]);
    assert_eq!(rest.len() + balanced.len(), n);

    // partition: every original row appears exactly once across the two halves
    let key = |d: &GroupedDataset<f64>| -> HashSet<u64> {
        let data = d.inputs().data();
        (0..d.len()).map(|i| data[i * 2].to_bits()).collect()
    };
    let mut all = key(&rest);
    let b = key(&balanced);
    assert!(all.is_disjoint(&b));
    all.extend(b);
    assert_eq!(all.len(), n);

    // an empty group is an error, not a zero-sized split
    let ds2 = GroupedDataset::new(
        Tensor::<f64>::zeros(&[2, 2]),
        vec![0, 1],
        vec![0, 1],
        2,
        2,
    )
    .unwrap();
    assert!(matches!(
        ds2.balanced_test_split(0),
        Err(DataError::EmptyGroup { .. })
    ));
}

#[test]
fn batch_stream_visits_each_sample_once() {
    let mut stream = BatchStream::new(103, 16, 42).unwrap();
    let epoch0 = stream.next_epoch();
    let epoch1 = stream.next_epoch();

    let lens: Vec<usize> = epoch0.iter().map(|b| b.len()).collect();
    assert_eq!(lens, vec![16, 16, 16, 16, 16, 16, 7]);
    let seen: HashSet<usize> = epoch0.iter().flatten().copied().collect();
    assert_eq!(seen.len(), 103);
    assert_ne!(epoch0, epoch1, "epochs must reshuffle");

    let mut replay = BatchStream::new(103, 16, 42).unwrap();
    assert_eq!(replay.next_epoch(), epoch0);
    assert_eq!(replay.next_epoch(), epoch1);

    let mut other = BatchStream::new(103, 16, 43).unwrap();
    assert_ne!(other.next_epoch(), epoch0);
}

#[test]
fn gather_subset_and_one_hot() {
    let ds = tiny_mnist(6);
    let (x, y, a) = ds.gather(&[5, 0, 3]).unwrap();
    assert_eq!(x.shape(), &[3, 1, 28, 28]);
    assert_eq!(y, vec![ds.labels()[5], ds.labels()[0], ds.labels()[3]]);
    assert_eq!(a, vec![0, 0, 0]);
    let full = ds.inputs().data();
    assert_eq!(&x.data()[..784], &full[5 * 784..6 * 784]);
    assert!(ds.gather(&[6]).is_err());

    let sub = ds.subset(&[1, 2]).unwrap();
    assert_eq!(sub.len(), 2);
    assert_eq!(sub.labels(), &ds.labels()[1..3]);

    let oh = GroupedDataset::<f64>::one_hot(&[2, 0, 1], 3);
    assert_eq!(oh.shape(), &[3, 3]);
    assert_eq!(
        oh.data(),
        &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
    );
}

#[test]
fn to_rgb_replicates_channels() {
    let ds = tiny_mnist(3);
    let rgb = ds.to_rgb().unwrap();
    assert_eq!(rgb.sample_shape(), &[3, 28, 28]);
    let g = ds.inputs().data();
    let r = rgb.inputs().data();
    for i in 0..3 {
        for k in 0..3 {
            assert_eq!(
                &r[i * 3 * 784 + k * 784..i * 3 * 784 + (k + 1) * 784],
                &g[i * 784..(i + 1) * 784]
            );
        }
    }
    assert!(rgb.to_rgb().is_err(), "already 3-channel");
}

#[test]
fn construction_rejects_bad_shapes() {
    let t = Tensor::<f64>::zeros(&[3, 4]);
    assert!(GroupedDataset::new(t.clone(), vec![0, 1], vec![0, 0, 0], 2, 1).is_err());
    assert!(GroupedDataset::new(t.clone(), vec![0, 1, 2], vec![0, 0, 0], 2, 1).is_err());
    assert!(GroupedDataset::new(t.clone(), vec![0, 1, 0], vec![0, 0, 1], 2, 1).is_err());
    assert!(GroupedDataset::new(t.clone(), vec![0, 1, 0], vec![0, 0, 0], 0, 1).is_err());
    assert!(GroupedDataset::new(Tensor::<f64>::zeros(&[3]), vec![0; 3], vec![0; 3], 2, 1).is_err());
}

#[test]
fn committed_idx_files_load() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let train = load_mnist_dir::<f32>(&root, "train").unwrap();
    let test = load_mnist_dir::<f32>(&root, "test").unwrap();
    assert_eq!(train.len(), 8000);
    assert_eq!(test.len(), 2000);
    assert_eq!(train.sample_shape(), &[1, 28, 28]);
    assert_eq!(train.n_classes(), 10);
    // every class present in both splits
    for split in [&train, &test] {
        let mut seen = [false; 10];
        for &y in split.labels() {
            seen[y as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
    let data = train.inputs().data();
    assert!(data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(data.iter().any(|&v| v == 1.0), "saturated pixels exist");
}

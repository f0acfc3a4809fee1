use std::fs;
use std::io::Write;

use bmnn::backprop::RealNetParams;
use bmnn::bitpack::{pack, PackedNetwork, MAGIC};
use bmnn::dataio::{encode_idx, load_idx, load_mnist, parse_idx, IdxTensor, Normalization};
use bmnn::model_io::{ModelDocument, ModelKind};
use bmnn::{ConvergingTopology, Error, PosteriorParams};
use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;

fn topo(w: &[usize]) -> ConvergingTopology {
    ConvergingTopology::new(w).unwrap()
}

#[test]
fn posterior_json_round_trip_is_exact() {
    let t = topo(&[7, 6, 3, 1]);
    let mut p = PosteriorParams::init_prior(&t, 11);
    p.set(1, 0, 0, 1e-310);
    p.set(2, 1, 1, -123.456_789_012_345_67);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    p.save(&path).unwrap();
    assert_eq!(PosteriorParams::load(&path).unwrap(), p);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["kind"], "mfb_posterior");
    assert_eq!(doc["layer_widths"], serde_json::json!([7, 6, 3, 1]));
    assert_eq!(doc["layers"][0].as_array().unwrap().len(), 42);
}

#[test]
fn real_weights_round_trip_and_kind_check() {
    let t = topo(&[4, 4, 2]);
    let r = RealNetParams::init(&t, 0.01, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    r.save(&path).unwrap();
    assert_eq!(RealNetParams::load(&path, 0.01).unwrap(), r);
    // A real-weight document is not a posterior.
    assert!(PosteriorParams::load(&path).is_err());
    let doc = ModelDocument::load(&path).unwrap();
    assert_eq!(doc.kind, ModelKind::RealWeights);
}

#[test]
fn malformed_documents_are_rejected() {
    let t = topo(&[4, 2, 1]);
    let mut doc = PosteriorParams::zeros(&t).to_document();
    doc.layers[1].pop();
    assert!(PosteriorParams::from_document(&doc).is_err());
    assert!(ModelDocument::from_text("{\"format_version\": 1}").is_err());
    let mut doc = PosteriorParams::zeros(&t).to_document();
    doc.layer_widths = vec![4, 3, 1];
    assert!(PosteriorParams::from_document(&doc).is_err());
}

#[test]
fn packed_file_layout() {
    let t = topo(&[70, 6, 2]);
    let w = PosteriorParams::init_prior(&t, 5).clip_map();
    let net = pack(&w);
    let bytes = net.to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    let back = PackedNetwork::from_bytes(&bytes).unwrap();
    assert_eq!(back.unpack(), w);
    assert_eq!(back.to_bytes(), bytes);
    // 70 inputs pad to two words per row.
    assert_eq!(net.layer(1).words().len(), 6 * 2);
    assert!(PackedNetwork::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(PackedNetwork::from_bytes(&bad).is_err());
}

fn write_gz(path: &std::path::Path, bytes: &[u8]) {
    let mut e = GzEncoder::new(fs::File::create(path).unwrap(), Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap();
}

fn images(n: usize) -> IdxTensor {
    IdxTensor {
        dims: vec![n, 3, 3],
        data: (0..n * 9).map(|i| ((i * 37) % 256) as u8).collect(),
    }
}

fn labels(n: usize) -> IdxTensor {
    IdxTensor {
        dims: vec![n],
        data: (0..n).map(|i| (i % 10) as u8).collect(),
    }
}

#[test]
fn loads_plain_and_gzipped_sets() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train-images-idx3-ubyte"), encode_idx(&images(30))).unwrap();
    write_gz(&dir.path().join("train-labels-idx1-ubyte.gz"), &encode_idx(&labels(30)));
    write_gz(&dir.path().join("t10k-images-idx3-ubyte.gz"), &encode_idx(&images(12)));
    fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx(&labels(12))).unwrap();
    let data = load_mnist(dir.path()).unwrap();
    assert_eq!((data.train.rows, data.train.cols), (30, 10));
    assert_eq!((data.test.rows, data.test.cols), (12, 10));
    assert_eq!(data.train_labels[..3], [0, 1, 2]);
    let gz = load_idx(&dir.path().join("t10k-images-idx3-ubyte.gz")).unwrap();
    assert_eq!(gz, images(12));
}

#[test]
fn missing_and_mismatched_sets() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_mnist(dir.path()), Err(Error::MissingData(_))));
    fs::write(dir.path().join("train-images-idx3-ubyte"), encode_idx(&images(30))).unwrap();
    fs::write(dir.path().join("train-labels-idx1-ubyte"), encode_idx(&labels(29))).unwrap();
    fs::write(dir.path().join("t10k-images-idx3-ubyte"), encode_idx(&images(5))).unwrap();
    fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx(&labels(5))).unwrap();
    assert!(load_mnist(dir.path()).is_err());
}

#[test]
fn normalization_is_stable_under_reapplication() {
    let train = images(40);
    let norm = Normalization::fit(&train).unwrap();
    let first = norm.apply(&train).unwrap();
    let refit = Normalization::fit(&train).unwrap();
    assert_eq!(refit, norm);
    assert_eq!(refit.apply(&train).unwrap(), first);
}

proptest! {
    #[test]
    fn idx_round_trip(dims in prop::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let data: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let t = IdxTensor { dims, data };
        let bytes = encode_idx(&t);
        prop_assert_eq!(parse_idx(&bytes).unwrap(), t.clone());
        prop_assert_eq!(encode_idx(&parse_idx(&bytes).unwrap()), bytes);
    }
}

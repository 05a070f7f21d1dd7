use openhybrid::data::idx::{self, IdxArray, IdxError};
use openhybrid::Error;

fn mnist_like(n: usize) -> (IdxArray, IdxArray) {
    let images = IdxArray {
        dims: vec![n, 28, 28],
        data: (0..n * 784).map(|i| (i * 31 % 256) as u8).collect(),
    };
    let labels = IdxArray {
        dims: vec![n],
        data: (0..n).map(|i| (i % 10) as u8).collect(),
    };
    (images, labels)
}

#[test]
fn write_then_read_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = mnist_like(25);
    let (ip, lp) = (dir.path().join("images"), dir.path().join("labels"));
    idx::write(&ip, &images).unwrap();
    idx::write(&lp, &labels).unwrap();
    assert_eq!(idx::read(&ip).unwrap(), images);
    assert_eq!(idx::read(&lp).unwrap(), labels);
    assert_eq!(std::fs::read(&ip).unwrap().len(), 16 + 25 * 784);

    let ds = idx::load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.len(), 25);
    assert_eq!(ds.feature_dim(), 784);
    assert_eq!(ds.class_count, 10);
    assert_eq!(ds.features.get2(3, 5), f64::from(images.data[3 * 784 + 5]) / 255.0);
}

#[test]
fn mismatched_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (images, _) = mnist_like(4);
    let (_, labels) = mnist_like(5);
    let (ip, lp) = (dir.path().join("images"), dir.path().join("labels"));
    idx::write(&ip, &images).unwrap();
    idx::write(&lp, &labels).unwrap();
    match idx::load_idx(&ip, &lp) {
        Err(Error::Idx(e @ IdxError::CountMismatch { .. })) => assert_eq!(e.code(), "IDX_COUNT_MISMATCH"),
        other => panic!("unexpected {other:?}"),
    }
    match idx::load_idx(&ip, &dir.path().join("missing")) {
        Err(Error::Io(_)) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn truncated_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (images, _) = mnist_like(2);
    let bytes = idx::encode(&images);
    let path = dir.path().join("short");
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    match idx::read(&path) {
        Err(Error::Idx(e)) => assert_eq!(e.code(), "IDX_TRUNCATED"),
        other => panic!("unexpected {other:?}"),
    }
}

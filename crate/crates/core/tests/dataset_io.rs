use std::fs;

use adgnn::harness::io::{load_dataset, write_dataset, DatasetMeta};
use adgnn::harness::{generate, CsbmConfig};
use adgnn::train::Dataset;
use adgnn::{Error, FeatureMatrix, Graph, LabelVector};
use ndarray::Array2;

fn small_csbm() -> CsbmConfig {
    CsbmConfig {
        n_per_class: 30,
        mean_degree: 4.0,
        ..CsbmConfig::default()
    }
}

#[test]
fn generate_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_csbm();
    generate(&cfg, dir.path()).unwrap();
    let (loaded, summary) = load_dataset(dir.path()).unwrap();
    let original = cfg.sample().unwrap();
    assert_eq!(loaded, original);
    assert_eq!(summary.nodes, 60);
    assert_eq!(summary.classes, 2);

    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta.csbm.unwrap(), cfg.params().unwrap());
    assert_eq!(meta.num_edges, original.graph.num_edges());
    assert!(meta.edge_homophily.is_some());
}

#[test]
fn feature_row_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("edges.txt"), "0 1\n1 2\n").unwrap();
    fs::write(dir.path().join("labels.csv"), "0\n1\n0\n").unwrap();
    fs::write(dir.path().join("features.csv"), "1.0,2.0\n3.0,4.0\n").unwrap();
    match load_dataset(dir.path()) {
        Err(Error::LengthMismatch { expected, actual, .. }) => assert_eq!((expected, actual), (3, 2)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_edge_line_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("edges.txt"), "# edges\n0 1\n1 two\n").unwrap();
    fs::write(dir.path().join("labels.csv"), "0\n1\n0\n").unwrap();
    fs::write(dir.path().join("features.csv"), "1\n2\n3\n").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("edges.txt:3"), "{msg}");
}

#[test]
fn all_same_label_summary_has_homophily_one() {
    let dir = tempfile::tempdir().unwrap();
    let g = Graph::build(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let data = Dataset::new(
        g,
        FeatureMatrix::new(Array2::from_elem((4, 2), 0.25)).unwrap(),
        LabelVector::new(vec![1, 1, 1, 1], 2).unwrap(),
    )
    .unwrap();
    write_dataset(dir.path(), &data, &DatasetMeta::describe(&data, None)).unwrap();
    let (loaded, summary) = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, data);
    assert_eq!(summary.edge_homophily, Some(1.0));
}

#[test]
fn missing_meta_infers_classes_and_dedups_edges() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("edges.txt"), "0,1\n1,0\n1 2\n").unwrap();
    fs::write(dir.path().join("labels.csv"), "0\n2\n1\n").unwrap();
    fs::write(dir.path().join("features.csv"), "1\n2\n3\n").unwrap();
    let (data, summary) = load_dataset(dir.path()).unwrap();
    assert_eq!(data.labels.num_classes(), 3);
    assert_eq!(summary.edges, 2);
    assert_eq!(summary.edge_homophily, Some(0.0));
}

use ndarray::{array, Array2};
use proptest::prelude::*;
use rf_equiv::model::{
    load_matrix, matrix_to_raw, parse_csv, parse_raw, synthetic_regression, synthetic_teacher, write_matrix,
};
use rf_equiv::{Activation, Error, Layout, RFConfig};

#[test]
fn csv_square_matrix() {
    assert_eq!(parse_csv("1,2\n3,4").unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
}

#[test]
fn csv_column_vector() {
    assert_eq!(parse_csv("1\n2\n3").unwrap(), array![[1.0], [2.0], [3.0]]);
}

#[test]
fn csv_whitespace_separated() {
    assert_eq!(parse_csv("1 2\n3\t4\n").unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
}

#[test]
fn csv_errors() {
    assert!(matches!(parse_csv("1,2\n3"), Err(Error::RaggedRows { .. })));
    assert!(matches!(parse_csv("1,x"), Err(Error::NonNumeric { .. })));
}

#[test]
fn raw_layout_is_row_major() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&3u64.to_le_bytes());
    for v in 0..6 {
        bytes.extend_from_slice(&(v as f64).to_le_bytes());
    }
    assert_eq!(parse_raw(&bytes).unwrap(), array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
    bytes.pop();
    assert!(matches!(parse_raw(&bytes), Err(Error::HeaderMismatch { .. })));
}

#[test]
fn files_round_trip_in_both_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let m = array![[0.1, -2.5e-300], [f64::MAX, 1.0 / 3.0]];
    for (name, layout) in [("m.csv", Layout::Csv), ("m.bin", Layout::RawF64Le)] {
        let path = dir.path().join(name);
        assert_eq!(Layout::from_path(&path), layout);
        write_matrix(&path, &m.view(), layout).unwrap();
        assert_eq!(load_matrix(&path, layout).unwrap(), m);
    }
    let missing = dir.path().join("absent.csv");
    assert!(matches!(load_matrix(&missing, Layout::Csv), Err(Error::Io { .. })));
}

#[test]
fn noise_free_synthetic_labels_are_exact() {
    let ds = synthetic_regression(4, 2, 3, 0.0, 7).unwrap();
    let w = synthetic_teacher(3, 7);
    assert_eq!(ds.y(), &ds.x().dot(&w));
    assert_eq!(ds.yhat(), &ds.xhat().dot(&w));
    assert!((w.dot(&w) - 1.0).abs() < 1e-15);
}

#[test]
fn synthetic_is_deterministic() {
    let a = synthetic_regression(5, 3, 4, 0.1, 9).unwrap();
    let b = synthetic_regression(5, 3, 4, 0.1, 9).unwrap();
    assert_eq!(a, b);
    let c = synthetic_regression(5, 3, 4, 0.1, 10).unwrap();
    assert_ne!(a.x(), c.x());
}

#[test]
fn synthetic_design_is_centered() {
    let ds = synthetic_regression(100, 100, 100, 0.1, 1).unwrap();
    let mean = ds.x().mean().unwrap();
    assert!(mean.abs() <= 3.0 / (100.0f64 * 100.0).sqrt(), "mean {mean}");
}

#[test]
fn activation_examples() {
    let m = array![[-1.0, 2.0]];
    assert_eq!(Activation::Identity.apply(&m.view()).unwrap(), m);
    let s = array![[-3.0, 0.0, 5.0]];
    assert_eq!(Activation::Sign.apply(&s.view()).unwrap(), array![[-1.0, 0.0, 1.0]]);
    assert_eq!(Activation::Erf.apply(&array![[0.0]].view()).unwrap(), array![[0.0]]);
}

#[test]
fn custom_table_interpolates_and_rejects_outside() {
    let t = Activation::table(vec![-1.0, 0.0, 2.0], vec![0.0, 1.0, 5.0]).unwrap();
    assert!((t.eval(1.0).unwrap() - 3.0).abs() < 1e-15);
    assert!(matches!(t.eval(2.5), Err(Error::OutsideTable { .. })));
    assert!(Activation::table(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
}

#[test]
fn rf_config_validation() {
    assert!(RFConfig::new(0, 0.1, 1, 0).is_err());
    assert!(RFConfig::new(1, 0.0, 1, 0).is_err());
    assert!(RFConfig::new(1, 0.1, 0, 0).is_err());
    assert!(RFConfig::new(3, 0.1, 2, 5).is_ok());
}

fn matrix_strategy() -> impl Strategy<Value = Array2<f64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn activation_strategy() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Identity),
        Just(Activation::Erf),
        Just(Activation::Sign),
        Just(Activation::Sin),
        Just(Activation::Relu),
    ]
}

proptest! {
    #[test]
    fn raw_round_trip_is_bit_exact(m in matrix_strategy()) {
        let back = parse_raw(&matrix_to_raw(&m.view())).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn activation_preserves_shape(m in matrix_strategy(), act in activation_strategy()) {
        let m = m.mapv(|v| v.clamp(-1e6, 1e6));
        let out = act.apply(&m.view()).unwrap();
        prop_assert_eq!(out.dim(), m.dim());
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }
}

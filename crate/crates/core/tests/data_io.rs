use caseonly_ve::data::{read_csv, write_csv_to, CaseOnlyDataset, ColumnSpec, Observation};
use caseonly_ve::Error;
use proptest::prelude::*;

fn parse(text: &str, schema: &ColumnSpec) -> caseonly_ve::Result<CaseOnlyDataset> {
    read_csv(csv::Reader::from_reader(text.as_bytes()), schema)
}

fn observation() -> impl Strategy<Value = (Vec<f64>, bool, f64, Vec<f64>, Option<bool>)> {
    (
        prop::collection::vec(-1e6f64..1e6, 2),
        any::<bool>(),
        1e-9f64..1e4,
        prop::collection::vec(-1e3f64..1e3, 1),
        prop::option::of(any::<bool>()),
    )
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(rows in prop::collection::vec(observation(), 1..40)) {
        let obs: Vec<Observation> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (w, a, t, wt, j))| Observation::new(i + 1, w, a, t, wt, j.is_some(), j).unwrap())
            .collect();
        let ds = CaseOnlyDataset::new(obs).unwrap();
        let schema = ColumnSpec::standard(2, 1);
        let mut buf = Vec::new();
        write_csv_to(&ds, csv::Writer::from_writer(&mut buf), &schema).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap(), &schema).unwrap();
        prop_assert_eq!(back.rows(), ds.rows());
    }

    #[test]
    fn strain_label_present_iff_observed(delta in any::<bool>(), j in prop::option::of(any::<bool>())) {
        let cell = j.map_or("", |b| if b { "1" } else { "0" });
        let text = format!("w_1,a,t,delta,j\n0.5,1,2.0,{},{cell}\n", delta as u8);
        let res = parse(&text, &ColumnSpec::standard(1, 0));
        match (delta, j) {
            (true, Some(_)) | (false, None) => prop_assert!(res.is_ok()),
            (true, None) => prop_assert!(matches!(res, Err(Error::StrainAbsentWhenDeltaOne { row: 1 })), "accepted"),
            (false, Some(_)) => prop_assert!(matches!(res, Err(Error::StrainPresentWhenDeltaZero { row: 1 })), "accepted"),
        }
    }

    #[test]
    fn nonpositive_times_are_rejected(t in -1e3f64..=0.0) {
        let text = format!("a,t,delta,j\n1,{t},1,0\n");
        prop_assert!(
            matches!(parse(&text, &ColumnSpec::standard(0, 0)), Err(Error::NonPositiveTime { .. })),
            "nonpositive time accepted"
        );
    }
}

#[test]
fn rejects_non_binary_and_non_finite_cells() {
    let schema = ColumnSpec::standard(1, 0);
    let err = parse("w_1,a,t,delta,j\n0.1,1,1.0,1,1\n0.2,2,1.0,1,0\n", &schema).unwrap_err();
    assert!(matches!(err, Error::NonBinaryValue { row: 2, ref column, .. } if column == "a"));
    let err = parse("w_1,a,t,delta,j\nNaN,1,1.0,1,1\n", &schema).unwrap_err();
    assert!(matches!(err, Error::NonFinite { row: 1, .. }));
    let err = parse("w_1,a,t,delta,j\n0.1,1,inf,1,1\n", &schema).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
}

#[test]
fn missing_column_and_empty_file() {
    let err = parse("w_1,a,t,j\n0.1,1,1.0,1\n", &ColumnSpec::standard(1, 0)).unwrap_err();
    assert!(matches!(err, Error::MissingColumn(ref c) if c == "delta"));
    let err = parse("a,t,delta,j\n", &ColumnSpec::standard(0, 0)).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}

#[test]
fn header_inference_counts_covariates() {
    let spec = ColumnSpec::infer(&["w_1", "w_2", "w_3", "a", "t", "wt_1", "delta", "j"]);
    assert_eq!(spec, ColumnSpec::standard(3, 1));
}

#[test]
fn columns_may_be_renamed_and_reordered() {
    let schema = ColumnSpec {
        w: vec!["age".into()],
        a: "vaccinated".into(),
        t: "day".into(),
        w_post: vec![],
        delta: "sequenced".into(),
        j: "lineage".into(),
    };
    let ds = parse("lineage,day,age,sequenced,vaccinated\n1,3.5,40,1,0\n,2,31,0,1\n", &schema).unwrap();
    assert_eq!(ds.n(), 2);
    assert_eq!(ds.rows()[0].w, vec![40.0]);
    assert_eq!(ds.rows()[1].j, None);
    assert!(ds.rows()[1].a);
}

use proptest::prelude::*;
use upho_core::tabledata::{
    link_tables, parse_feature_csv, parse_manifest, tracts_in_zip, write_manifest, GeoLevel, GeoUnit, TableError,
    ZipTractCrosswalk,
};

const MANIFEST: &str = "# column_name\tterm\tunits\tdescription
obesity\tHIO:ObesityPrevalence\tpercent\tAdult obesity
poverty\tHIO:PctUnderPovertyLine\tpercent\tBelow poverty line
";

#[test]
fn csv_with_extra_columns() {
    let m = parse_manifest(MANIFEST).unwrap();
    let csv = "geo_code,poverty,ignored,obesity\n47157010300,60,x,46\n47157000100,10.5,y,30\n";
    let t = parse_feature_csv(csv.as_bytes(), GeoLevel::CensusTract, &m, "cdc").unwrap();
    assert_eq!(t.column_names(), vec!["obesity", "poverty"]);
    assert_eq!(t.row_by_code("47157010300").unwrap(), &[46.0, 60.0]);
    assert_eq!(t.provenance(), &["cdc".to_string(), "cdc".to_string()]);
    assert_eq!(parse_manifest(&write_manifest(t.bindings())).unwrap(), m);
}

#[test]
fn csv_errors() {
    let m = parse_manifest(MANIFEST).unwrap();
    let lvl = GeoLevel::CensusTract;
    let cases: [(&str, fn(&TableError) -> bool); 6] = [
        ("code,obesity,poverty\n", |e| matches!(e, TableError::MissingGeoColumn(_))),
        ("geo_code,obesity\n", |e| matches!(e, TableError::MissingColumn(_))),
        ("geo_code,obesity,poverty\n4715701030,1,2\n", |e| matches!(e, TableError::BadGeoCode { line: 2, .. })),
        ("geo_code,obesity,poverty\n47157010300,1,2\n47157010300,1,2\n", |e| {
            matches!(e, TableError::DuplicateGeoCode { line: 3, .. })
        }),
        ("geo_code,obesity,poverty\n47157010300,1,NA\n", |e| matches!(e, TableError::NonNumericCell { line: 2, .. })),
        ("geo_code,obesity,poverty\n47157010300,1\n", |e| matches!(e, TableError::MalformedRow { line: 2, .. })),
    ];
    for (csv, check) in cases {
        let err = parse_feature_csv(csv.as_bytes(), lvl, &m, "s").unwrap_err();
        assert!(check(&err), "{csv:?} gave {err:?}");
    }
}

#[test]
fn crosswalk_lookup() {
    let cw = ZipTractCrosswalk::parse_csv(b"zip,tract_fips\n38103,47157010300\n38103,47157000100\n38104,47157000200\n").unwrap();
    let zip = GeoUnit::zip("38103").unwrap();
    let tracts = tracts_in_zip(&cw, &zip).unwrap();
    assert_eq!(tracts.len(), 2);
    assert_eq!(cw.zip_of(&GeoUnit::tract("47157000200").unwrap()), Some(&GeoUnit::zip("38104").unwrap()));
    assert_eq!(ZipTractCrosswalk::parse_csv(cw.to_csv().as_bytes()).unwrap(), cw);
}

fn table_csv(codes: &[u32], col: &str) -> String {
    let mut s = format!("geo_code,{col}\n");
    for (i, c) in codes.iter().enumerate() {
        s.push_str(&format!("47157{c:06},{i}\n"));
    }
    s
}

proptest! {
    #[test]
    fn join_keeps_shared_codes_in_first_order(a in prop::collection::btree_set(0u32..50, 0..30), b in prop::collection::btree_set(0u32..50, 0..30)) {
        let ma = parse_manifest("x\tHIO:X\tpercent\n").unwrap();
        let mb = parse_manifest("y\tHIO:Y\tcount\n").unwrap();
        let mut av: Vec<u32> = a.iter().copied().collect();
        av.reverse();
        let bv: Vec<u32> = b.iter().copied().collect();
        let ta = parse_feature_csv(table_csv(&av, "x").as_bytes(), GeoLevel::CensusTract, &ma, "a").unwrap();
        let tb = parse_feature_csv(table_csv(&bv, "y").as_bytes(), GeoLevel::CensusTract, &mb, "b").unwrap();
        let want: Vec<String> = av.iter().filter(|c| b.contains(c)).map(|c| format!("47157{c:06}")).collect();
        let joined = link_tables(&[ta.clone(), tb.clone()]);
        if want.is_empty() {
            prop_assert_eq!(joined.unwrap_err(), TableError::EmptyJoin);
            return Ok(());
        }
        let j = joined.unwrap();
        prop_assert_eq!(j.codes(), want.iter().map(String::as_str).collect::<Vec<_>>());
        for code in j.codes() {
            let row = j.row_by_code(code).unwrap();
            prop_assert_eq!(row[0], ta.row_by_code(code).unwrap()[0]);
            prop_assert_eq!(row[1], tb.row_by_code(code).unwrap()[0]);
        }
    }

    #[test]
    fn join_order_changes_only_row_and_column_order(a in prop::collection::btree_set(0u32..40, 1..25), b in prop::collection::btree_set(0u32..40, 1..25)) {
        prop_assume!(a.intersection(&b).next().is_some());
        let ma = parse_manifest("x\tHIO:X\tpercent\n").unwrap();
        let mb = parse_manifest("y\tHIO:Y\tcount\n").unwrap();
        let av: Vec<u32> = a.iter().copied().collect();
        let bv: Vec<u32> = b.iter().rev().copied().collect();
        let ta = parse_feature_csv(table_csv(&av, "x").as_bytes(), GeoLevel::CensusTract, &ma, "a").unwrap();
        let tb = parse_feature_csv(table_csv(&bv, "y").as_bytes(), GeoLevel::CensusTract, &mb, "b").unwrap();
        let ab = link_tables(&[ta.clone(), tb.clone()]).unwrap();
        let ba = link_tables(&[tb, ta]).unwrap();
        let mut codes_ab = ab.codes();
        let mut codes_ba = ba.codes();
        codes_ab.sort();
        codes_ba.sort();
        prop_assert_eq!(&codes_ab, &codes_ba);
        for code in codes_ab {
            let (r1, r2) = (ab.row_by_code(code).unwrap(), ba.row_by_code(code).unwrap());
            prop_assert_eq!((r1[0], r1[1]), (r2[1], r2[0]));
        }
    }

    #[test]
    fn csv_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 1..30)) {
        let m = parse_manifest("x\tHIO:X\tpercent\n").unwrap();
        let mut s = String::from("geo_code,x\n");
        for (i, v) in vals.iter().enumerate() {
            s.push_str(&format!("47157{:06},{v}\n", i));
        }
        let t = parse_feature_csv(s.as_bytes(), GeoLevel::CensusTract, &m, "p").unwrap();
        let back = parse_feature_csv(t.to_csv().as_bytes(), GeoLevel::CensusTract, &m, "p").unwrap();
        prop_assert_eq!(back, t);
    }
}

use std::fs;

use proptest::prelude::*;
use velocity_core::error::Error;
use velocity_core::io::{
    ingest, read_counts, read_counts_csv, read_counts_mtx, read_draws, read_labels, write_counts_csv,
    write_counts_mtx, write_draws,
};
use velocity_core::model::{CountMatrix, Hyper};
use velocity_core::sampler::{run_chain, ChainConfig, Init};
use velocity_core::simulate::{gen_counts_nb, gen_parameters, Scenario};

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

#[test]
fn two_by_two_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("s.csv"), "cell,g1,g2\na,1,0\nb,4,2\n").unwrap();
    fs::write(p.join("u.csv"), "cell,g1,g2\na,0,3\nb,2.0,1\n").unwrap();
    fs::write(p.join("l.csv"), "cell,group,subgroup\na,T,x\nb,T,y\n").unwrap();
    let d = ingest(&p.join("s.csv"), &p.join("u.csv"), &p.join("l.csv")).unwrap();
    assert_eq!((d.n_cells(), d.n_genes(), d.n_groups(), d.n_subgroups()), (2, 2, 1, 2));
    assert_eq!(d.spliced.row(1), &[4, 2]);
    assert_eq!(d.unspliced.row(0), &[0, 3]);
    assert_eq!(d.group_of_subgroup, vec![0, 0]);
}

#[test]
fn crossing_subgroup_names_the_culprits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.csv");
    fs::write(&path, "cell,group,subgroup\na,beta,s1\nb,alpha,s1\n").unwrap();
    match read_labels(&path) {
        Err(Error::SubgroupCrossesGroups { subgroup, first, second }) => {
            assert_eq!((subgroup.as_str(), first.as_str(), second.as_str()), ("s1", "beta", "alpha"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_inputs_give_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("frac.csv"), "cell,g1\na,1.5\n").unwrap();
    assert!(matches!(read_counts_csv(&p.join("frac.csv")), Err(Error::NonIntegerCount { line: 2, .. })));
    fs::write(p.join("ragged.csv"), "cell,g1,g2\na,1\n").unwrap();
    assert!(matches!(read_counts_csv(&p.join("ragged.csv")), Err(Error::DimensionMismatch(_))));
    assert!(matches!(read_counts_csv(&p.join("missing.csv")), Err(Error::Io { .. })));
    fs::write(p.join("bad.mtx"), "%%MatrixMarket matrix array real general\n1 1\n1\n").unwrap();
    assert!(read_counts_mtx(&p.join("bad.mtx")).is_err());
    fs::write(p.join("range.mtx"), "%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 4\n").unwrap();
    assert!(matches!(read_counts_mtx(&p.join("range.mtx")), Err(Error::DimensionMismatch(_))));

    fs::write(p.join("s.csv"), "cell,g1\na,1\nb,2\n").unwrap();
    fs::write(p.join("u.csv"), "cell,g1\na,1\nc,2\n").unwrap();
    fs::write(p.join("l.csv"), "cell,group\na,T\nb,T\n").unwrap();
    assert!(ingest(&p.join("s.csv"), &p.join("u.csv"), &p.join("l.csv")).is_err());
}

#[test]
fn mtx_duplicates_are_summed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mtx");
    fs::write(&path, "%%MatrixMarket matrix coordinate integer general\n% note\n2 3 3\n1 2 4\n1 2 1\n2 3 7\n").unwrap();
    let m = read_counts_mtx(&path).unwrap();
    assert_eq!(m.as_slice(), &[0, 5, 0, 0, 0, 7]);
}

#[test]
fn draws_round_trip_bitwise() {
    let sc = Scenario::new(5, 30, 1, 3, 3, 8).unwrap();
    let data = gen_counts_nb(&gen_parameters(&sc).unwrap()).unwrap();
    let hyper = Hyper::new(data.default_bound(), Hyper::DEFAULT_SECTOR).unwrap();
    let mut cfg = ChainConfig::new(120, 60, 3, 1).unwrap();
    cfg.store_loglik = true;
    let draws = run_chain(&data, &cfg, Init::Auto(hyper)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_draws(dir.path(), &draws, true).unwrap();
    assert!(dir.path().join("lambda.csv").exists());
    let back = read_draws(dir.path()).unwrap();
    assert_eq!(back, draws);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_and_mtx_agree(rows in 1usize..6, cols in 1usize..6, seed in prop::collection::vec(0u32..40, 36)) {
        let data: Vec<u32> = (0..rows * cols).map(|i| seed[i] / 4 * (seed[i] % 2)).collect();
        let m = CountMatrix::new(rows, cols, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv, mtx) = (dir.path().join("m.csv"), dir.path().join("m.mtx"));
        write_counts_csv(&csv, &m, &names("c", rows), &names("g", cols)).unwrap();
        write_counts_mtx(&mtx, &m).unwrap();
        let a = read_counts(&csv).unwrap().counts;
        let b = read_counts(&mtx).unwrap().counts;
        prop_assert_eq!(&a, &m);
        prop_assert_eq!(&b, &m);
    }
}

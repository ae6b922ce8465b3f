use num_rational::BigRational;
use num_traits::Zero;

use idsq::coefficients::{
    coefficient_grid, numerator_coeffs, p_jk, params, q_jk, r_jk, Mode, Value,
};
use idsq::critical_point::{estimate_critical_point, just_above, max_feasible_csq, ReportStatus};
use idsq::id_analyzer::{cutoff_set, id_verdict, scan_positivity, tail_mass, Verdict};
use idsq::matrix_criteria::{ek_criterion, SquareMatrix};
use idsq::model::{normalize, CanonicalProblem, GaussianProblem, ShiftCase};
use idsq::rational::{int, rat};
use idsq::series_oracle::{oracle_pq, BivariateSeries};
use idsq::Error;

fn problem(json: &str) -> GaussianProblem {
    GaussianProblem::from_json(json).unwrap()
}

#[test]
fn worked_values_through_the_public_api() {
    let p = problem(r#"{"cov":[["4","1"],["1","0.5"]],"shift":["1","1"]}"#);
    let c = normalize(&p).unwrap();
    assert_eq!(
        (c.a.clone(), c.b.clone(), c.case_label),
        (int(4), rat(1, 2), ShiftCase::EqualShift)
    );
    let t = int(10);
    let sp = params(&c, &t).unwrap();
    let nc = numerator_coeffs(&c, &t);
    assert_eq!(p_jk(&sp, 1, 1).unwrap(), rat(25, 5329));
    assert_eq!(q_jk(&sp, &nc, 1, 0).unwrap(), rat(40, 5329));
    assert_eq!(r_jk(&sp, &nc, &int(0), 1, 0).unwrap(), rat(70, 73));
    let grid = coefficient_grid(&c, &t, &int(0), &[(1, 1), (3, 2)], Mode::Exact).unwrap();
    for cell in &grid.cells {
        assert_eq!(cell.r, cell.p);
    }
}

#[test]
fn closed_forms_match_oracle_away_from_unit_d() {
    for case in ShiftCase::ALL {
        let c = CanonicalProblem::from_ab(int(5), int(2), case).unwrap();
        let t = rat(7, 2);
        let (ps, qs) = oracle_pq(&c, &t, 10, 10).unwrap();
        let sp = params(&c, &t).unwrap();
        let nc = numerator_coeffs(&c, &t);
        for j in 0..=10u64 {
            for k in (j == 0) as u64..=10 - j {
                assert_eq!(p_jk(&sp, j, k).unwrap(), ps.get(j as usize, k as usize));
                assert_eq!(
                    q_jk(&sp, &nc, j, k).unwrap(),
                    qs.get(j as usize, k as usize),
                    "{case:?} ({j},{k})"
                );
            }
        }
    }
}

#[test]
fn general_problem_normalizes_consistently() {
    // Rescaling one coordinate, covariance and shift together.
    let base = problem(r#"{"cov":[["4","1"],["1","1/2"]],"shift":["1","1"]}"#);
    let scaled = problem(r#"{"cov":[["16","2"],["2","1/2"]],"shift":["2","1"]}"#);
    let (c0, c1) = (normalize(&base).unwrap(), normalize(&scaled).unwrap());
    assert_eq!((c0.a, c0.b, c0.case_label), (c1.a, c1.b, c1.case_label));
    let flipped = problem(r#"{"cov":[["4","-1"],["-1","1/2"]],"shift":["1","-1"]}"#);
    assert_eq!(
        normalize(&flipped).unwrap().case_label,
        ShiftCase::EqualShift
    );
    let opposite = problem(r#"{"cov":[["4","1"],["1","1/2"]],"shift":["1","-1"]}"#);
    assert_eq!(
        normalize(&opposite).unwrap().case_label,
        ShiftCase::OppositeShift
    );
    let single = problem(r#"{"cov":[["4","1"],["1","1/2"]],"shift":["0","3"]}"#);
    let s = normalize(&single).unwrap();
    assert_eq!(
        (s.case_label, s.a, s.b, s.kappa_sq),
        (ShiftCase::SingleShift, rat(1, 2), int(4), int(9))
    );
}

#[test]
fn matrix_and_problem_views_agree() {
    let gamma = SquareMatrix::from_json(r#"[["2","1"],["1","2"]]"#).unwrap();
    assert!(ek_criterion(&gamma, &[int(1), int(1)]).unwrap());
    let p = problem(r#"{"cov":[["2","1"],["1","2"]],"shift":["1","1"]}"#);
    assert!(p.all_alpha_condition());
    let r = id_verdict(&p, &int(50), &[int(16)], &rat(1, 2), Mode::Float).unwrap();
    assert_eq!(r.verdict, Verdict::IDForAllAlpha);
}

#[test]
fn scan_critical_and_tail_fit_together() {
    let p = problem(r#"{"cov":[["4","1"],["1","1/2"]],"shift":["1","1"]}"#);
    let c = normalize(&p).unwrap();
    let (t, b) = (int(24), rat(1, 2));
    let fm = max_feasible_csq(&c, &t, &b, Mode::Float).unwrap();
    let cs = fm.c_star_sq.unwrap();
    assert!(scan_positivity(&c, &cs, &t, &b, Mode::Exact)
        .unwrap()
        .verdict
        .passed());
    let above = scan_positivity(
        &c,
        &just_above(&cs, &rat(1, 1_000_000_000)),
        &t,
        &b,
        Mode::Exact,
    )
    .unwrap();
    assert_eq!(above.verdict.violations().len(), 1);

    let report =
        estimate_critical_point(&p, &[int(8), int(16), int(24)], &b, 0.5, Mode::Float).unwrap();
    assert_eq!(report.status, ReportStatus::Estimated);
    let last = report.per_t.last().unwrap();
    assert_eq!(last.c_star_sq.as_ref(), Some(&cs));
    let (lo, hi) = report.bracket.unwrap();
    assert!(lo <= last.alpha_star && last.alpha_star <= hi);

    let small = tail_mass(&c, &int(1), &t, &b, &int(1)).unwrap();
    let large = tail_mass(&c, &int(100), &t, &b, &int(1)).unwrap();
    assert!(small.mass > 0.0 && small.mass <= large.mass);
    assert_eq!(
        small.cells,
        cutoff_set(&t, &int(1)).unwrap().len() - cutoff_set(&t, &b).unwrap().len()
    );
}

#[test]
fn series_csv_round_trip_and_limits() {
    let s = BivariateSeries::from_terms(
        2,
        3,
        [(0, 0, rat(1, 3)), (2, 1, rat(-5, 7)), (1, 3, int(4))],
    );
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    assert_eq!(
        BivariateSeries::read_csv(buf.as_slice()).unwrap(),
        s.truncate(2, 3)
    );
    let huge = "j,k,value\n4000,4000,1\n";
    assert!(matches!(
        BivariateSeries::read_csv(huge.as_bytes()),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn float_grid_signs_follow_exact_grid() {
    let c = CanonicalProblem::from_ab(rat(6, 5), int(5), ShiftCase::SingleShift).unwrap();
    let t = int(12);
    let idx = cutoff_set(&t, &rat(1, 2)).unwrap().indices();
    let c_sq: BigRational = rat(3, 2);
    let ex = coefficient_grid(&c, &t, &c_sq, &idx, Mode::Exact).unwrap();
    let fl = coefficient_grid(&c, &t, &c_sq, &idx, Mode::Float).unwrap();
    for (e, f) in ex.cells.iter().zip(&fl.cells) {
        let Value::Exact(r) = &e.r else {
            panic!("exact grid")
        };
        let got = f.r.to_f64().partial_cmp(&0.0).unwrap();
        assert_eq!(got, r.cmp(&BigRational::zero()), "({}, {})", e.j, e.k);
    }
}

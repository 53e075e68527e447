use netcon::numerics::StabilityClass;
use netcon::scenarios::{builtin, builtin_scenarios, check_case, predict_case, stability_case, validate_case, Prediction};

#[test]
fn every_builtin_validates() {
    for s in builtin_scenarios() {
        for case in s.cases().unwrap() {
            let report = validate_case(&case).unwrap();
            assert!(report.ok, "{}: {report:?}", case.label());
        }
    }
}

#[test]
fn every_builtin_expectation_holds() {
    for s in builtin_scenarios() {
        for case in s.cases().unwrap() {
            let outcomes = check_case(&case).unwrap();
            assert!(!outcomes.is_empty(), "{} checks nothing", case.label());
            for o in outcomes {
                println!("{} {:?}: {}", o.case, o.expectation, o.detail);
                assert!(o.passed, "{} failed {:?}: {}", o.case, o.expectation, o.detail);
            }
        }
    }
}

#[test]
fn robots_fifteen_is_marginal() {
    let case = builtin("robots").unwrap().case(Some("a=15")).unwrap();
    let report = stability_case(&case).unwrap();
    assert_eq!(report.classification, StabilityClass::Marginal);
    assert!(report.margin.abs() < 1e-6);
    assert_eq!(report.boundary, Some(15.0));
}

#[test]
fn building_stays_below_phase_change_temperature() {
    let case = builtin("building").unwrap().single_case(None).unwrap();
    let Prediction::Consensus { value, .. } = predict_case(&case).unwrap() else { panic!() };
    assert!(value < 23.0 && value > 20.0, "{value}");
}

use mks_verify::{run_criterion, run_suite, Session, VerifyOptions, CRITERIA};

fn session(kernel_scale: f64) -> Session {
    Session::new(VerifyOptions {
        kernel_scale,
        ..VerifyOptions::default()
    })
}

#[test]
fn fast_criteria_pass() {
    let s = session(1.0);
    for id in [1, 2, 3, 4, 10] {
        let r = run_criterion(&s, id);
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

#[test]
fn corrupted_kernel_scale_names_the_fixture_mismatch() {
    let s = session(0.5);
    let fixtures = run_criterion(&s, 1);
    assert!(!fixtures.passed);
    assert!(fixtures.detail.contains("green mismatch at"), "{}", fixtures.detail);
    // The cutoff table does not involve the kernel and still matches.
    assert!(!fixtures.detail.contains("cutoff mismatch"));
    let moll = run_criterion(&s, 2);
    assert!(!moll.passed);
    assert!(moll.detail.contains("mollified_kernel mismatch at"), "{}", moll.detail);
}

#[test]
fn criteria_are_numbered_one_to_twelve() {
    let ids: Vec<usize> = CRITERIA.iter().map(|c| c.id).collect();
    assert_eq!(ids, (1..=12).collect::<Vec<_>>());
    assert_eq!(CRITERIA[0].label(), "01-kernel-fixtures");
}

#[test]
fn unknown_ids_fail_and_selection_is_respected() {
    let opts = VerifyOptions {
        only: Some(vec![3, 99]),
        ..VerifyOptions::default()
    };
    let mut seen = Vec::new();
    let suite = run_suite(opts, |r| seen.push(r.name.clone()));
    assert_eq!(seen, ["03-spectral-plumbing", "99-unknown"]);
    assert!(suite.cases[0].passed);
    assert!(!suite.passed());
}

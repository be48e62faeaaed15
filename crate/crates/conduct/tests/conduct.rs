use bard_conduct::event::{CloseReason, EventKind, TrialEvent};
use bard_conduct::service::CreateTrial;
use bard_conduct::state::Stage;
use bard_conduct::{Conduct, ConductError, TrialState};
use bard_core::backfill::Assignment;
use bard_core::minimization::Arm;
use bard_core::stage2::Stage2Doses;

fn open() -> (tempfile::TempDir, Conduct) {
    let dir = tempfile::tempdir().unwrap();
    let c = Conduct::open(dir.path()).unwrap();
    (dir, c)
}

fn trial(c: &Conduct, id: &str) -> String {
    let req = CreateTrial { trial_id: Some(id.into()), preset: Some("bard-boin".into()), seed: Some(11), ..Default::default() };
    c.create_trial(req).unwrap().trial_id
}

fn cov(i: u32) -> Vec<usize> {
    vec![(i % 2) as usize, ((i / 2) % 2) as usize]
}

/// Enroll `n` patients and return their ids and doses.
fn enroll_n(c: &Conduct, id: &str, n: u32) -> Vec<(u32, usize)> {
    (0..n)
        .map(|i| {
            let r = c.enroll(id, &cov(i), true).unwrap();
            assert!(r.enrollment.enrolled, "{:?}", r.enrollment);
            (r.enrollment.patient_id.unwrap(), r.enrollment.dose.unwrap())
        })
        .collect()
}

fn outcome(c: &Conduct, id: &str, pid: u32, dlt: bool, response: bool) {
    c.record_outcome(id, pid, dlt, Some(response)).unwrap();
}

fn toxic(pid: u32, dose: usize) -> bool {
    (pid * 7 + dose as u32 * 3) % 10 < dose as u32 + 1
}

fn responds(pid: u32, dose: usize) -> bool {
    (pid * 3 + dose as u32) % 4 == 0
}

/// Run stage 1 to its end with the scripted outcomes above.
fn run_stage1(c: &Conduct, id: &str) {
    for _ in 0..200 {
        if c.summary(id).unwrap().ready_to_advance {
            return;
        }
        for i in 0..3 {
            if !c.enroll(id, &cov(i), i != 2).unwrap().enrollment.enrolled {
                break;
            }
        }
        let open: Vec<_> = c.state(id).unwrap().patients.into_iter().filter(|p| p.dlt.is_none()).collect();
        for p in open {
            outcome(c, id, p.id, toxic(p.id, p.dose), responds(p.id, p.dose));
        }
    }
    panic!("stage 1 did not end");
}

#[test]
fn third_dlt_eliminates_dose() {
    let (_d, c) = open();
    let id = trial(&c, "elim");
    for (p, dose) in enroll_n(&c, &id, 3) {
        assert_eq!(dose, 0);
        outcome(&c, &id, p, false, false);
    }
    assert_eq!(c.summary(&id).unwrap().current_dose, 1);
    let ps = enroll_n(&c, &id, 3);
    outcome(&c, &id, ps[0].0, true, false);
    outcome(&c, &id, ps[1].0, true, false);
    assert!(c.summary(&id).unwrap().eliminated.is_empty());
    outcome(&c, &id, ps[2].0, true, false);
    let s = c.summary(&id).unwrap();
    assert_eq!(s.eliminated, vec![1, 2, 3, 4]);
    assert_eq!(s.current_dose, 0);
    let closed: Vec<usize> = c
        .events(&id)
        .unwrap()
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::DoseClosed { dose, reason: CloseReason::Eliminated } => Some(dose),
            _ => None,
        })
        .collect();
    assert_eq!(closed, vec![1, 2, 3, 4]);
    let rule = s.last_rule.unwrap();
    assert!(rule.contains("3/3") && rule.contains("lambda_d=0.298"), "{rule}");
}

#[test]
fn late_response_opens_backfill() {
    let (_d, c) = open();
    let id = trial(&c, "bf");
    let first = enroll_n(&c, &id, 3);
    for &(p, _) in &first {
        c.record_outcome(&id, p, false, None).unwrap();
    }
    for (p, _) in enroll_n(&c, &id, 3) {
        outcome(&c, &id, p, false, false);
    }
    let s = c.summary(&id).unwrap();
    assert_eq!((s.current_dose, s.open_backfill.clone()), (2, vec![]));
    let s = c.record_outcome(&id, first[0].0, false, Some(true)).unwrap();
    assert_eq!(s.open_backfill, vec![0, 1]);

    // Cohort slots come first, then the highest open backfill dose.
    let r = c.enroll(&id, &[0, 0], true).unwrap();
    assert_eq!(r.enrollment.assignment, Some(Assignment::EscalationCohort(2)));
    enroll_n(&c, &id, 2);
    let r = c.enroll(&id, &[0, 0], true).unwrap();
    assert_eq!(r.enrollment.assignment, Some(Assignment::Backfill(1)));
}

#[test]
fn outcome_errors_leave_log_untouched() {
    let (_d, c) = open();
    let id = trial(&c, "errs");
    let ps = enroll_n(&c, &id, 2);
    let before = c.events(&id).unwrap().len();
    assert!(matches!(c.record_outcome(&id, 9, false, None), Err(ConductError::NotFound(_))));
    outcome(&c, &id, ps[0].0, false, true);
    let after = c.events(&id).unwrap().len();
    assert!(after > before);
    // Identical resubmission is a no-op; a different one conflicts.
    c.record_outcome(&id, ps[0].0, false, Some(true)).unwrap();
    assert!(matches!(c.record_outcome(&id, ps[0].0, true, Some(true)), Err(ConductError::Conflict(_))));
    assert!(matches!(c.record_outcome(&id, ps[0].0, false, Some(false)), Err(ConductError::Conflict(_))));
    assert_eq!(c.events(&id).unwrap().len(), after);
    assert!(matches!(c.enroll(&id, &[0, 5], true), Err(ConductError::Validation(_))));
    assert!(matches!(c.advance(&id, None), Err(ConductError::State(_))));
    assert!(matches!(c.state("nope"), Err(ConductError::NotFound(_))));
}

#[test]
fn declined_enrollment_is_an_audit_note() {
    let (_d, c) = open();
    let mut design = bard_core::config::DesignConfig::preset("bard-boin").unwrap();
    design.backfill = false;
    let req = CreateTrial { trial_id: Some("full".into()), design: Some(design), seed: Some(1), ..Default::default() };
    c.create_trial(req).unwrap();
    enroll_n(&c, "full", 3);
    let n = c.events("full").unwrap().len();
    let r = c.enroll("full", &[1, 1], true).unwrap();
    assert!(!r.enrollment.enrolled && r.enrollment.advisory.is_some());
    let ev = c.events("full").unwrap();
    assert_eq!(ev.len(), n + 1);
    assert!(matches!(ev.last().unwrap().kind, EventKind::DecisionTaken(_)));
    assert_eq!(c.state("full").unwrap().patients.len(), 3);
}

#[test]
fn full_trial_and_replay() {
    let (dir, c) = open();
    let id = trial(&c, "full-run");
    run_stage1(&c, &id);
    let st = c.state(&id).unwrap();
    let mtd = st.stage1.current_dose;
    let adv = c.advance(&id, None).unwrap();
    let plan = adv.plan.unwrap();
    let eligible_at = |j: usize| st.patients.iter().filter(|p| p.dose == j && p.eligible).count() as u32;
    match plan.doses.low {
        Some(l) => {
            assert_eq!(l + 1, plan.doses.high);
            assert_eq!(plan.quota, 40u32.saturating_sub(eligible_at(l) + eligible_at(plan.doses.high)));
        }
        None => assert_eq!(plan.doses.high, 0),
    }
    assert!(adv.warnings.is_empty(), "{:?} (current dose {mtd})", adv.warnings);

    let mut ids = Vec::new();
    for i in 0..plan.quota {
        let r = c.enroll(&id, &cov(i + 1), true).unwrap();
        assert_eq!(r.enrollment.stage, 2);
        let arm = r.enrollment.arm.unwrap();
        assert_eq!(r.enrollment.dose, Some(plan.doses.dose(arm)));
        ids.push((r.enrollment.patient_id.unwrap(), r.enrollment.dose.unwrap()));
    }
    assert!(matches!(c.enroll(&id, &[0, 0], true), Err(ConductError::Quota(_))));
    let partial = c.report(&id).unwrap();
    assert!(!partial.is_final && !partial.caveats.is_empty());
    for (p, dose) in ids {
        outcome(&c, &id, p, toxic(p, dose), responds(p, dose) || p % 3 == 0);
    }
    let st = c.state(&id).unwrap();
    assert_eq!(st.summary.stage, Stage::Completed);
    let report = c.report(&id).unwrap();
    assert!(report.is_final);
    let bal = report.balance.unwrap();
    for f in &bal.factors {
        for a in 0..2 {
            assert_eq!(f.iter().map(|l| l[a]).sum::<u32>(), bal.totals[a]);
        }
    }
    assert_eq!(report.obd_margin, st.obd.as_ref().unwrap().margin);
    assert!(matches!(c.enroll(&id, &[0, 0], true), Err(ConductError::State(_))));

    // A fresh process replays the log to the same state.
    let c2 = Conduct::open(dir.path()).unwrap();
    assert_eq!(c2.state(&id).unwrap(), st);
    assert_eq!(c2.report(&id).unwrap(), c.report(&id).unwrap());

    // Snapshot then replay equals direct replay, at every cut.
    let events = c.events(&id).unwrap();
    let direct = TrialState::replay(&events).unwrap().view();
    for cut in [1, events.len() / 3, events.len() / 2, events.len() - 1] {
        let mut s = TrialState::replay(&events[..cut]).unwrap_or_else(|_| {
            // A cut between a command's events is not a consistent snapshot.
            let k = (1..cut).rev().find(|&k| TrialState::replay(&events[..k]).is_ok()).unwrap();
            TrialState::replay(&events[..k]).unwrap()
        });
        for e in &events[s.seq() as usize..] {
            s.apply(e).unwrap();
        }
        assert_eq!(s.view(), direct);
    }
}

#[test]
fn tampered_log_names_the_event() {
    let (_d, c) = open();
    let id = trial(&c, "tamper");
    run_stage1(&c, &id);
    c.advance(&id, None).unwrap();
    for i in 0..4 {
        c.enroll(&id, &cov(i), true).unwrap();
    }
    let events = c.events(&id).unwrap();
    let k = events.iter().rposition(|e| matches!(e.kind, EventKind::PatientEnrolled { arm: Some(_), .. })).unwrap();
    let mut bad: Vec<TrialEvent> = events.clone();
    if let EventKind::PatientEnrolled { arm, dose, .. } = &mut bad[k].kind {
        let flipped = arm.unwrap().other();
        *arm = Some(flipped);
        *dose = Stage2Doses { low: Some(*dose), high: *dose }.dose(flipped);
    }
    match TrialState::replay(&bad) {
        Err(ConductError::Replay { seq, .. }) => assert_eq!(seq, bad[k].seq),
        other => panic!("expected a replay error, got {other:?}"),
    }
    let mut gap = events.clone();
    gap.remove(3);
    assert!(matches!(TrialState::replay(&gap), Err(ConductError::Replay { seq, .. }) if seq == events[4].seq));
    // A corrupt line in the store is reported by position.
    let path = c.store().root().join("trials").join(format!("{id}.jsonl"));
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&path, text).unwrap();
    let c2 = Conduct::open(c.store().root()).unwrap();
    assert!(matches!(c2.state(&id), Err(ConductError::Replay { seq, .. }) if seq == events.len() as u64 + 1));
}

#[test]
fn advance_variants() {
    // All toxic at the first dose: terminated, no plan.
    let (_d, c) = open();
    let id = trial(&c, "toxic");
    for (p, _) in enroll_n(&c, &id, 3) {
        outcome(&c, &id, p, true, false);
    }
    let s = c.summary(&id).unwrap();
    assert!(s.ready_to_advance);
    let adv = c.advance(&id, None).unwrap();
    assert!(adv.plan.is_none());
    assert_eq!(adv.summary.stage, Stage::Terminated);
    let rep = c.report(&id).unwrap();
    assert!(rep.obd_margin.is_none() && !rep.caveats.is_empty());

    // MTD at the lowest dose: single-dose plan.
    let id = trial(&c, "single");
    for (p, _) in enroll_n(&c, &id, 3) {
        outcome(&c, &id, p, false, true);
    }
    for (i, (p, _)) in enroll_n(&c, &id, 3).into_iter().enumerate() {
        outcome(&c, &id, p, i < 2, false);
    }
    run_stage1(&c, &id);
    let st = c.state(&id).unwrap();
    let mtd = bard_core::boin::select_mtd_boin(&st.stage1.tally, &st.design.boin_params().unwrap());
    let adv = c.advance(&id, None).unwrap();
    let plan = adv.plan.unwrap();
    assert_eq!(Some(plan.doses.high), mtd);
    if mtd == Some(0) {
        assert!(plan.doses.is_single());
        let r = c.enroll(&id, &[0, 0], true).unwrap();
        assert_eq!(r.enrollment.arm, Some(Arm::High));
    }

    // Override with a departure from the data: accepted with warnings.
    let id = trial(&c, "override");
    run_stage1(&c, &id);
    let adv = c.advance(&id, Some(Stage2Doses { low: Some(0), high: 4 })).unwrap();
    assert!(adv.warnings.iter().any(|w| w.contains("not adjacent")), "{:?}", adv.warnings);
    let ev = c.events(&id).unwrap();
    assert!(matches!(ev.last().unwrap().kind, EventKind::StageAdvanced { overridden: true, .. }));
}

#[test]
fn allocation_is_reproducible() {
    let (_d, a) = open();
    let (_e, b) = open();
    for c in [&a, &b] {
        let id = trial(c, "same");
        run_stage1(c, &id);
        c.advance(&id, None).unwrap();
    }
    for i in 0..10 {
        let x = a.enroll("same", &cov(i * 3), true).unwrap().enrollment;
        let y = b.enroll("same", &cov(i * 3), true).unwrap().enrollment;
        assert_eq!(x, y);
    }
}

mod common;

use convroutine::bundled::{CONVEYOR_MANUAL, SAMPLE_REPORT};
use convroutine::procedure::{emit_flowchart, extract_report_steps, parse_procedure, validate_trace, ProcedureError};

#[test]
fn parsed_graph_matches_hand_successors() {
    let g = parse_procedure(CONVEYOR_MANUAL).unwrap();
    assert_eq!(g.len(), 18);
    assert_eq!(g.start_id, 1);
    for (id, want) in common::conveyor_successors() {
        assert_eq!(g.successors(id), want, "step {id}");
    }
    assert_eq!(g.terminal_ids.iter().copied().collect::<Vec<_>>(), vec![18]);
}

#[test]
fn brute_force_walks_agree_with_validator() {
    let g = parse_procedure(CONVEYOR_MANUAL).unwrap();
    let succ = common::conveyor_successors();
    let walks = common::all_walks(&succ, 6);
    let mut checked = 0;
    for walk in &walks {
        let v = validate_trace(&g, walk);
        assert!(v.valid, "{walk:?}");
        assert_eq!(v.reached_terminal, walk.last() == Some(&18));
        checked += 1;
        // Every single-position substitution, valid or not.
        for pos in 0..walk.len() {
            for id in 1..=19u32 {
                if id == walk[pos] {
                    continue;
                }
                let mut t = walk.clone();
                t[pos] = id;
                let v = validate_trace(&g, &t);
                let expected = common::oracle_first_violation(&succ, &t);
                assert_eq!(v.valid, expected.is_none(), "{t:?}");
                assert_eq!(v.first_violation.map(|x| x.index), expected, "{t:?}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 1000, "only {checked} sequences");
}

#[test]
fn sample_report_trace() {
    let g = parse_procedure(CONVEYOR_MANUAL).unwrap();
    let steps = extract_report_steps(SAMPLE_REPORT);
    assert_eq!(steps, vec![1, 2, 3, 4, 6, 13]);
    let v = validate_trace(&g, &steps);
    assert!(v.valid);
    assert!(!v.reached_terminal);

    let bad = validate_trace(&g, &[1, 3]);
    assert!(!bad.valid);
    let violation = bad.first_violation.unwrap();
    assert_eq!((violation.index, violation.from, violation.to), (1, Some(1), 3));
}

#[test]
fn flowchart_shape() {
    let g = parse_procedure(CONVEYOR_MANUAL).unwrap();
    let chart = emit_flowchart(&g);
    assert!(chart.starts_with("flowchart TD"));
    assert!(chart.contains("S2 -->|oggetti incastrati| S3"));
    assert!(chart.contains("S18([\""));
    let edges = chart.lines().filter(|l| l.contains("-->")).count();
    let expected: usize = common::conveyor_successors().values().map(|s| s.len()).sum();
    assert_eq!(edges, expected);
}

#[test]
fn dangling_reference_is_rejected() {
    let text = "Passo 1:\nInizio.\n\nPasso 2:\nSe serve, passare al Passo 99.\n\nPasso 3:\nFine procedura.\n";
    assert!(matches!(
        parse_procedure(text),
        Err(ProcedureError::DanglingTarget { target: 99, .. })
    ));
}

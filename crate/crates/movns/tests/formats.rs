use std::path::Path;

use movns::formats::{
    decode_component, encode_component, events_csv, read_snapshot, snapshot_meta, trajectory_csv, verify_manifest,
    write_output, Checkpoint, Manifest, SNAPSHOT_HEADER,
};
use movns_core::analytic::{initial_field, InitialCondition};
use movns_core::fields::{Grid, VectorField};
use movns_core::rng::CounterRng;
use movns_core::sde::{DiagnosticRow, Event, Snapshot, SolverState, Trajectory};

fn awkward_field(g: Grid) -> VectorField {
    let mut v = initial_field(&InitialCondition::Random { amplitude: 1.0, modes: 5, seed: 9 }, g).unwrap();
    v.comp_mut(0)[g.node(3, 4)] = 1.0 / 3.0;
    v.comp_mut(1)[g.node(2, 2)] = f64::MIN_POSITIVE / 8.0;
    v.comp_mut(1)[g.node(5, 1)] = -0.0;
    v
}

#[test]
fn snapshot_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::new(9).unwrap();
    let s = Snapshot { step: 12, t: 0.1 + 0.2, t0: 0.05, v: awkward_field(g) };
    let names = ["s.u0.bin", "s.u1.bin"];
    for (c, n) in names.iter().enumerate() {
        write_output(dir.path(), n, &encode_component(&s.v, c as u32, s.t)).unwrap();
    }
    write_output(dir.path(), "s.meta", snapshot_meta(&s, names).as_bytes()).unwrap();
    let back = read_snapshot(&dir.path().join("s.meta")).unwrap();
    assert_eq!(back.step, 12);
    assert_eq!(back.t.to_bits(), s.t.to_bits());
    assert_eq!(back.t0.to_bits(), s.t0.to_bits());
    let bits = |v: &VectorField| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.v), bits(&s.v));
}

#[test]
fn snapshot_layout_is_row_major_little_endian() {
    let g = Grid::new(8).unwrap();
    let v = VectorField::from_fn(g, |y| [y[0] + 10.0 * y[1], -1.0]);
    let bytes = encode_component(&v, 0, 0.25);
    assert_eq!(&bytes[..8], b"MOVNSNAP");
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
    let (h, data) = decode_component(&bytes, Path::new("x")).unwrap();
    assert_eq!((h.n, h.component, h.t), (8, 0, 0.25));
    let at = |i: usize, j: usize| {
        let o = SNAPSHOT_HEADER + 8 * (j * 9 + i);
        f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
    };
    assert_eq!(at(1, 0), g.coord(1));
    assert_eq!(at(0, 1), 10.0 * g.coord(1));
    assert_eq!(data.len(), 81);
}

#[test]
fn corrupt_snapshots_are_rejected() {
    let g = Grid::new(8).unwrap();
    let mut bytes = encode_component(&VectorField::zeros(g), 1, 0.0);
    assert!(decode_component(&bytes[..bytes.len() - 8], Path::new("x")).is_err());
    bytes[0] = b'X';
    let e = decode_component(&bytes, Path::new("x")).unwrap_err();
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn checkpoint_json_round_trips_bitwise() {
    let g = Grid::new(8).unwrap();
    let mut state = SolverState::new(awkward_field(g), 12.5, CounterRng::new(u64::MAX, 3));
    state.t = 0.1 + 0.2;
    state.theta_sup = 2.0f64.sqrt();
    let traj = Trajectory {
        rows: vec![DiagnosticRow { step: 0, t: 0.0, t0: 0.0, cutoff: 12.5, l2: 0.7, h1: 1e-300, theta: 0.3, max_div: 1e-17 }],
        events: vec![Event::Escalation { step: 3, t: 0.003, from: 12.5, to: 25.0 }],
        snapshots: vec![Snapshot { step: 0, t: 0.0, t0: 0.0, v: state.v.clone() }],
    };
    let ck = Checkpoint::new("abc".into(), 7, 2, state.clone(), traj.clone());
    let back = Checkpoint::from_json(&ck.to_json().unwrap(), Path::new("c")).unwrap();
    assert_eq!(back, ck);
    let bits = |v: &VectorField| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.state.v), bits(&state.v));
}

#[test]
fn checkpoint_rejects_non_finite_state_and_bad_storage() {
    let g = Grid::new(8).unwrap();
    let mut state = SolverState::new(VectorField::zeros(g), 1.0, CounterRng::new(0, 0));
    state.theta_sup = f64::NAN;
    let empty = Trajectory { rows: vec![], events: vec![], snapshots: vec![] };
    assert_eq!(Checkpoint::new("h".into(), 0, 0, state, empty.clone()).to_json().unwrap_err().exit_code(), 3);
    let good = Checkpoint::new("h".into(), 0, 0, SolverState::new(VectorField::zeros(g), 1.0, CounterRng::new(0, 0)), empty);
    let text = good.to_json().unwrap().replacen("[0.0,", "[", 1);
    assert!(Checkpoint::from_json(&text, Path::new("c")).is_err());
}

#[test]
fn manifest_is_sorted_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_output(dir.path(), "b/x.csv", b"2\n").unwrap();
    let a = write_output(dir.path(), "a.csv", b"1\n").unwrap();
    let m = Manifest::new("run", "cfg", 1, vec![b, a]);
    assert_eq!(m.files[0].path, "a.csv");
    assert_eq!(m.files[0].sha256, "4355a46b19d348dc2f57c046f8ef63d4538ebb936000f3c9ee954a27460dd865");
    assert!(!m.to_json().contains("time"));
    verify_manifest(dir.path(), &m).unwrap();
    std::fs::write(dir.path().join("b/x.csv"), b"3\n").unwrap();
    assert!(verify_manifest(dir.path(), &m).is_err());
}

#[test]
fn csv_values_parse_back_exactly() {
    let rows = vec![DiagnosticRow { step: 4, t: 0.1 + 0.2, t0: 0.0, cutoff: 64.0, l2: 1.0 / 3.0, h1: 7e-310, theta: 1.5, max_div: 0.0 }];
    let text = trajectory_csv(&rows);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,t,t0,cutoff,l2,h1,theta,max_div");
    let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cells[1].parse::<f64>().unwrap(), 0.1 + 0.2);
    assert_eq!(cells[4].parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(cells[5].parse::<f64>().unwrap(), 7e-310);
    let ev = events_csv(&[
        Event::Rereference { step: 5, t: 0.5, from_t0: 0.0, deviation: 0.1, forced: true },
        Event::CeilingHit { step: 6, t: 0.6, norm: 99.0 },
    ]);
    for l in ev.lines() {
        assert_eq!(l.split(',').count(), 9, "{l}");
    }
    assert!(ev.contains(",rereference,0e0,1e-1,true,,,"));
}

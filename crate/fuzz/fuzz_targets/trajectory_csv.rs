#![no_main]

use eal_core::dynsys::Trajectory;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(traj) = Trajectory::read_csv(data) else { return };
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let again = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(again.columns, traj.columns);
    assert!(again
        .states
        .iter()
        .zip(&traj.states)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
});

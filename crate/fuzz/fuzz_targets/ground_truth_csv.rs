// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use libfuzzer_sys::fuzz_target;
use pretreat::series::{read_ground_truth, write_ground_truth};

fuzz_target!(|data: &[u8]| {
    let Ok(truth) = read_ground_truth(data) else { return };
    let mut buf = Vec::new();
    write_ground_truth(&truth, &mut buf).expect("write");
    let again = read_ground_truth(buf.as_slice()).expect("re-read");
    assert_eq!(again.spikes.len(), truth.spikes.len());
    assert_eq!(again.change_points.len(), truth.change_points.len());
});

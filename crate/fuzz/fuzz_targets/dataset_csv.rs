// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use libfuzzer_sys::fuzz_target;
use pretreat::series::{read_csv, write_csv, Schema};

fuzz_target!(|data: &[u8]| {
    let Ok(loaded) = read_csv(data, &Schema::Infer) else { return };
    let ds = &loaded.dataset;
    for s in ds.signals() {
        assert_eq!(s.len(), ds.n_samples());
        assert!(s.values().iter().zip(s.missing()).all(|(v, &m)| m == v.is_nan()));
    }
    // whatever parses must survive a write and re-read
    let mut buf = Vec::new();
    write_csv(ds, &mut buf).expect("write");
    let again = read_csv(buf.as_slice(), &Schema::Infer).expect("re-read");
    assert_eq!(again.dataset.n_samples(), ds.n_samples());
    assert_eq!(again.dataset.n_signals(), ds.n_signals());
});

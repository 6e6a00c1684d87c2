// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use libfuzzer_sys::fuzz_target;
use pretreat::pipeline::artifacts::*;

fuzz_target!(|data: &[u8]| {
    let Some((&which, body)) = data.split_first() else { return };
    match which % 8 {
        0 => drop(read_rows::<ChangePointRow, _>(body)),
        1 => drop(read_rows::<MaskRow, _>(body)),
        2 => drop(read_rows::<BandRow, _>(body)),
        3 => drop(read_rows::<ExplainedRow, _>(body)),
        4 => drop(read_rows::<T2Row, _>(body)),
        5 => drop(read_rows::<PeriodRow, _>(body)),
        6 => drop(read_rows::<MapRow, _>(body)),
        _ => drop(read_rows::<LabelRow, _>(body)),
    }
});

// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

pub mod dbscan_oracle;
pub mod f_oracle;

//! Process exit codes.

use labelsynth::Error;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 1;
/// Input/output failures and command-line usage errors.
pub const IO: i32 = 2;
pub const GENERATION: i32 = 3;

pub fn code_for(e: &Error) -> i32 {
    if e.is_config() {
        CONFIG
    } else if e.is_io() {
        IO
    } else {
        GENERATION
    }
}

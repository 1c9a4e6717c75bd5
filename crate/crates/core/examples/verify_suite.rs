//! The property suite, clean and with a deliberately broken kernel combination.

use odconv::verify::{self, Fault};

fn main() {
    for (label, fault) in [("clean", Fault::None), ("combine-order fault", Fault::CombineOrder)] {
        println!("{label}");
        for o in verify::run(None, fault, 11) {
            println!("  {:<20} {}  {}", o.name, if o.passed { "pass" } else { "FAIL" }, o.detail);
        }
    }
}

#![no_main]

use libfuzzer_sys::fuzz_target;
use wongzakai::grid::TimeGrid;
use wongzakai::registry;

// Every registry resolver goes through the same expression parser.
fuzz_target!(|s: &str| {
    let _ = registry::parse_field_expr(s);
    let _ = registry::drift(s, 1);
    let _ = registry::diffusion(s, 2);
    let _ = registry::family(s);
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let _ = registry::target(s, &[0.0], grid);
});

//! Finite-difference check of every parameter gradient of the toy network.
//!
//! Usage: `gradient_check [samples_per_param] [step]`.

use hmjnd::train::check_network_gradients;

fn main() -> hmjnd::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples = args.next().map_or(50, |s| s.parse().expect("sample count"));
    let h = args.next().map_or(1e-5, |s| s.parse().expect("step"));
    let report = check_network_gradients(samples, h, 1e-3, 7)?;
    println!(
        "checked {} coordinates, {:.2}% within 1e-3, worst relative error {:.2e}",
        report.checked,
        100.0 * report.pass_rate(),
        report.worst_rel
    );
    for m in report.failures.iter().take(10) {
        println!(
            "  {}[{}]: analytic {:.6e} numeric {:.6e}",
            m.name, m.index, m.analytic, m.numeric
        );
    }
    Ok(())
}

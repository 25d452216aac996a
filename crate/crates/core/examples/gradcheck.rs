//! Runs every registered gradient check and prints a summary per group.

use std::collections::BTreeMap;

use facefill::checks::run_all;
use facefill::store::{generate_synthetic_model, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let t = std::time::Instant::now();
    let out = run_all(&model, 0, None);
    let mut groups: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for o in &out {
        let g = groups.entry(o.group).or_default();
        g.0 += 1;
        g.1 += o.passed() as usize;
        if let Ok(r) = &o.report {
            g.2 = g.2.max(r.max_rel_err);
        }
    }
    for (name, (n, ok, worst)) in groups {
        println!("{name:10} {ok}/{n} passed, worst rel err {worst:.2e}");
    }
    println!("{} checks in {:.1}s", out.len(), t.elapsed().as_secs_f64());
    Ok(())
}

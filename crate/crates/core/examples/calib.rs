use aslip::sampling::*;
use aslip::dynamics::*;
use std::time::Instant;
fn main() {
    let t0 = Instant::now();
    let recs = sample_dataset(20000, &Bounds::default(), &ModelParams::default(), 1).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let nv = recs.iter().filter(|r| r.is_valid()).count();
    let mut tags = std::collections::HashMap::new();
    for r in &recs { *tags.entry(r.tag.as_str()).or_insert(0) += 1; }
    println!("20000 samples in {dt:.2}s ({:.0}/s), valid fraction {:.3}", 20000.0/dt, nv as f64/20000.0);
    println!("{tags:?}");
}

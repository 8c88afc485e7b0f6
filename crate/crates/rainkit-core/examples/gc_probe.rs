fn main() {
    let reports = rainkit_core::gradcheck::run_suites(&rainkit_core::gradcheck::GROUPS, 12345).unwrap();
    let mut worst: f64 = 0.0;
    for r in &reports {
        let ok = r.passed(rainkit_core::gradcheck::GRADCHECK_TOL);
        println!("{:<38} {:>12.3e}  {}", r.op, r.max_rel_err, if ok { "PASS" } else { "FAIL" });
        worst = worst.max(r.max_rel_err);
    }
    println!("worst: {worst:.3e}  ({} ops)", reports.len());
}

use pathstress::suites;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "validation".into());
    let rep = match which.as_str() {
        "validation" => suites::run_validation_suite(None),
        "islands" => suites::run_islands_suite(None),
        "crescent" => suites::run_crescent_suite(None),
        _ => panic!("unknown suite"),
    }
    .unwrap();
    let mut out = Vec::new();
    rep.write_summary(&mut out).unwrap();
    print!("{}", String::from_utf8(out).unwrap());
}

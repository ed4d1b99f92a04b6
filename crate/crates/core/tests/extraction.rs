mod support;

use support::extraction::{extraction_oracle, repair_reachability, two_hop_containment};

#[test]
fn path_extraction_matches_exhaustive_enumeration() {
    println!("{}", extraction_oracle(50, 5).unwrap());
}

#[test]
fn repaired_subgraphs_reach_both_query_objects() {
    println!("{}", repair_reachability(1000, 6).unwrap());
}

#[test]
fn two_hop_structures_are_exact_balls() {
    println!("{}", two_hop_containment(200, 7).unwrap());
}

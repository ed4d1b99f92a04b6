mod support;

#[test]
fn tape_gradients_match_central_differences() {
    println!("{}", support::gradients::full_model_gradcheck(25, 1e-4).unwrap());
}

#[path = "common/gradcheck.rs"]
mod gradcheck;

#[test]
fn attention_projection_normalization_gradients() {
    let worst = gradcheck::worst_error(2024, false, 20);
    println!("attention path: max relative error {worst:.3e}");
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn graph_encoder_gradients() {
    let worst = gradcheck::worst_error(77, true, 20);
    println!("graph path: max relative error {worst:.3e}");
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

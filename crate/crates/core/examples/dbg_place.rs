use unseg::segmodel::generate_scene;
fn main() {
    for seed in 0..50u64 {
        match generate_scene(seed, 48, 48, 3) {
            Ok(_) => {}
            Err(e) => println!("seed {} failed: {}", seed, e),
        }
    }
    for seed in 0..20u64 {
        match generate_scene(seed, 32, 32, 2) {
            Ok(_) => {}
            Err(e) => println!("32x32 seed {} failed: {}", seed, e),
        }
    }
    println!("done");
}

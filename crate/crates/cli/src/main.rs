fn main() {
    println!("symdial");
}

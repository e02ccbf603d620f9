fn main() {
    println!("donorsim: command-line interface under construction");
}

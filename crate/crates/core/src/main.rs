fn main() {
    std::process::exit(pathlp::cli_main());
}

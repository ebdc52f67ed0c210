fn main() {
    std::process::exit(dob_cbf::cli::run());
}

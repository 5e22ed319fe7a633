fn main() {
    std::process::exit(spde_rml::cli_io::cli_dispatch(std::env::args_os()));
}

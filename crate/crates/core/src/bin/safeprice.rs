fn main() {
    std::process::exit(safeprice::cli_run(std::env::args_os()));
}

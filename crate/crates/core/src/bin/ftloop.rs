fn main() {
    ftloop::adapter::mock::dispatch_if_requested();
    std::process::exit(ftloop::cli::main());
}

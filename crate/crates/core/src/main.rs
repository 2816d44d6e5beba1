use clap::Parser;

fn main() {
    let args = loopbound::cli::Args::parse();
    std::process::exit(loopbound::cli::run(args));
}

use clap::Parser;

fn main() -> anyhow::Result<()> {
    bpa_lab::cli::run(bpa_lab::cli::Cli::parse())
}

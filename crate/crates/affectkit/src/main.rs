use clap::Parser;

fn main() -> anyhow::Result<()> {
    affectkit::cli::run(affectkit::cli::Cli::parse())?;
    Ok(())
}

use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    toot_gateway::cli::execute(toot_gateway::cli::Cli::parse())
}

fn main() -> anyhow::Result<()> {
    shredrec::cli::run()
}

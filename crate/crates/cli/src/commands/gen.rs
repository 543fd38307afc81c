use crate::cli::CommonArgs;
use crate::commands::{Context, Datasets};
use crate::error::CliError;

pub fn cmd_gen(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Context::open(args)?;
    let data = Datasets::generate(&ctx.cfg)?;
    data.save(&ctx.dir)?;
    println!("generated datasets under {} (world {})", ctx.dir.root.display(), ctx.cfg.world.hash());
    for (name, d) in data.named() {
        let labeled = d.tasks.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
        println!(
            "  {name:<18} kind={:<9} n={:<6} tasks=[{labeled}]",
            d.kind.as_str(),
            d.len()
        );
    }
    Ok(())
}

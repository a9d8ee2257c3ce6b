use clap::Parser;

fn main() {
    let args = occamlme::Args::parse();
    match occamlme::execute(&args) {
        Ok(paths) => {
            for path in paths {
                println!("{}", path.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

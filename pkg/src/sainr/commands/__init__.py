# Pipeline stages behind the CLI subcommands

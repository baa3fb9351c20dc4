# Command-line surface: subcommands, file formats and text reports

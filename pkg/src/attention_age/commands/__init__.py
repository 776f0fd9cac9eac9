# Command implementations behind cli.py, one module per command

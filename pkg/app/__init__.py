# Initialize app package

# Note: logging is configured by cli.main() only. Do not import the CLI or
# templates here so library imports stay free of side effects.

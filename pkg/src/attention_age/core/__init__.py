# Core utilities: configuration, paths, errors, checkpoints

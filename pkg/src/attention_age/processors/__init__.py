# Domain processors: label distributions, attention, data, metrics, training

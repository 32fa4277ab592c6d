"""City-wide application: image scoring, zone aggregation and deviation decomposition."""

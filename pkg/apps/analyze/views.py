DERIVED_FILE = "derived.csv"
METRICS_FILE = "metrics.json"

SERIES_FILE = "simulation.csv"
SUMMARY_FILE = "summary.json"

HISTORY_FILE = "history.csv"
BEST_FILE = "best_params.json"
COMPARISON_FILE = "comparison.csv"

TABLE_FILE = "compare.csv"
TRACES_FILE = "traces_{kind}.csv"

REPORT_FILE = "fuel_curve.json"
RESIDUALS_FILE = "fuel_residuals.csv"

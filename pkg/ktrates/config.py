import os

OUT_DIR = os.getenv("KTRATES_OUT_DIR", "./out")
MAX_WORKERS = int(os.getenv("KTRATES_MAX_WORKERS", "4"))
LOG_LEVEL = os.getenv("KTRATES_LOG_LEVEL", "INFO")
SEED = int(os.getenv("KTRATES_SEED", "0"))

# explicit index window for diagonal sups before tail certification kicks in
DIAGONAL_SCAN = int(os.getenv("KTRATES_DIAGONAL_SCAN", "10000"))
DIAGONAL_SCAN_CAP = 2 ** 22
SYMBOL_GRID = int(os.getenv("KTRATES_SYMBOL_GRID", "4096"))

DEFAULT_C = 0.5
C_SWEEP = (0.25, 0.5, 0.75)
BETA_FACTOR = 3.0 / 64.0
LB_MARGIN = 2.0

TRUNCATION_MAX = 4096
SERIES_MAX_TERMS = 10 ** 7
CSV_FLOAT_FORMAT = "%.16e"

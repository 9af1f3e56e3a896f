import os
from dotenv import load_dotenv

load_dotenv()

OUTPUT_DIR = os.getenv("DYNA_OUTPUT_DIR", "runs")
RUNS_DB = os.getenv("DYNA_RUNS_DB", "runs.db")
LOG_LEVEL = os.getenv("DYNA_LOG_LEVEL", "INFO").upper()
ABLATION_WORKERS = int(os.getenv("DYNA_WORKERS", "1"))

DEFAULT_CONFIG = os.getenv("DYNA_CONFIG", "configs/base.cfg")

CALIBRATION_FRACTION = 0.85
CALIBRATION_TAIL_FRACTION = 0.1
CALIBRATION_FILE = "calibration.json"

HEATMAP_WARMUP_STEPS = 50
HEATMAP_MEASURE_STEPS = 250
HEATMAP_TRIALS = 3
HEATMAP_GRID_SIZE = 9

ABLATION_LENGTHS = (16, 20, 24, 28, 32)

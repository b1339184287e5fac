import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Logging Configuration
LTAG_LOG = os.getenv("LTAG_LOG", "INFO")

# Bus Configuration
BUS_HOST = os.getenv("BUS_HOST", "127.0.0.1")
BUS_BASE_PORT = int(os.getenv("BUS_BASE_PORT", "8765"))
BUS_RECONNECT_INTERVAL = float(os.getenv("BUS_RECONNECT_INTERVAL", "0.05"))
BUS_MAX_RECONNECT_INTERVAL = float(os.getenv("BUS_MAX_RECONNECT_INTERVAL", "2.0"))

# Central Unit Configuration
AGGREGATION_TIMEOUT_MS = float(os.getenv("AGGREGATION_TIMEOUT_MS", "2.0"))
HOUSEKEEPING_TICK_US = int(os.getenv("HOUSEKEEPING_TICK_US", "100"))
FINALIZE_GRACE_MS = float(os.getenv("FINALIZE_GRACE_MS", "6.0"))
DECISION_THRESHOLD = float(os.getenv("DECISION_THRESHOLD", "0.5"))

# Uplink Receiver Configuration
RING_CAPACITY_MS = int(os.getenv("RING_CAPACITY_MS", "64"))
UPSAMPLE_FACTOR = int(os.getenv("UPSAMPLE_FACTOR", "32"))
DETECTION_THRESHOLD_DB = float(os.getenv("DETECTION_THRESHOLD_DB", "3.0"))
WIDEBAND_FFT_SIZE = int(os.getenv("WIDEBAND_FFT_SIZE", "8192"))
FRONT_ENDS = ("synthetic", "wideband")

# Scheduler Configuration
PUCCH_SPLIT_PROBABILITY = float(os.getenv("PUCCH_SPLIT_PROBABILITY", "0.3"))
RAR_DELAY_MIN = int(os.getenv("RAR_DELAY_MIN", "3"))
RAR_DELAY_MAX = int(os.getenv("RAR_DELAY_MAX", "13"))

# Channel Configuration
PATH_LOSS_EXPONENT = float(os.getenv("PATH_LOSS_EXPONENT", "3.0"))
SHADOWING_SIGMA_DB = float(os.getenv("SHADOWING_SIGMA_DB", "4.0"))
FRONT_TO_BACK_DB = float(os.getenv("FRONT_TO_BACK_DB", "25.0"))
NOISE_FLOOR_DBM_PER_RE = float(os.getenv("NOISE_FLOOR_DBM_PER_RE", "-127.0"))  # kTB over 15 kHz plus 5 dB NF
FULL_SCALE_DBM_PER_RE = float(os.getenv("FULL_SCALE_DBM_PER_RE", "-60.0"))
INTERFERENCE_PROBABILITY = float(os.getenv("INTERFERENCE_PROBABILITY", "0.1"))

# UE Configuration
UE_P0_DBM = float(os.getenv("UE_P0_DBM", "-80.0"))
UE_ALPHA = float(os.getenv("UE_ALPHA", "0.8"))
UE_MAX_POWER_DBM = float(os.getenv("UE_MAX_POWER_DBM", "23.0"))
MEAN_ARRIVAL_GAP_MS = float(os.getenv("MEAN_ARRIVAL_GAP_MS", "4.0"))

# Run Configuration
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "7"))
DEFAULT_SCENARIO = os.getenv(
    "DEFAULT_SCENARIO",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios", "default_scenario.json"),
)

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Settings:
    # Application
    APP_NAME = "Intensity of Dependency Toolkit"
    APP_VERSION = "1.0.0"
    APP_DESCRIPTION = "Predicts the intensity of dependency between microservices from span logs"

    # Status generation (bin size tau, in seconds)
    BIN_SIZE_SEC = int(os.getenv("AID_BIN_SIZE_SEC", "60"))
    SMOOTH_WINDOW = int(os.getenv("AID_SMOOTH_WINDOW", "1"))

    # Resource guard on the number of bins per series
    MAX_BINS = int(os.getenv("AID_MAX_BINS", "10000000"))

    # Dynamic status warping
    RTT_US = int(os.getenv("AID_RTT_US", "0"))
    MAX_DRIFT_BINS = int(os.getenv("AID_MAX_DRIFT_BINS", "1"))

    # Evaluation
    CE_EPSILON = float(os.getenv("AID_CE_EPSILON", "1e-12"))

    # Parallel similarity stage, 0 means all cores
    JOBS = int(os.getenv("AID_JOBS", "0"))

    # Logging
    LOG_LEVEL = os.getenv("AID_LOG_LEVEL", "INFO")
    LOG_FORMAT = os.getenv("AID_LOG_FORMAT", "console")

settings = Settings()
